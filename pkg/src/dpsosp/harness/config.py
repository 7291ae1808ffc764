"""Experiment configuration files.

The format is INI-like::

    # comments and blank lines are ignored
    [problem]
    preset = quartic-10d
    n = 2000                 # any preset parameter may be overridden

    [budget]
    epsilon = 2
    delta = 0.01             # default
    batch_size = 100         # default

    [run]
    mode = no-clip           # or clip
    seeds = 0-9              # list "0,1,5" or inclusive range "0-9"
    start = auto             # auto | saddle | random

    [constants]
    c_iters = 4

    [output]
    dir = out

Every error names the offending line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from ..errors import InputError, ParseError
from ..privacy import Constants, PrivacyBudget
from ..testbed import PRESETS, make_preset

START_MODES = ("auto", "saddle", "random")


@dataclass
class ExperimentConfig:
    preset: str
    overrides: dict
    budget: PrivacyBudget
    mode: str = "no-clip"
    seeds: list = field(default_factory=lambda: [0])
    constants: Constants = field(default_factory=Constants)
    outputs: str = "out"
    start: str = "auto"
    steps: Optional[int] = None
    halve_delta: bool = False
    no_nsg: bool = False

    def problem(self):
        return make_preset(self.preset, **self.overrides)

    def with_budget(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, budget=dataclasses.replace(self.budget, **kw))


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _seeds(text: str) -> list:
    seeds = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


_PROBLEM_TYPES = {"eigs": _floats, "pos_eigs": _floats, "sigma": _float, "n": _int, "seed": _int,
                  "clamp_radius": _float, "gamma": _float, "a": _float}

_SCHEMA = {
    "budget": {"epsilon": _float, "delta": _float, "batch_size": _int, "halve_delta": _bool,
               "no_nsg": _bool},
    "run": {"mode": _choice(("clip", "no-clip")), "seeds": _seeds, "start": _choice(START_MODES),
            "steps": _int},
    "constants": {f.name: _float for f in dataclasses.fields(Constants)},
    "output": {"dir": str},
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration; see the module docstring for the format."""
    section = None
    values: dict = {}
    lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("malformed section header", lineno)
            section = line[1:-1].strip()
            if section != "problem" and section not in _SCHEMA:
                raise ParseError(f"unknown section [{section}]", lineno)
            if section in values:
                raise ParseError(f"duplicate section [{section}]", lineno)
            values[section] = {}
            continue
        if section is None:
            raise ParseError("key outside any section", lineno)
        if "=" not in line:
            raise ParseError("expected key = value", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno)
        if key in values[section]:
            raise ParseError(f"duplicate key {key!r} (first set on line {lines[section, key]})", lineno)
        if section == "problem":
            parser = str if key == "preset" else _PROBLEM_TYPES.get(key)
        else:
            parser = _SCHEMA[section].get(key)
        if parser is None:
            raise ParseError(f"unknown key {key!r} in [{section}]", lineno)
        try:
            values[section][key] = parser(value)
        except ValueError as exc:
            raise ParseError(f"bad value for {key!r}: {exc}", lineno) from None
        lines[section, key] = lineno

    last = len(text.splitlines())
    problem = dict(values.get("problem", {}))
    if "preset" not in problem:
        raise ParseError("missing required key 'preset' in [problem]", last)
    preset = problem.pop("preset")
    if preset not in PRESETS:
        raise ParseError(f"unknown preset {preset!r}", lines.get(("problem", "preset"), last))
    for key in problem:
        if key not in PRESETS[preset]:
            raise ParseError(f"preset {preset!r} has no parameter {key!r}", lines["problem", key])

    budget = values.get("budget", {})
    if "epsilon" not in budget:
        raise ParseError("missing required key 'epsilon' in [budget]", last)
    try:
        privacy = PrivacyBudget(budget["epsilon"], budget.get("delta", 0.01), budget.get("batch_size", 100))
    except InputError as exc:
        raise ParseError(str(exc), lines.get(("budget", "epsilon"), last)) from None
    run = values.get("run", {})
    seeds = run.get("seeds", [0])
    if not seeds or len(set(seeds)) != len(seeds) or min(seeds) < 0:
        raise ParseError("seeds must be a nonempty list of distinct nonnegative integers",
                         lines.get(("run", "seeds"), last))
    try:
        constants = Constants().with_overrides(**values.get("constants", {}))
    except InputError as exc:
        raise ParseError(str(exc), last) from None
    return ExperimentConfig(
        preset=preset,
        overrides=problem,
        budget=privacy,
        mode=run.get("mode", "no-clip"),
        seeds=seeds,
        constants=constants,
        outputs=values.get("output", {}).get("dir", "out"),
        start=run.get("start", "auto"),
        steps=run.get("steps"),
        halve_delta=budget.get("halve_delta", False),
        no_nsg=budget.get("no_nsg", False),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
