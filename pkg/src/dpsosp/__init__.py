"""Differentially private SGD on finite sums, with saddle-escape diagnostics.

Submodules:

- ``problem``: regularity constants, oracles and oracle checks
- ``testbed``: quadratic and quartic strict-saddle problems with known ground truth
- ``privacy``: gradient bound, noise calibration and plan resolution
- ``optimizer``: clipped and unclipped DP-SGD runs
- ``sosp``: stationarity checks, the eigensolver and private selection
- ``analysis``: coupling, escape statistics and audits
- ``harness``: configuration, trace files, experiment drivers and the CLI
"""

from .errors import (BudgetError, DivergenceError, DpsospError, InputError, OracleError, ParseError,
                     PreconditionError, ResolutionError, TraceFormatError)
from .optimizer import RunTrace, clip_gradient, dpsgd_step, run, run_many, sample_minibatch
from .privacy import (Constants, NoisePlan, PrivacyBudget, gaussian_scale, gradient_bound, laplace_scales,
                      nsg_floor, resolve_plan, verify_plan)
from .problem import OracleSet, Problem, ProblemSpec, minibatch_gradient, verify_oracle_consistency
from .sosp import EigParams, SospReport, check_sosp, laplace_draw, min_eigenvalue, private_select
from .testbed import PRESETS, make_preset, make_quadratic, make_quartic

__version__ = "0.1.0"
