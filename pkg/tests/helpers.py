"""Hand-built plans for tests that need exact control over the step."""

from dpsosp.privacy import NoisePlan


def manual_plan(eta, gauss_std=0.0, T=10, B=1, n=1, C=1e6, alpha=0.1, d=1, sigma=0.0, **kw):
    return NoisePlan(grad_bound=C, gauss_std=gauss_std, step_size=eta, iterations=T, alpha=alpha,
                     total_noise_var=d * gauss_std ** 2 + sigma ** 2 / B, escape_iters=kw.pop("escape_iters", None),
                     escape_radius=None, escape_drop=None, batch_size=B, n_components=n, **kw)
