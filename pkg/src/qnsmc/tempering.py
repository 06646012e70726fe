"""Adaptive choice of the next inverse temperature."""
from dataclasses import dataclass

import numpy as np

from .ensemble import log_ess, incremental_log_weights

__all__ = ["TemperConfig", "ConvergenceError", "ess_at", "solve_next_lambda"]


class ConvergenceError(RuntimeError):
    """Bisection did not reach the requested tolerance.

    ``best`` holds the iterate whose ESS was closest to the target.
    """

    def __init__(self, msg, best):
        super().__init__(msg)
        self.best = best


@dataclass(frozen=True)
class TemperConfig:
    rho: float = 0.95
    bisect_tol: float = 1e-4
    max_bisect_iters: int = 100

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.bisect_tol > 0:
            raise ValueError(f"bisect_tol must be positive, got {self.bisect_tol}")
        if self.max_bisect_iters < 1:
            raise ValueError("max_bisect_iters must be a positive integer")


def ess_at(log_liks, log_weights, lambda_prev, lam):
    """ESS of ``w * exp((lam - lambda_prev) * log_lik)`` using cached likelihoods."""
    return log_ess(log_weights + incremental_log_weights(log_liks, lam - lambda_prev))


def solve_next_lambda(log_liks, weights, lambda_prev, cfg, target_ess):
    """Bisect for the temperature in ``(lambda_prev, 1]`` whose ESS hits ``target_ess``.

    Returns 1.0 when the ESS at 1 is already at least ``target_ess``. Only the
    supplied log likelihoods are used; no model evaluations happen here.
    """
    if not 0.0 <= lambda_prev < 1.0:
        raise ValueError(f"lambda_prev must lie in [0, 1), got {lambda_prev}")
    w = np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    ll = np.asarray(log_liks, dtype=float)

    def f(lam):
        return ess_at(ll, lw, lambda_prev, lam)

    if f(1.0) >= target_ess:
        return 1.0
    lo, hi = lambda_prev, 1.0
    tol = cfg.bisect_tol * target_ess
    best, best_gap = hi, np.inf
    for _ in range(cfg.max_bisect_iters):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        gap = abs(val - target_ess)
        if gap < best_gap and mid > lambda_prev:
            best, best_gap = mid, gap
        if gap <= tol and mid > lambda_prev:
            return mid
        if val > target_ess:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(
        f"bisection for next lambda did not converge in {cfg.max_bisect_iters} "
        f"iterations (best ESS gap {best_gap:.3g})", best)
