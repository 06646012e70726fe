"""Metropolis-adjusted Langevin kernels, plain and quasi-Newton preconditioned.

Both kernels share one move: with preconditioner ``Sigma = S S^T``

    x' = x - eps * Sigma grad U(x) + sqrt(2 eps) S xi,

accepted with the Metropolis-Hastings probability. The plain kernel is the
case ``S = I``. For the quasi-Newton kernel ``S`` comes from the L-BFGS
factors built from each particle's own trajectory, and the same factors are
used for the forward and the reverse proposal density, so their normalising
constants cancel in the acceptance ratio.
"""
from dataclasses import dataclass, replace

import numpy as np

from . import lbfgs
from .ensemble import Particles, weighted_diag_variance
from .model import tempered_potential

__all__ = [
    "MALA",
    "QN_MALA",
    "KernelState",
    "StepNoise",
    "MoveResult",
    "mala_propose",
    "mala_log_density",
    "qn_propose",
    "qn_log_density",
    "preconditioner",
    "metropolis_move",
    "mh_step",
    "adapt_stepsize",
]

MALA = "mala"
QN_MALA = "qn_mala"
INIT_STRATEGIES = ("identity", "ensemble_diag")
VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class KernelState:
    """Stepsize plus the tuning constants of both kernels."""

    epsilon: float = 0.1
    alpha_star: float = 0.8
    delta: float = 1.0
    memory: int = 20
    omega: float = 1.0
    init_strategy: str = "identity"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.alpha_star < 1:
            raise ValueError(f"alpha_star must lie in (0, 1), got {self.alpha_star}")
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.memory < 0:
            raise ValueError(f"memory must be nonnegative, got {self.memory}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"init_strategy must be one of {INIT_STRATEGIES}")


@dataclass(frozen=True)
class StepNoise:
    """Standard normal ``xi`` of shape ``(n, d)`` and uniforms ``u`` of shape ``(n,)``."""

    xi: np.ndarray
    u: np.ndarray

    @classmethod
    def draw(cls, rng, n, d):
        return cls(rng.standard_normal((n, d)), rng.random(n))

    def __getitem__(self, idx):
        return StepNoise(self.xi[idx], self.u[idx])


@dataclass
class MoveResult:
    particles: Particles
    proposed: np.ndarray
    accepted: np.ndarray
    accept_prob: np.ndarray


def mala_propose(x, grad_u, epsilon, rng):
    """Draw from ``N(x - eps * grad_u, 2 eps I)``."""
    x = np.asarray(x, dtype=float)
    xi = rng.standard_normal(x.shape)
    return x + (np.sqrt(2 * epsilon) * xi - epsilon * np.asarray(grad_u))


def mala_log_density(x_to, x_from, grad_u_from, epsilon):
    """Log density of ``N(x_to | x_from - eps * grad_u_from, 2 eps I)``."""
    r = np.asarray(x_to) - (np.asarray(x_from) - epsilon * np.asarray(grad_u_from))
    d = r.shape[-1]
    return -0.5 * d * np.log(4 * np.pi * epsilon) - np.sum(r * r, axis=-1) / (4 * epsilon)


def qn_propose(x, grad_u, factors, epsilon, rng):
    """Draw from ``N(x - eps * Sigma grad_u, 2 eps Sigma)`` with ``Sigma = B^-1``."""
    x = np.asarray(x, dtype=float)
    xi = rng.standard_normal(x.shape)
    eta = lbfgs.apply_S_T(factors, grad_u)
    return x + lbfgs.apply_S(factors, np.sqrt(2 * epsilon) * xi - epsilon * eta)


def qn_log_density(x_to, x_from, grad_u_from, factors, epsilon):
    """Log density of the preconditioned proposal, using ``Sigma^-1 = C C^T``."""
    mean = np.asarray(x_from) - epsilon * lbfgs.apply_B_inv(factors, grad_u_from)
    z = lbfgs.apply_C_T(factors, np.asarray(x_to) - mean)
    d = z.shape[-1]
    return (-0.5 * d * np.log(4 * np.pi * epsilon) + 0.5 * factors.log_det_B
            - np.sum(z * z, axis=-1) / (4 * epsilon))


def _potential_and_gradient(ev, lam):
    # proposals may land where the model is undefined; those must be rejected,
    # not raised, so non-finite values are masked instead
    u = tempered_potential(ev, lam)
    g = -ev.grad_log_prior - lam * ev.grad_log_lik
    ok = np.isfinite(u) & np.all(np.isfinite(g), axis=-1)
    return np.where(ok, u, np.inf), np.where(ok[:, None], g, 0.0), ok


def preconditioner(particles, lam, state, init_diag=None):
    """L-BFGS factors for every particle from its trajectory at temperature ``lam``.

    ``init_diag`` is the diagonal of the initial Hessian guess (identity when
    omitted); it may be shared, shape ``(d,)``, or per particle.
    """
    s, y, valid = particles.history.pairs(lam)
    if init_diag is None:
        init_diag = np.ones(particles.x.shape[1])
    # a numerically broken pair costs that particle one pair, not the whole run
    return lbfgs.build_factors(s, y, init_diag, state.omega, valid, drop_breakdown=True)


def ensemble_init_diag(x, weights):
    """Inverse of the weighted marginal variances, variances floored at 1e-8."""
    return 1.0 / np.maximum(weighted_diag_variance(x, weights), VARIANCE_FLOOR)


def metropolis_move(particles, model, lam, epsilon, noise, factors=None):
    """One Metropolis-adjusted Langevin move of every particle.

    ``factors`` selects the preconditioner (``None`` means identity). The
    model is evaluated once per particle, at the proposed points.
    """
    x = particles.x
    u0, g0, _ = _potential_and_gradient(particles.ev, lam)
    if factors is None:
        def fwd(z):
            return z
        back = fwd
    else:
        def fwd(z):
            return lbfgs.apply_S(factors, z)

        def back(z):
            return lbfgs.apply_S_T(factors, z)

    root = np.sqrt(2 * epsilon)
    eta0 = back(g0)
    step = root * noise.xi - epsilon * eta0
    proposed = x + fwd(step)

    # proposals far in the tails may overflow; such values are masked and rejected
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ev1 = model.evaluate(proposed)
        u1, g1, ok = _potential_and_gradient(ev1, lam)
        eta1 = back(g1)
        # whitened residuals: C^T (x' - mean_fwd) = root * xi and
        # C^T (x - mean_rev) = eps * (eta0 + eta1) - root * xi
        fwd_res = root * noise.xi
        rev_res = epsilon * (eta0 + eta1) - root * noise.xi
        log_ratio = (u0 - u1) + (np.sum(fwd_res * fwd_res, axis=-1)
                                 - np.sum(rev_res * rev_res, axis=-1)) / (4 * epsilon)
    log_ratio = np.where(ok & np.isfinite(log_ratio), log_ratio, -np.inf)
    accept_prob = np.exp(np.minimum(log_ratio, 0.0))
    accepted = noise.u < accept_prob

    new_x = np.where(accepted[:, None], proposed, x)
    new_ev = particles.ev.where(accepted, ev1)
    history = particles.history.append(accepted, proposed, ev1)
    return MoveResult(Particles(new_x, new_ev, history), proposed, accepted, accept_prob)


def mh_step(particles, model, lam, kernel, state, noise, init_diag=None):
    """Propose, evaluate once, accept or reject, for a batch of particles.

    ``kernel`` is ``"mala"`` or ``"qn_mala"``. Accepted points are appended to
    each particle's trajectory; rejected particles keep theirs unchanged.
    """
    if kernel == MALA:
        factors = None
    elif kernel == QN_MALA:
        factors = preconditioner(particles, lam, state, init_diag)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return metropolis_move(particles, model, lam, state.epsilon, noise, factors)


def adapt_stepsize(epsilon, mean_accept, state):
    """Robbins-Monro update ``log eps += delta * (mean_accept - alpha_star)``."""
    return float(np.exp(np.log(epsilon) + state.delta * (mean_accept - state.alpha_star)))


def with_epsilon(state, epsilon):
    return replace(state, epsilon=epsilon)
