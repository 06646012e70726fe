"""Target models: prior and likelihood with gradients, and the tempered potential.

A model returns the prior and likelihood contributions separately so the
inverse temperature can be changed without evaluating the model again.
All arrays carry the parameter dimension last and may have arbitrary leading
batch dimensions, so one call can evaluate a whole particle population.
"""
import threading
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Evaluation",
    "EvaluationError",
    "TemperedModel",
    "CountingModel",
    "tempered_potential",
    "tempered_gradient",
]


class EvaluationError(ValueError):
    """Raised when a model evaluation produces unusable values."""


@dataclass(frozen=True)
class Evaluation:
    """Log prior, log likelihood and their gradients at one or many points.

    Log densities may be ``-inf`` at zero-density points. Gradients are only
    required to be finite where both log densities are finite.
    """

    log_prior: np.ndarray
    log_lik: np.ndarray
    grad_log_prior: np.ndarray
    grad_log_lik: np.ndarray

    def __getitem__(self, idx):
        return Evaluation(
            self.log_prior[idx],
            self.log_lik[idx],
            self.grad_log_prior[idx],
            self.grad_log_lik[idx],
        )

    def __len__(self):
        return len(self.log_prior)

    @classmethod
    def concatenate(cls, evals):
        return cls(
            np.concatenate([e.log_prior for e in evals]),
            np.concatenate([e.log_lik for e in evals]),
            np.concatenate([e.grad_log_prior for e in evals]),
            np.concatenate([e.grad_log_lik for e in evals]),
        )

    def where(self, mask, other):
        """Take entries from ``other`` where ``mask`` is true (batch axis 0)."""
        m = np.asarray(mask)
        return Evaluation(
            np.where(m, other.log_prior, self.log_prior),
            np.where(m, other.log_lik, self.log_lik),
            np.where(m[..., None], other.grad_log_prior, self.grad_log_prior),
            np.where(m[..., None], other.grad_log_lik, self.grad_log_lik),
        )


class TemperedModel:
    """Base class for targets of the form ``p(x) p(y|x)**lam``.

    Subclasses set ``dim`` and implement :meth:`evaluate` for an array of
    points with shape ``(..., dim)``. Implementations must be deterministic
    and free of side effects so they can be called from several threads.
    """

    dim: int

    def evaluate(self, x):
        raise NotImplementedError

    def sample_prior(self, rng, n):
        """Draw ``n`` points from the prior, returned as an ``(n, dim)`` array."""
        raise NotImplementedError

    def potential(self, x, lam):
        return tempered_potential(self.evaluate(x), lam)

    def gradient(self, x, lam):
        return tempered_gradient(self.evaluate(x), lam)


class CountingModel(TemperedModel):
    """Wraps a model and counts how many points it has evaluated."""

    def __init__(self, model):
        self.model = model
        self.dim = model.dim
        self.count = 0
        self._lock = threading.Lock()

    def evaluate(self, x):
        x = np.asarray(x)
        n = int(np.prod(x.shape[:-1], dtype=int))
        with self._lock:
            self.count += n
        return self.model.evaluate(x)

    def sample_prior(self, rng, n):
        return self.model.sample_prior(rng, n)


def _scale(lam, values):
    # 0 * -inf must stay 0 so that lam = 0 is exactly the prior
    values = np.asarray(values, dtype=float)
    if np.ndim(lam) == 0 and lam == 0.0:
        return np.zeros_like(values)
    return lam * values


def tempered_potential(ev, lam):
    """Return ``-log_prior - lam * log_lik``; -inf densities give +inf."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return -np.asarray(ev.log_prior, dtype=float) - _scale(lam, ev.log_lik)


def tempered_gradient(ev, lam):
    """Return ``-grad_log_prior - lam * grad_log_lik``.

    Raises :class:`EvaluationError` if any gradient component is not finite.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    gp = np.asarray(ev.grad_log_prior, dtype=float)
    gl = np.asarray(ev.grad_log_lik, dtype=float)
    if not (np.all(np.isfinite(gp)) and np.all(np.isfinite(gl))):
        raise EvaluationError("non-finite gradient component in evaluation")
    return -gp - lam * gl
