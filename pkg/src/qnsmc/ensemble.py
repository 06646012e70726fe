"""Weighted particle populations.

Weights are kept as normalised log weights. The population also carries each
particle's recent trajectory (accepted points and gradient components), which
is all the quasi-Newton kernel needs to build its preconditioner.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .model import Evaluation

__all__ = [
    "DegenerateWeightsError",
    "History",
    "Particles",
    "Ensemble",
    "ess",
    "log_ess",
    "normalise_log_weights",
    "incremental_log_weights",
    "reweight",
    "multinomial_resample",
    "weighted_moments",
    "weighted_diag_variance",
    "gaussian_kl",
]


class DegenerateWeightsError(ValueError):
    """All importance weights are zero (or underflowed to zero)."""


@dataclass
class History:
    """Bounded per-particle trajectory buffers.

    ``x``, ``grad_prior`` and ``grad_lik`` have shape ``(n, capacity, d)``.
    The newest entry sits in the last slot and ``length[i]`` counts how many
    trailing slots of particle ``i`` are valid.
    """

    x: np.ndarray
    grad_prior: np.ndarray
    grad_lik: np.ndarray
    length: np.ndarray

    @classmethod
    def start(cls, x, ev, capacity):
        n, d = x.shape
        buf = np.zeros((3, n, capacity, d))
        buf[0, :, -1] = x
        buf[1, :, -1] = ev.grad_log_prior
        buf[2, :, -1] = ev.grad_log_lik
        return cls(buf[0], buf[1], buf[2], np.ones(n, dtype=int))

    @property
    def capacity(self):
        return self.x.shape[1]

    def __getitem__(self, idx):
        return History(self.x[idx], self.grad_prior[idx], self.grad_lik[idx], self.length[idx])

    def __len__(self):
        return len(self.length)

    @classmethod
    def concatenate(cls, parts):
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("x", "grad_prior", "grad_lik", "length")))

    def append(self, mask, x, ev):
        """Return a new history with ``(x, gradients)`` pushed where ``mask`` holds."""
        mask = np.asarray(mask, dtype=bool)
        new = History(self.x.copy(), self.grad_prior.copy(), self.grad_lik.copy(),
                      self.length.copy())
        if self.capacity == 0 or not mask.any():
            return new
        for buf, val in ((new.x, x), (new.grad_prior, ev.grad_log_prior),
                         (new.grad_lik, ev.grad_log_lik)):
            buf[mask, :-1] = buf[mask, 1:]
            buf[mask, -1] = val[mask]
        new.length[mask] = np.minimum(new.length[mask] + 1, self.capacity)
        return new

    def pairs(self, lam):
        """Displacement and potential-gradient-difference pairs at temperature ``lam``.

        Returns ``(s, y, valid)`` with ``s, y`` of shape ``(n, capacity - 1, d)``
        ordered oldest to newest, and ``valid`` flagging slots backed by two
        recorded trajectory points.
        """
        s = np.diff(self.x, axis=1)
        y = -np.diff(self.grad_prior, axis=1) - lam * np.diff(self.grad_lik, axis=1)
        m = self.capacity - 1
        slot = np.arange(m)
        valid = slot[None, :] >= (self.capacity - self.length)[:, None]
        s = np.where(valid[..., None], s, 0.0)
        y = np.where(valid[..., None], y, 0.0)
        return s, y, valid


@dataclass
class Particles:
    """Particle positions with their cached evaluations and trajectories."""

    x: np.ndarray
    ev: Evaluation
    history: History

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, idx):
        return Particles(self.x[idx], self.ev[idx], self.history[idx])

    @classmethod
    def concatenate(cls, parts):
        return cls(np.concatenate([p.x for p in parts]),
                   Evaluation.concatenate([p.ev for p in parts]),
                   History.concatenate([p.history for p in parts]))


@dataclass
class Ensemble:
    """A weighted population at inverse temperature ``lam``.

    ``log_weights`` are normalised (``logsumexp == 0``) and ``log_evidence``
    is the running log normalising-constant estimate.
    """

    particles: Particles
    log_weights: np.ndarray
    log_evidence: float
    lam: float

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def x(self):
        return self.particles.x

    @property
    def n(self):
        return len(self.particles)

    @property
    def dim(self):
        return self.particles.x.shape[1]


def ess(weights):
    """Effective sample size ``(sum w)**2 / sum w**2`` of unnormalised weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightsError("all weights are zero")
    w = w / w.max()
    return float(w.sum() ** 2 / np.sum(w ** 2))


def log_ess(log_weights):
    """ESS computed from unnormalised log weights without leaving log space."""
    lw = np.asarray(log_weights, dtype=float)
    top = np.max(lw)
    if not np.isfinite(top):
        raise DegenerateWeightsError("all weights are zero")
    return float(np.exp(2 * logsumexp(lw) - logsumexp(2 * lw)))


def normalise_log_weights(log_weights):
    """Return ``(normalised log weights, log normaliser)``."""
    lw = np.asarray(log_weights, dtype=float)
    if not np.isfinite(np.max(lw)):
        raise DegenerateWeightsError("all weights underflowed to zero")
    log_z = logsumexp(lw)
    return lw - log_z, float(log_z)


def incremental_log_weights(log_lik, dlam):
    ll = np.asarray(log_lik, dtype=float)
    # zero likelihood stays zero weight; never produce nan from 0 * -inf
    return np.where(np.isneginf(ll), -np.inf, dlam * np.where(np.isneginf(ll), 0.0, ll))


def reweight(ens, lam_new):
    """Move the weights from ``ens.lam`` to ``lam_new`` and accumulate evidence.

    The increment added to ``log_evidence`` is
    ``log sum_i w_i exp((lam_new - lam) * log_lik_i)`` with normalised ``w``.
    """
    if not ens.lam < lam_new <= 1.0:
        raise ValueError(f"lambda must increase within (lam, 1]; got {ens.lam} -> {lam_new}")
    lw = ens.log_weights + incremental_log_weights(ens.particles.ev.log_lik, lam_new - ens.lam)
    lw, log_inc = normalise_log_weights(lw)
    return replace(ens, log_weights=lw, log_evidence=ens.log_evidence + log_inc, lam=lam_new), log_inc


def multinomial_resample(ens, rng):
    """Draw ``n`` particles with replacement by weight; reset weights to ``1/n``.

    Whole particles are copied, including cached evaluations and histories.
    """
    n = ens.n
    w = ens.weights
    idx = rng.choice(n, size=n, p=w / w.sum())
    return replace(ens, particles=ens.particles[idx],
                   log_weights=np.full(n, -np.log(n)))


def weighted_moments(x, weights):
    """Weighted mean and covariance (no small-sample correction)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = w @ x
    centred = x - mean
    cov = (centred * w[:, None]).T @ centred
    return mean, cov


def weighted_diag_variance(x, weights):
    """Diagonal of :func:`weighted_moments` covariance, without forming it."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = w @ x
    return w @ (x - mean) ** 2


def gaussian_kl(m1, c1, m2, c2):
    """KL(N(m1, c1) || N(m2, c2)) for symmetric positive definite covariances.

    Raises ``numpy.linalg.LinAlgError`` if either covariance is not positive
    definite.
    """
    m1, m2 = np.atleast_1d(m1).astype(float), np.atleast_1d(m2).astype(float)
    c1, c2 = np.atleast_2d(c1).astype(float), np.atleast_2d(c2).astype(float)
    l1 = np.linalg.cholesky(c1)
    l2 = np.linalg.cholesky(c2)
    d = m1.size
    # tr(c2^-1 c1) = ||l2^-1 l1||_F^2
    a = np.linalg.solve(l2, l1)
    b = np.linalg.solve(l2, m2 - m1)
    logdet1 = 2 * np.sum(np.log(np.diag(l1)))
    logdet2 = 2 * np.sum(np.log(np.diag(l2)))
    kl = 0.5 * (np.sum(a * a) + b @ b - d + logdet2 - logdet1)
    return float(max(kl, 0.0))
