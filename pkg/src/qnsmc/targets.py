"""Built-in target models.

* :class:`AnisotropicGaussian`: zero-mean Gaussian with diagonal covariance,
  tempered from a standard normal reference.
* :class:`ConjugateGaussian`: normal prior and normal likelihood with a known
  evidence, used to check the normalising-constant estimate.
* :class:`GaussianMixture`: three-component univariate mixture with a
  hierarchical prior, sampled in an unconstrained space.
"""
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, gammaln, log_expit, logit, logsumexp

from .model import Evaluation, TemperedModel

__all__ = [
    "AnisotropicGaussian",
    "ConjugateGaussian",
    "GmmHyper",
    "GaussianMixture",
    "anisotropic_gaussian_model",
    "simplex_forward",
    "simplex_inverse",
    "gmm_model",
    "load_stamps",
    "StampsError",
    "STAMPS_COUNT",
]

LOG_2PI = math.log(2 * math.pi)
STAMPS_COUNT = 485


class AnisotropicGaussian(TemperedModel):
    """Target ``N(0, diag(scales**2))`` with reference prior ``N(0, I)``.

    The likelihood is the density ratio of target to reference, so the
    tempered target at ``lam = 1`` is exactly the Gaussian target.
    """

    def __init__(self, scales):
        self.scales = np.asarray(scales, dtype=float)
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        self.dim = self.scales.size
        self._prec = 1.0 / self.scales ** 2
        self._log_sigma = float(np.sum(np.log(self.scales)))

    @property
    def covariance(self):
        return np.diag(self.scales ** 2)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        sq = x * x
        log_prior = -0.5 * np.sum(sq, axis=-1) - 0.5 * self.dim * LOG_2PI
        log_lik = -0.5 * np.sum(sq * (self._prec - 1.0), axis=-1) - self._log_sigma
        return Evaluation(log_prior, log_lik, -x, -x * (self._prec - 1.0))

    def sample_prior(self, rng, n):
        return rng.standard_normal((n, self.dim))


def anisotropic_gaussian_model(d=100):
    """Target with standard deviations ``1/d, 2/d, ..., 1``."""
    if d < 1:
        raise ValueError("d must be at least 1")
    return AnisotropicGaussian(np.arange(1, d + 1) / d)


class ConjugateGaussian(TemperedModel):
    """Prior ``N(0, prior_var)``, one observation ``y ~ N(x, noise_var)``."""

    def __init__(self, y=1.0, prior_var=1.0, noise_var=1.0):
        self.y, self.prior_var, self.noise_var = float(y), float(prior_var), float(noise_var)
        self.dim = 1

    @property
    def log_evidence(self):
        v = self.prior_var + self.noise_var
        return -0.5 * (math.log(2 * math.pi * v) + self.y ** 2 / v)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        x0 = x[..., 0]
        r = self.y - x0
        log_prior = -0.5 * (LOG_2PI + math.log(self.prior_var) + x0 ** 2 / self.prior_var)
        log_lik = -0.5 * (LOG_2PI + math.log(self.noise_var) + r ** 2 / self.noise_var)
        return Evaluation(log_prior, log_lik, -x / self.prior_var, (self.y - x) / self.noise_var)

    def sample_prior(self, rng, n):
        return math.sqrt(self.prior_var) * rng.standard_normal((n, 1))


# stick-breaking simplex transform

def _stick_offsets(k):
    return np.log(1.0 / (k - np.arange(1, k)))


def simplex_forward(y):
    """Map ``K-1`` unconstrained reals to a point on the ``K``-simplex.

    Stick ``k`` breaks off the fraction ``logistic(y_k + log(1/(K-k)))`` of
    what is left, so the origin maps to the simplex centre. Returns
    ``(z, log_jacobian)`` where ``log_jacobian`` is the log absolute
    determinant of the map from ``y`` to the first ``K-1`` entries of ``z``.
    """
    log_z, _, log_jac, _ = _simplex_parts(np.asarray(y, dtype=float))
    return np.exp(log_z), log_jac


def simplex_inverse(z):
    """Inverse of :func:`simplex_forward` (the log Jacobian is not returned)."""
    z = np.asarray(z, dtype=float)
    k = z.shape[-1]
    left = 1.0 - np.concatenate([np.zeros(z.shape[:-1] + (1,)),
                                 np.cumsum(z[..., :-2], axis=-1)], axis=-1)
    frac = z[..., :-1] / left
    return logit(frac) - _stick_offsets(k)


def _simplex_parts(y):
    # fractions, log z and d log z_i / d y_j (shape (..., K, K-1)), grad of log jac
    k = y.shape[-1] + 1
    shifted = y + _stick_offsets(k)
    frac = expit(shifted)
    # log(f) and log(1 - f) stay finite when the logistic saturates
    log_frac = log_expit(shifted)
    log_rest = log_expit(-shifted)
    cum_rest = np.concatenate([np.zeros(y.shape[:-1] + (1,)), np.cumsum(log_rest, axis=-1)],
                              axis=-1)
    log_z = np.concatenate([cum_rest[..., :-1] + log_frac, cum_rest[..., -1:]], axis=-1)
    i = np.arange(k)[:, None]
    j = np.arange(k - 1)[None, :]
    # log z_i = sum_{j<i} log(1 - f_j) + [i < K-1] log f_i
    dlogz = np.where(j < i, -frac[..., None, :], 0.0) + np.where(j == i, 1.0 - frac[..., None, :], 0.0)
    # log jac = sum_k log f_k + log(1 - f_k) + sum_{j<k} log(1 - f_j)
    later = (k - 2) - np.arange(k - 1)
    grad_jac = 1.0 - 2.0 * frac - later * frac
    log_jac = np.sum(log_frac + log_rest + cum_rest[..., :-1], axis=-1)
    return log_z, dlogz, log_jac, grad_jac


@dataclass(frozen=True)
class GmmHyper:
    """Prior constants. Component precisions have a Gamma(alpha, rate=beta)
    prior and beta itself a Gamma(g, rate=h) prior."""

    a: float
    b: float
    alpha: float = 2.0
    g: float = 0.2
    h: float = 1.0
    k: int = 3

    def __post_init__(self):
        for name in ("b", "alpha", "g", "h"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k < 2:
            raise ValueError("need at least two components")

    @classmethod
    def from_data(cls, data, **overrides):
        """Data-scaled defaults: a = midrange, b = 1/R^2, alpha = 2, g = 0.2, h = 10/R^2."""
        data = np.asarray(data, dtype=float)
        r = float(data.max() - data.min())
        if not r > 0:
            raise ValueError("data must have a positive range")
        vals = dict(a=float(0.5 * (data.max() + data.min())), b=1.0 / r ** 2,
                    alpha=2.0, g=0.2, h=10.0 / r ** 2)
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**vals)


class GaussianMixture(TemperedModel):
    """Univariate K-component Gaussian mixture in unconstrained coordinates.

    Parameter layout: ``(mu_1..K, log nu_1..K, y_1..K-1, log beta)`` where
    ``nu`` are component precisions, ``y`` the stick-breaking coordinates of
    the weights and ``beta`` the rate of the precision prior. For ``K = 3``
    this is 9-dimensional. The prior includes the Jacobians of all transforms.
    """

    def __init__(self, data, hyper=None):
        self.data = np.asarray(data, dtype=float).ravel()
        if self.data.size == 0:
            raise ValueError("data must be nonempty")
        self.hyper = hyper if hyper is not None else GmmHyper.from_data(self.data)
        self.k = self.hyper.k
        self.dim = 3 * self.k
        k = self.k
        self._mu = slice(0, k)
        self._eta = slice(k, 2 * k)
        self._y = slice(2 * k, 3 * k - 1)
        self._zeta = 3 * k - 1
        hp = self.hyper
        self._const = (math.log(math.factorial(k - 1))  # flat Dirichlet density
                       + k * (0.5 * math.log(hp.b) - 0.5 * LOG_2PI - gammaln(hp.alpha))
                       + hp.g * math.log(hp.h) - gammaln(hp.g))

    def unpack(self, x):
        """Constrained parameters ``(mu, nu, z, beta)``."""
        x = np.asarray(x, dtype=float)
        z, _ = simplex_forward(x[..., self._y])
        return x[..., self._mu], np.exp(x[..., self._eta]), z, np.exp(x[..., self._zeta])

    def constrained(self, x):
        """``(mu_1..K, nu_1..K, z_1..K-1, beta)``, the natural parameter vector."""
        mu, nu, z, beta = self.unpack(x)
        return np.concatenate([mu, nu, z[..., :-1], beta[..., None]], axis=-1)

    def pack(self, mu, nu, z, beta):
        mu, nu, z = (np.asarray(v, dtype=float) for v in (mu, nu, z))
        beta = np.asarray(beta, dtype=float)
        return np.concatenate([mu, np.log(nu), simplex_inverse(z), np.log(beta)[..., None]],
                              axis=-1)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        hp = self.hyper
        mu = x[..., self._mu]
        eta = x[..., self._eta]
        zeta = x[..., self._zeta]
        nu = np.exp(eta)
        beta = np.exp(zeta)
        log_z, dlogz, log_jac, grad_jac = _simplex_parts(x[..., self._y])

        # prior, including log-Jacobians of the log and stick-breaking maps
        dev = mu - hp.a
        log_prior = (self._const - 0.5 * hp.b * np.sum(dev ** 2, axis=-1)
                     + self.k * hp.alpha * zeta + np.sum(hp.alpha * eta - beta[..., None] * nu,
                                                        axis=-1)
                     + hp.g * zeta - hp.h * beta + log_jac)
        gp = np.empty_like(x)
        gp[..., self._mu] = -hp.b * dev
        gp[..., self._eta] = hp.alpha - beta[..., None] * nu
        gp[..., self._y] = grad_jac
        gp[..., self._zeta] = self.k * hp.alpha + hp.g - beta * (np.sum(nu, axis=-1) + hp.h)

        # likelihood: sum_n log sum_i z_i N(y_n | mu_i, 1/nu_i)
        r = self.data[:, None] - mu[..., None, :]                    # (..., n, K)
        comp = (log_z + 0.5 * eta - 0.5 * LOG_2PI)[..., None, :] - 0.5 * nu[..., None, :] * r * r
        per_datum = logsumexp(comp, axis=-1)
        log_lik = np.sum(per_datum, axis=-1)
        resp = np.exp(comp - per_datum[..., None])
        counts = np.sum(resp, axis=-2)
        gl = np.empty_like(x)
        gl[..., self._mu] = nu * np.sum(resp * r, axis=-2)
        gl[..., self._eta] = 0.5 * counts - 0.5 * nu * np.sum(resp * r * r, axis=-2)
        gl[..., self._y] = np.einsum("...i,...ij->...j", counts, dlogz)
        gl[..., self._zeta] = 0.0
        return Evaluation(log_prior, log_lik, gp, gl)

    def sample_prior(self, rng, n):
        hp = self.hyper
        z = rng.dirichlet(np.ones(self.k), size=n)
        mu = hp.a + rng.standard_normal((n, self.k)) / math.sqrt(hp.b)
        beta = rng.gamma(hp.g, 1.0 / hp.h, size=n)
        nu = rng.gamma(hp.alpha, 1.0 / beta[:, None], size=(n, self.k))
        # guard against draws that underflow to zero in the log transforms
        tiny = np.finfo(float).tiny
        return self.pack(mu, np.maximum(nu, tiny), np.maximum(z, tiny), np.maximum(beta, tiny))


def gmm_model(data, hyper=None):
    return GaussianMixture(data, hyper)


class StampsError(ValueError):
    """The stamp thickness file is missing or malformed."""


def load_stamps(path, expected=STAMPS_COUNT):
    """Read stamp thicknesses (mm), one per line; ``#`` lines are comments.

    ``expected`` is the required number of values (``None`` skips the check).
    """
    path = Path(path)
    if not path.is_file():
        raise StampsError(f"stamp data file not found: {path}")
    values = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                v = float(text)
            except ValueError:
                raise StampsError(f"{path}:{lineno}: cannot parse {text!r} as a number") from None
            if not (math.isfinite(v) and v > 0):
                raise StampsError(f"{path}:{lineno}: thickness must be finite and positive, got {text!r}")
            values.append(v)
    if not values:
        raise StampsError(f"{path}: no data values")
    if expected is not None and len(values) != expected:
        raise StampsError(f"{path}: expected {expected} values, found {len(values)}")
    return np.array(values)
