"""Limited-memory BFGS in square-root form.

The Hessian approximation ``B`` is held as ``B = C C^T`` and its inverse as
``B^-1 = S S^T`` where ``C`` and ``S`` are a diagonal initial factor followed
by a chain of rank-one updates ``(I - u t^T)`` and ``(I - p q^T)``. Each pair
of displacement ``s`` and gradient difference ``y`` contributes one update, so
products with ``C``, ``C^T``, ``S`` and ``S^T`` cost ``O(m d)`` and no ``d x d``
matrix is ever formed.

Every function accepts arbitrary leading batch dimensions: pairs have shape
``(..., m, d)`` and the diagonal initialisation ``(..., d)`` (broadcast
against the pairs). Pair slots flagged invalid contribute an identity factor.
"""
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FactorError",
    "LbfgsFactors",
    "adjust_pairs",
    "build_factors",
    "apply_C",
    "apply_C_T",
    "apply_S",
    "apply_S_T",
    "apply_B",
    "apply_B_inv",
]


class FactorError(np.linalg.LinAlgError):
    """A curvature product ``s^T y`` was not positive after the shift."""


def _inner(a, b):
    return np.einsum("...i,...i->...", a, b)


@dataclass(frozen=True)
class LbfgsFactors:
    """Precomputed rank-one vectors of the square-root recursion.

    ``diag`` is the diagonal of the initial Hessian guess. ``u, t, p, q`` have
    shape ``(..., m, d)`` ordered oldest to newest. ``beta`` is the curvature
    shift that was applied and ``log_det_B`` the log determinant of ``B``.
    """

    diag: np.ndarray
    u: np.ndarray
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    beta: np.ndarray
    log_det_B: np.ndarray

    @property
    def memory(self):
        return self.u.shape[-2]

    @property
    def dim(self):
        return self.diag.shape[-1]


def _valid_mask(s, valid):
    nonzero = np.any(s != 0.0, axis=-1)
    if valid is None:
        return nonzero
    return np.asarray(valid, dtype=bool) & nonzero


def adjust_pairs(s, y, diag, omega, valid=None):
    """Shift gradient differences so every curvature product is bounded below.

    Sets ``beta = max(0, max_r(-s_r^T y_r / s_r^T B0 s_r) + omega)`` over the
    valid pairs and returns ``(y + beta * B0 s, beta)``. Afterwards
    ``s_r^T y_r >= omega * s_r^T B0 s_r`` for every valid pair.
    """
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    diag = np.asarray(diag, dtype=float)
    valid = _valid_mask(s, valid)
    b0s = diag[..., None, :] * s
    sbs = _inner(s, b0s)
    sy = _inner(s, y)
    ratio = np.where(valid, -sy / np.where(valid, sbs, 1.0), -np.inf)
    beta = np.maximum(0.0, np.max(ratio, axis=-1, initial=-np.inf) + omega)
    y_adj = y + beta[..., None, None] * b0s
    return y_adj, beta


def _chain_C(u, t, sqrt_diag, z, upto):
    v = sqrt_diag * z
    for r in range(upto):
        v = v - u[..., r, :] * _inner(t[..., r, :], v)[..., None]
    return v


def _chain_C_T(u, t, sqrt_diag, z, upto):
    v = z
    for r in reversed(range(upto)):
        v = v - t[..., r, :] * _inner(u[..., r, :], v)[..., None]
    return sqrt_diag * v


def build_factors(s, y, diag, omega, valid=None, drop_breakdown=False):
    """Build the square-root factors from pairs ordered oldest to newest.

    Applies the shift of :func:`adjust_pairs`, then runs the recursion. The products
    ``w_r = B_r s_r`` follow from ``B_r = B_0 + sum_{j<r} (y_j y_j^T / c_j -
    w_j w_j^T / a_j)``; each ``w_r`` is kept as coefficients over ``B_0 s_j``
    and ``y_j`` so the recursion runs on ``m x m`` Gram matrices and only two
    batched products touch vectors of length ``d``.

    A slot whose curvature products come out non-positive in floating point
    raises :class:`FactorError`, unless ``drop_breakdown`` is set; then that
    slot is excluded for the affected factor sets only and the build restarts.
    """
    s = np.asarray(s, dtype=float)
    diag = np.asarray(diag, dtype=float)
    if np.any(diag <= 0):
        raise ValueError("initial Hessian diagonal must be strictly positive")
    y = y_in = np.asarray(y, dtype=float)
    valid = _valid_mask(s, valid)
    # zeroed slots (s = y = 0, a = c = 1) yield zero vectors, i.e. identity factors
    if not valid.all():
        s = np.where(valid[..., None], s, 0.0)
        y = np.where(valid[..., None], y, 0.0)

    shape = np.broadcast_shapes(s.shape, y.shape, diag[..., None, :].shape)
    s = np.broadcast_to(s, shape)
    diag = np.broadcast_to(diag, shape[:-2] + (shape[-1],))
    m = shape[-2]
    b0s = diag[..., None, :] * s
    st = np.swapaxes(s, -1, -2)
    g_bs = b0s @ st  # [j, r] = s_j^T B0 s_r
    g_ys = y @ st    # [j, r] = y_j^T s_r
    # same shift as adjust_pairs, applied to the Gram matrix as well
    sbs = np.diagonal(g_bs, axis1=-2, axis2=-1)
    sy = np.diagonal(g_ys, axis1=-2, axis2=-1)
    ratio = np.where(valid, -sy / np.where(valid, sbs, 1.0), -np.inf)
    beta = np.maximum(0.0, np.max(ratio, axis=-1, initial=-np.inf) + omega)
    if np.any(beta > 0):
        y = y + beta[..., None, None] * b0s
        g_ys = g_ys + beta[..., None, None] * g_bs
    y = np.broadcast_to(y, shape)
    coef_b = np.zeros(shape[:-2] + (m, m))
    coef_y = np.zeros(shape[:-2] + (m, m))
    a = np.ones(shape[:-1])
    c = np.ones(shape[:-1])
    for r in range(m):
        ok = valid[..., r]
        coef_b[..., r, r] = 1.0
        if r:
            ws = (np.einsum("...jk,...k->...j", coef_b[..., :r, :], g_bs[..., :, r])
                  + np.einsum("...jk,...k->...j", coef_y[..., :r, :], g_ys[..., :, r]))
            f_w = ws / a[..., :r]
            f_y = g_ys[..., :r, r] / c[..., :r]
            coef_b[..., r, :] -= np.einsum("...j,...jk->...k", f_w, coef_b[..., :r, :])
            coef_y[..., r, :] -= np.einsum("...j,...jk->...k", f_w, coef_y[..., :r, :])
            coef_y[..., r, :r] += f_y
        a_r = (np.einsum("...k,...k->...", coef_b[..., r, :], g_bs[..., :, r])
               + np.einsum("...k,...k->...", coef_y[..., r, :], g_ys[..., :, r]))
        c_r = g_ys[..., r, r]
        broken = ok & ~((a_r > 0) & (c_r > 0))
        if np.any(broken):
            if not drop_breakdown:
                raise FactorError("non-positive curvature product after shift")
            keep = np.array(np.broadcast_to(valid, shape[:-1]))
            keep[..., r] &= ~broken
            return build_factors(s, y_in, diag, omega, keep, drop_breakdown)
        a[..., r] = np.where(ok, a_r, 1.0)
        c[..., r] = np.where(ok, c_r, 1.0)
    w = coef_b @ b0s + coef_y @ y

    a_, c_ = a[..., None], c[..., None]
    t = s / a_
    u = np.sqrt(a_ / c_) * y + w
    p = s / c_
    q = np.sqrt(c_ / a_) * w + y
    # det(I - u t^T) = 1 - t^T u = -sqrt(c / a); B picks up its square
    log_det = np.sum(np.log(diag), axis=-1) + np.sum(np.where(valid, np.log(c / a), 0.0), axis=-1)
    return LbfgsFactors(np.array(diag), u, t, p, q, beta, log_det)


def _check(f, z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != f.dim:
        raise ValueError(f"vector has length {z.shape[-1]}, factors have dimension {f.dim}")
    return z


def apply_C(f, z):
    """``C z``: diagonal factor first, then the updates oldest to newest."""
    z = _check(f, z)
    return _chain_C(f.u, f.t, np.sqrt(f.diag), z, f.memory)


def apply_C_T(f, z):
    """``C^T z``: updates newest to oldest with roles of ``u`` and ``t`` swapped."""
    z = _check(f, z)
    return _chain_C_T(f.u, f.t, np.sqrt(f.diag), z, f.memory)


def apply_S(f, z):
    """``S z`` with ``S S^T = B^-1``."""
    z = _check(f, z)
    v = z / np.sqrt(f.diag)
    for r in range(f.memory):
        v = v - f.p[..., r, :] * _inner(f.q[..., r, :], v)[..., None]
    return v


def apply_S_T(f, z):
    """``S^T z``."""
    z = _check(f, z)
    v = z
    for r in reversed(range(f.memory)):
        v = v - f.q[..., r, :] * _inner(f.p[..., r, :], v)[..., None]
    return v / np.sqrt(f.diag)


def apply_B(f, z):
    return apply_C(f, apply_C_T(f, z))


def apply_B_inv(f, z):
    return apply_S(f, apply_S_T(f, z))
