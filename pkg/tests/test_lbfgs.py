import tracemalloc
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qnsmc import lbfgs
from qnsmc.lbfgs import (
    FactorError,
    adjust_pairs,
    apply_B,
    apply_B_inv,
    apply_C,
    apply_C_T,
    apply_S,
    apply_S_T,
    build_factors,
)

from conftest import dense_bfgs, dense_factor, random_pairs, shift_oracle

fixture_settings = settings(max_examples=500, derandomize=True, deadline=None)
fixtures = dict(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8), d=st.integers(1, 20))


def _dense(f):
    c = dense_factor(apply_C, f)
    s = dense_factor(apply_S, f)
    return c @ c.T, s @ s.T


# adjust_pairs

def test_shift_not_needed():
    y, beta = adjust_pairs([[1.0]], [[2.0]], [1.0], 1.0)
    assert beta == 0.0
    assert y[0, 0] == 2.0


def test_shift_repairs_negative_curvature():
    y, beta = adjust_pairs([[1.0]], [[-1.0]], [1.0], 1.0)
    assert beta == 2.0
    assert y[0, 0] == 1.0


def test_shift_identity_on_strongly_convex_pairs(rng):
    s = rng.standard_normal((5, 4))
    y = 10.0 * s
    y_adj, beta = adjust_pairs(s, y, np.ones(4), 1.0)
    assert beta == 0.0
    np.testing.assert_array_equal(y_adj, y)


@fixture_settings
@given(**fixtures, omega=st.floats(0.01, 10.0))
def test_shift_matches_formula_and_bounds_curvature(seed, m, d, omega):
    rng = np.random.default_rng(seed)
    s, y = random_pairs(rng, m, d, adversarial=True)
    diag = rng.uniform(0.5, 2.0, d)
    y_adj, beta = adjust_pairs(s, y, diag, omega)
    y_ref, beta_ref = shift_oracle(s, y, diag, omega)
    assert beta == pytest.approx(beta_ref, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(y_adj, y_ref, rtol=1e-12, atol=1e-12)
    sy = np.sum(s * y_adj, axis=1)
    sbs = np.sum(s * diag * s, axis=1)
    assert np.all(sy >= omega * sbs * (1 - 1e-10))


# build_factors

def test_empty_memory_is_diagonal_init():
    diag = np.array([4.0, 0.25, 1.0])
    f = build_factors(np.zeros((0, 3)), np.zeros((0, 3)), diag, 1.0)
    z = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(apply_S(f, z), z / np.sqrt(diag))
    np.testing.assert_array_equal(apply_C(f, z), z * np.sqrt(diag))
    assert f.log_det_B == pytest.approx(np.sum(np.log(diag)))


def test_identity_init_empty_memory_is_identity():
    f = build_factors(np.zeros((0, 3)), np.zeros((0, 3)), np.ones(3), 1.0)
    z = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(apply_S(f, z), z)
    np.testing.assert_array_equal(apply_S_T(f, z), z)


def test_one_dimensional_fixture():
    f = build_factors([[1.0]], [[2.0]], [1.0], 1e-6)
    b, b_inv = _dense(f)
    assert b[0, 0] == pytest.approx(2.0, rel=1e-12)
    assert b_inv[0, 0] == pytest.approx(0.5, rel=1e-12)
    assert apply_S(f, apply_S_T(f, [1.0]))[0] == pytest.approx(0.5, rel=1e-12)
    assert f.log_det_B == pytest.approx(np.log(2.0), rel=1e-12)


def test_d8_m4_quadratic_fixture(rng):
    s, y = random_pairs(rng, 4, 8)
    f = build_factors(s, y, np.ones(8), 1e-3)
    assert f.beta == 0.0
    b, b_inv = _dense(f)
    np.testing.assert_allclose(b, dense_bfgs(s, y, np.ones(8)), atol=1e-8)
    z = rng.standard_normal(8)
    assert np.linalg.norm(apply_B_inv(f, apply_B(f, z)) - z) <= 1e-8 * np.linalg.norm(z)


@fixture_settings
@given(**fixtures, adversarial=st.booleans())
def test_factors_match_dense_bfgs(seed, m, d, adversarial):
    rng = np.random.default_rng(seed)
    s, y = random_pairs(rng, m, d, adversarial)
    diag = rng.uniform(0.5, 2.0, d)
    f = build_factors(s, y, diag, 1.0)
    y_adj, _ = shift_oracle(s, y, diag, 1.0)
    b_ref = dense_bfgs(s, y_adj, diag)
    b, b_inv = _dense(f)
    scale = np.linalg.norm(b_ref, 2)
    assert np.max(np.abs(b - b_ref)) <= 1e-8 * scale
    np.testing.assert_allclose(b, b.T, atol=1e-8 * scale)
    assert np.max(np.abs(b @ b_inv - np.eye(d))) <= 1e-8
    # secant condition on the newest adjusted pair
    np.testing.assert_allclose(apply_B(f, s[-1]), y_adj[-1],
                               atol=1e-8 * np.linalg.norm(y_adj[-1]))
    sign, logdet = np.linalg.slogdet(b_ref)
    assert sign > 0
    assert np.exp(f.log_det_B - logdet) == pytest.approx(1.0, rel=1e-6)


@settings(max_examples=1000, derandomize=True, deadline=None)
@given(**fixtures)
def test_positive_definite_under_adversarial_pairs(seed, m, d):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((m, d))
    y = -rng.uniform(0.1, 10.0) * s + 0.1 * rng.standard_normal((m, d))
    f = build_factors(s, y, rng.uniform(0.5, 2.0, d), 1.0)
    b, _ = _dense(f)
    assert np.min(np.linalg.eigvalsh(0.5 * (b + b.T))) > 0


def test_invalid_slots_are_skipped(rng):
    s, y = random_pairs(rng, 5, 6)
    valid = np.array([False, True, False, True, True])
    s_masked = s.copy()
    s_masked[~valid] = 0.0
    f = build_factors(s_masked, y, np.ones(6), 1.0, valid)
    g = build_factors(s[valid], y[valid], np.ones(6), 1.0)
    b_f, _ = _dense(f)
    b_g, _ = _dense(g)
    np.testing.assert_allclose(b_f, b_g, atol=1e-12)
    assert f.log_det_B == pytest.approx(g.log_det_B, abs=1e-12)


def test_zero_displacement_pairs_are_skipped(rng):
    s, y = random_pairs(rng, 3, 4)
    s[1] = 0.0
    f = build_factors(s, y, np.ones(4), 1.0)
    g = build_factors(s[[0, 2]], y[[0, 2]], np.ones(4), 1.0)
    np.testing.assert_allclose(_dense(f)[0], _dense(g)[0], atol=1e-12)


def test_batched_build_matches_single(rng):
    n, m, d = 6, 4, 5
    pairs = [random_pairs(rng, m, d, adversarial=True) for _ in range(n)]
    s = np.stack([p[0] for p in pairs])
    y = np.stack([p[1] for p in pairs])
    diag = rng.uniform(0.5, 2.0, (n, d))
    batch = build_factors(s, y, diag, 1.0)
    z = rng.standard_normal((n, d))
    for i in range(n):
        one = build_factors(s[i], y[i], diag[i], 1.0)
        np.testing.assert_allclose(apply_S(batch, z)[i], apply_S(one, z[i]), rtol=1e-12)
        assert batch.beta[i] == pytest.approx(float(one.beta), abs=1e-12)
        assert batch.log_det_B[i] == pytest.approx(float(one.log_det_B), rel=1e-12)


def test_bad_diagonal_rejected():
    with pytest.raises(ValueError):
        build_factors(np.ones((1, 2)), np.ones((1, 2)), np.array([1.0, 0.0]), 1.0)


def test_non_positive_curvature_raises_factor_error():
    # disable the shift so the curvature check itself is exercised
    s = np.array([[1.0, 0.0]])
    y = np.array([[-1.0, 0.0]])
    with pytest.raises(FactorError):
        build_factors(s, y, np.ones(2), -5.0)


def _breakdown_fixture():
    # trajectory pairs from a mixture run whose BFGS sequence reaches condition
    # number ~1e17; the last slot's s^T B s rounds to a negative value
    with np.load(Path(__file__).parent / "data" / "breakdown_pairs.npz") as f:
        return f["s"], f["y"], f["diag"]


def test_floating_point_breakdown_raises_by_default():
    s, y, diag = _breakdown_fixture()
    with pytest.raises(FactorError):
        build_factors(s, y, diag, 1.0)


def test_drop_breakdown_excludes_only_the_broken_slot(rng):
    s, y, diag = _breakdown_fixture()
    f = build_factors(s, y, diag, 1.0, drop_breakdown=True)
    keep = np.ones(len(s), dtype=bool)
    keep[-1] = False
    g = build_factors(s, y, diag, 1.0, keep)
    z = rng.standard_normal(len(diag))
    np.testing.assert_array_equal(apply_S(f, z), apply_S(g, z))
    assert f.log_det_B == g.log_det_B
    b, _ = _dense(f)
    assert np.min(np.linalg.eigvalsh(b)) > 0
    # a healthy factor set in the same batch is untouched
    s2, y2 = random_pairs(rng, len(s), len(diag))
    batch = build_factors(np.stack([s, s2]), np.stack([y, y2]), diag, 1.0, drop_breakdown=True)
    one = build_factors(s2, y2, diag, 1.0)
    np.testing.assert_allclose(apply_S(batch, np.stack([z, z]))[1], apply_S(one, z), rtol=1e-12)


def test_dimension_mismatch_raises(rng):
    s, y = random_pairs(rng, 2, 3)
    f = build_factors(s, y, np.ones(3), 1.0)
    for fn in (apply_C, apply_C_T, apply_S, apply_S_T):
        with pytest.raises(ValueError, match="dimension"):
            fn(f, np.ones(4))


def test_transposed_chains_are_transposes(rng):
    s, y = random_pairs(rng, 4, 7, adversarial=True)
    f = build_factors(s, y, rng.uniform(0.5, 2.0, 7), 1.0)
    for fwd, back in ((apply_C, apply_C_T), (apply_S, apply_S_T)):
        np.testing.assert_allclose(dense_factor(back, f), dense_factor(fwd, f).T, atol=1e-12)
    # S = C^-T
    c = dense_factor(apply_C, f)
    np.testing.assert_allclose(dense_factor(apply_S, f) @ c.T, np.eye(7), atol=1e-10)


def test_apply_cost_is_linear_in_memory(rng, monkeypatch):
    m, d = 6, 50
    s, y = random_pairs(rng, m, d)
    f = build_factors(s, y, np.ones(d), 1.0)
    calls = []
    original = lbfgs._inner

    def counting(a, b):
        calls.append(np.broadcast_shapes(np.shape(a), np.shape(b)))
        return original(a, b)

    monkeypatch.setattr(lbfgs, "_inner", counting)
    z = rng.standard_normal(d)
    for fn in (apply_C, apply_C_T, apply_S, apply_S_T):
        calls.clear()
        fn(f, z)
        assert len(calls) == m
        assert all(shape == (d,) for shape in calls)


def test_no_dense_matrices_allocated(rng):
    n, m, d = 2, 5, 3000
    s = rng.standard_normal((n, m, d))
    y = 2.0 * s + 0.1 * rng.standard_normal((n, m, d))
    tracemalloc.start()
    f = build_factors(s, y, np.ones(d), 1.0)
    z = rng.standard_normal((n, d))
    for fn in (apply_C, apply_C_T, apply_S, apply_S_T):
        fn(f, z)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < d * d * 8 / 20
