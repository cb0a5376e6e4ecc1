import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpcpanel import (
    Coefs,
    FactorStructure,
    build_basis,
    composite_residual,
    extract_factors,
    full_objective,
    profile_objective,
    transform_panel,
)
from qpcpanel.objective import alternating_least_squares, factors_from_residual, qpc_system
from qpcpanel.panel import shift_matrix

from conftest import noiseless, random_panel


def _tp(rng, **kw):
    data = random_panel(rng, **kw)
    return transform_panel(data, build_basis(data))


def _theta(rng, K):
    return Coefs(rng.uniform(-0.9, 0.9), rng.normal(size=K))


def test_residual_definition(rng):
    tp = _tp(rng)
    th = _theta(rng, 2)
    expected = tp.Ytil @ shift_matrix(th.alpha, tp.T) - th.beta[0] * tp.Xtil[0] - th.beta[1] * tp.Xtil[1]
    np.testing.assert_allclose(composite_residual(tp, th), expected, atol=1e-12)
    np.testing.assert_allclose(qpc_system(tp).residual(th.vector), expected, atol=1e-12)
    np.testing.assert_array_equal(composite_residual(tp, Coefs(0.0, [0.0, 0.0])), tp.Ytil)


def test_residual_is_affine(rng):
    tp = _tp(rng)
    a, b = _theta(rng, 2), _theta(rng, 2)
    mid = Coefs.from_vector(0.5 * (a.vector + b.vector))
    lhs = composite_residual(tp, a) + composite_residual(tp, b)
    np.testing.assert_allclose(lhs, 2 * composite_residual(tp, mid), atol=1e-12)


def test_residual_at_truth_is_factor_term():
    data, truth = noiseless()
    tp = transform_panel(data, build_basis(data))
    W = composite_residual(tp, truth.theta0)
    fs = truth.factor_structure(tp.basis.Q)
    np.testing.assert_allclose(W, fs.common, atol=1e-9)
    assert np.linalg.matrix_rank(W, tol=1e-8 * np.abs(W).max()) <= 3
    assert profile_objective(tp, truth.theta0, 3) <= 1e-12 * np.sum(tp.Ytil**2)


def test_profile_objective_eigen_oracle(rng):
    tp = _tp(rng)
    th = _theta(rng, 2)
    W = composite_residual(tp, th)
    mu = np.sort(np.linalg.eigvals(W.T @ W).real)[::-1]
    for R in range(tp.T + 1):
        expected = (np.trace(W.T @ W) - mu[:R].sum()) / (tp.n * tp.T)
        assert profile_objective(tp, th, R) == pytest.approx(expected, abs=1e-10)
    assert profile_objective(tp, th, tp.T) == 0.0


def test_profile_monotone_in_R(rng):
    tp = _tp(rng, T=6)
    for _ in range(10):
        th = _theta(rng, 2)
        vals = [profile_objective(tp, th, R) for R in range(7)]
        assert all(a >= b - 1e-14 for a, b in zip(vals, vals[1:]))


def test_cached_gram_matches_direct(rng):
    tp = _tp(rng)
    sys_ = qpc_system(tp)
    for _ in range(5):
        th = _theta(rng, 2)
        W = composite_residual(tp, th)
        np.testing.assert_allclose(sys_.gram(th.vector), W.T @ W, atol=1e-9)
        assert sys_.profile(th.vector, 2) == pytest.approx(profile_objective(tp, th, 2), abs=1e-10)


def test_profile_gradient_matches_finite_differences(rng):
    tp = _tp(rng, T=6)
    sys_ = qpc_system(tp)
    th = _theta(rng, 2).vector
    _, g = sys_.profile_and_grad(th, 2)
    h = 1e-6
    fd = [
        (sys_.profile(th + h * e, 2) - sys_.profile(th - h * e, 2)) / (2 * h) for e in np.eye(3)
    ]
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 5))
def test_concentration_identity(seed, R):
    r = np.random.default_rng(seed)
    tp = _tp(r, n=30, T=5, K=2)
    R = min(R, tp.T)
    th = _theta(r, 2)
    fs = extract_factors(tp, th, R)
    assert fs.R == R
    assert full_objective(tp, th, fs) == pytest.approx(profile_objective(tp, th, R), abs=1e-10)


def test_full_objective_at_least_profile(rng):
    tp = _tp(rng)
    th = _theta(rng, 2)
    prof = profile_objective(tp, th, 2)
    for _ in range(20):
        fs = FactorStructure(rng.normal(size=(tp.T, 2)), rng.normal(size=(tp.m, 2)))
        assert full_objective(tp, th, fs) >= prof - 1e-10
    zero = FactorStructure.empty(tp.T, tp.m)
    W = composite_residual(tp, th)
    assert full_objective(tp, th, zero) == pytest.approx(np.sum(W**2) / (tp.n * tp.T))
    assert full_objective(tp, th, zero) == pytest.approx(profile_objective(tp, th, 0), abs=1e-10)


def test_exact_rank_residual_has_zero_objective(rng):
    W = rng.normal(size=(20, 2)) @ rng.normal(size=(2, 6))
    fs = factors_from_residual(W, 2)
    np.testing.assert_allclose(fs.common, W, atol=1e-12)
    np.testing.assert_allclose(fs.F.T @ fs.F, np.eye(2), atol=1e-12)


def test_rotation_invariance_of_common_component(rng):
    W = rng.normal(size=(20, 6))
    fs = factors_from_residual(W, 3)
    O, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    F = fs.F @ O
    L = W @ F @ np.linalg.pinv(F.T @ F)
    np.testing.assert_allclose(L @ F.T, fs.common, atol=1e-9)


def test_sign_convention_and_tie_flag(rng):
    W = rng.normal(size=(20, 6))
    fs = factors_from_residual(W, 2)
    for col in fs.F.T:
        assert col[np.flatnonzero(np.abs(col) > 1e-12)[0]] > 0
    assert not fs.tie
    assert factors_from_residual(np.eye(6), 2).tie
    assert factors_from_residual(W, 0).R == 0


def test_basis_invariance_of_profile(rng):
    data = random_panel(rng, n=40, T=5, K=2)
    t1 = transform_panel(data, build_basis(data, method="symmetric-root"))
    t2 = transform_panel(data, build_basis(data, method="qr"))
    for _ in range(20):
        th = _theta(rng, 2)
        assert profile_objective(t1, th, 2) == pytest.approx(profile_objective(t2, th, 2), abs=1e-10)


def test_als_is_monotone(rng):
    tp = _tp(rng, n=60, T=6)
    res = alternating_least_squares(qpc_system(tp), 2, np.zeros(3), tol=1e-12, max_iter=100)
    steps = np.diff(res.path)
    assert np.all(steps <= 1e-12 * max(res.path[0], 1.0))
