import numpy as np
import pytest

from qpcpanel import Coefs, EstimateOptions, PanelData, build_basis, estimate_bn, estimate_qpc, transform_panel
from qpcpanel.errors import DimensionError
from qpcpanel.objective import profile_objective
from qpcpanel.qpc import bn_system

from conftest import noiseless


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_noiseless_recovery(seed):
    data, truth = noiseless(seed=seed)
    res = estimate_qpc(data, EstimateOptions(R=3, covariance=None))
    assert np.max(np.abs(res.theta_hat.vector - truth.theta0.vector)) <= 1e-6
    assert res.objective <= 1e-12 * np.mean(data.Y**2)
    assert res.converged
    assert res.factors.R == 3


@pytest.mark.parametrize("seed", [0, 1])
def test_bn_noiseless_recovery(seed):
    data, truth = noiseless(seed=seed)
    res = estimate_bn(data, EstimateOptions(R=2, covariance=None))
    assert np.max(np.abs(res.theta_hat.vector - truth.theta0.vector)) <= 1e-6
    assert res.estimator == "bn"


def test_bn_system_drops_one_period(sim_panel):
    data, _ = sim_panel
    system = bn_system(data)
    assert system.T == data.T - 1
    assert system.target.shape == ((data.T - 1) * data.K, data.T - 1)


def test_static_model_matches_transformed_ols(rng):
    n, T = 50, 4
    X = tuple(rng.standard_normal((n, T)) for _ in range(2))
    Y = 0.8 * X[0] - 0.4 * X[1] + rng.standard_normal((n, T))
    data = PanelData(Y, X)
    res = estimate_qpc(data, EstimateOptions(R=0, covariance=None))
    tp = transform_panel(data, build_basis(data))
    lag = np.zeros_like(tp.Ytil)
    lag[:, 1:] = tp.Ytil[:, :-1]
    Z = np.column_stack([lag.ravel(), tp.Xtil[0].ravel(), tp.Xtil[1].ravel()])
    ols = np.linalg.lstsq(Z, tp.Ytil.ravel(), rcond=None)[0]
    np.testing.assert_allclose(res.theta_hat.vector, ols, atol=1e-8)


def test_argmin_not_worse_than_truth(sim_panel):
    data, truth = sim_panel
    res = estimate_qpc(data, EstimateOptions(covariance=None))
    tp = res.extra["panel"]
    assert res.objective <= profile_objective(tp, truth.theta0, 3) + 1e-12
    assert res.objective == pytest.approx(profile_objective(tp, res.theta_hat, 3), abs=1e-12)


def test_scale_equivariance(sim_panel):
    data, _ = sim_panel
    base = estimate_qpc(data, EstimateOptions(covariance=None))
    for c in (0.01, 3.0, 250.0):
        res = estimate_qpc(data.scaled(c), EstimateOptions(covariance=None))
        np.testing.assert_allclose(res.theta_hat.vector, base.theta_hat.vector, atol=1e-8)
        assert res.objective == pytest.approx(c * c * base.objective, rel=1e-6)


def test_result_carries_covariance(sim_panel):
    data, _ = sim_panel
    res = estimate_qpc(data)
    assert res.cov.shape == (3, 3)
    np.testing.assert_allclose(res.cov, res.cov.T)
    assert np.all(np.linalg.eigvalsh(res.cov) > 0)
    assert res.nobs == data.n * data.T
    assert np.all(res.se > 0) and np.all(res.se < 0.5)
    assert len(res.diagnostics) == 8
    assert res.starts_agreeing >= 2


def test_estimate_is_deterministic(sim_panel):
    data, _ = sim_panel
    a = estimate_qpc(data, EstimateOptions(covariance=None))
    b = estimate_qpc(data, EstimateOptions(covariance=None))
    np.testing.assert_array_equal(a.theta_hat.vector, b.theta_hat.vector)


def test_custom_initial_point(sim_panel):
    data, _ = sim_panel
    base = estimate_qpc(data, EstimateOptions(covariance=None))
    res = estimate_qpc(data, EstimateOptions(covariance=None, initial=Coefs(0.0, [0.0, 0.0])))
    np.testing.assert_allclose(res.theta_hat.vector, base.theta_hat.vector, atol=1e-6)


def test_option_validation():
    with pytest.raises(ValueError):
        EstimateOptions(alpha_bounds=(-1.0, 0.5))
    with pytest.raises(ValueError):
        EstimateOptions(beta_box=0.0)
    with pytest.raises(ValueError):
        EstimateOptions(multistart=0)
    with pytest.raises(ValueError):
        EstimateOptions(initial="zero")


def test_too_many_factors(sim_panel):
    data, _ = sim_panel
    with pytest.raises(DimensionError):
        estimate_qpc(data, EstimateOptions(R=7))
    with pytest.raises(DimensionError):
        estimate_bn(data, EstimateOptions(R=6))
