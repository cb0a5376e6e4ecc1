"""Comparator estimators on the untransformed model: pooled OLS and iterated PC."""

from __future__ import annotations

import numpy as np

from qpcpanel.errors import DimensionError, SingularityError
from qpcpanel.objective import LinearSystem, alternating_least_squares, factors_from_residual
from qpcpanel.panel import Coefs, FactorStructure, PanelData, projectors
from qpcpanel.qpc import EstimateOptions, EstimateResult

__all__ = ["estimate_ls", "estimate_pc_bai", "lagged_system"]


def lagged_system(data: PanelData) -> LinearSystem:
    """Outcome on (lagged outcome, covariates), n x T' blocks.

    With ``y0`` all T periods are used; without it the first period only
    serves as the lag of the second.
    """
    if data.y0 is not None:
        lag = np.column_stack([data.y0, data.Y[:, :-1]])
        Y, X = data.Y, data.X
    else:
        lag = data.Y[:, :-1]
        Y, X = data.Y[:, 1:], tuple(x[:, 1:] for x in data.X)
    return LinearSystem(Y, np.stack([lag, *X]), data.n)


def estimate_ls(data: PanelData) -> EstimateResult:
    """Pooled least squares without intercept, HC1 robust covariance."""
    system = lagged_system(data)
    y = system.target.ravel()
    Xm = np.column_stack([r.ravel() for r in system.regressors])
    N, p = Xm.shape
    XtX = Xm.T @ Xm
    if np.linalg.cond(XtX) > 1e12:
        raise SingularityError("pooled regressor Gram matrix is singular")
    XtX_inv = np.linalg.inv(XtX)
    theta = XtX_inv @ (Xm.T @ y)
    e = y - Xm @ theta
    meat = (Xm * (e * e)[:, None]).T @ Xm
    V = XtX_inv @ meat @ XtX_inv * (N / max(N - p, 1))
    W = system.residual(theta)
    return EstimateResult(
        theta_hat=Coefs.from_vector(theta),
        factors=FactorStructure.empty(system.T, data.n),
        objective=float(np.sum(W * W)) / system.norm,
        converged=True,
        starts_agreeing=1,
        R=0,
        estimator="ls",
        cov=N * 0.5 * (V + V.T),
        nobs=N,
    )


def estimate_pc_bai(data: PanelData, opts: EstimateOptions | None = None) -> EstimateResult:
    """Alternate least squares given factors with principal components given coefficients.

    Starts from :func:`estimate_ls`, stops when the relative objective change
    is at most 1e-9 or after 500 sweeps.  ``opts.R`` is the number of
    factors in the untransformed model.  The covariance is ``s2 D^-1`` with
    ``D`` built from the defactored regressors.
    """
    opts = opts or EstimateOptions(R=2, covariance=None)
    system = lagged_system(data)
    R = opts.R
    if R > min(data.n, system.T):
        raise DimensionError(f"R={R} exceeds min(n, T)")
    start = estimate_ls(data).theta_hat.vector
    als = alternating_least_squares(system, R, start, tol=1e-9, max_iter=500)
    theta = als.theta
    if not abs(theta[0]) < 1.0:
        raise SingularityError(f"PC iteration left the stationary region (alpha={theta[0]:.4g})")
    W = system.residual(theta)
    fs = factors_from_residual(W, R)
    E = W - fs.common

    nobs = system.n * system.T
    _, MF = projectors(fs.F)
    _, ML = projectors(fs.LambdaTilde)
    A = [ML @ r @ MF for r in system.regressors]
    D = np.array([[np.sum(a * b) for b in system.regressors] for a in A]) / nobs
    dof = nobs - system.p - R * (data.n + system.T - R)
    cov = None
    if dof > 0 and np.linalg.cond(D) < 1e12:
        s2 = float(np.sum(E * E)) / dof
        cov = s2 * np.linalg.inv(0.5 * (D + D.T))
    return EstimateResult(
        theta_hat=Coefs.from_vector(theta),
        factors=fs,
        objective=als.objective,
        converged=als.converged,
        starts_agreeing=1,
        R=R,
        estimator="pc",
        cov=cov,
        nobs=nobs,
        extra={"iterations": als.iterations, "path": als.path},
    )

