"""Transformed principal-components estimator and its lagged-projection variant.

``estimate_qpc`` minimises the profile objective of the projected model over
a compact box.  The objective is an eigenvalue sum, continuous but not
smooth where eigenvalues cross, so the global search is derivative-free:
Nelder-Mead from several starting points, kept inside the box by reflecting
coordinates at the bounds.  Near a minimiser with a clear eigenvalue gap the
objective is smooth, and each simplex result is polished by a bounded
quasi-Newton run using the analytic gradient.

``R`` passed to :func:`estimate_qpc` counts every factor, including the one
absorbing the initial condition (use ``R* + 1``).  :func:`estimate_bn`
conditions on the first period instead, so its ``R`` is ``R*``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from qpcpanel.errors import DimensionError
from qpcpanel.inference import build_instruments, sandwich_covariance
from qpcpanel.objective import (
    LinearSystem,
    factors_from_residual,
    qpc_system,
)
from qpcpanel.panel import Coefs, FactorStructure, PanelData
from qpcpanel.transform import (
    LowRankSpec,
    TransformedPanel,
    build_basis,
    transform_panel,
)

__all__ = [
    "EstimateOptions",
    "EstimateResult",
    "StartTrace",
    "bn_system",
    "estimate_bn",
    "estimate_qpc",
    "fit_system",
    "prepare_qpc",
]

CovarianceMode = Literal["plugin-kronecker", "plugin-homoskedastic"]

THETA_AGREE = 1e-6
OBJ_AGREE = 1e-10


@dataclass(frozen=True)
class EstimateOptions:
    """Search box, factor count and optimiser settings.

    Parameters
    ----------
    R : int
        Factors used in estimation.
    alpha_bounds : tuple of float
        Closed interval for alpha, strictly inside (-1, 1).
    beta_box : float
        Half-width of the box for each slope, centred on the least-squares start.
    multistart : int
        Number of starting points (the least-squares start plus a scrambled
        Halton spread).
    max_iter : int
        Simplex iterations per start.
    tol : float
        Objective tolerance of the simplex search, relative to the total
        sum of squares of the projected outcome.
    initial : "ls" or Coefs
        First starting point.
    seed : int
        Seed of the starting-point lattice.
    covariance : str or None
        Plug-in used for the fixed-T covariance attached to the result, or
        None to skip it.
    basis_method : str
        ``symmetric-root`` or ``qr``.
    low_rank_tol : float or None
        Tolerance for rank-one covariate detection; None disables detection.
    """

    R: int = 3
    alpha_bounds: tuple[float, float] = (-0.99, 0.99)
    beta_box: float = 10.0
    multistart: int = 8
    max_iter: int = 2000
    tol: float = 1e-10
    initial: str | Coefs = "ls"
    seed: int = 0
    covariance: CovarianceMode | None = "plugin-kronecker"
    basis_method: str = "symmetric-root"
    low_rank_tol: float | None = 1e-8

    def __post_init__(self):
        lo, hi = self.alpha_bounds
        if not (-1.0 < lo < hi < 1.0):
            raise ValueError(f"alpha_bounds must satisfy -1 < lo < hi < 1, got {self.alpha_bounds}")
        if not self.beta_box > 0:
            raise ValueError("beta_box must be positive")
        if self.multistart < 1 or self.max_iter < 1:
            raise ValueError("multistart and max_iter must be at least 1")
        if self.R < 0:
            raise ValueError("R must be non-negative")
        if not (self.initial == "ls" or isinstance(self.initial, Coefs)):
            raise ValueError("initial must be 'ls' or a Coefs instance")


@dataclass(frozen=True)
class StartTrace:
    start: np.ndarray
    theta: np.ndarray
    objective: float
    nfev: int
    success: bool


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate with its factor structure and optimiser diagnostics.

    ``cov`` is the asymptotic covariance of ``sqrt(nobs) (theta_hat - theta0)``
    when computed; standard errors are ``sqrt(diag(cov) / nobs)``.
    """

    theta_hat: Coefs
    factors: FactorStructure
    objective: float
    converged: bool
    starts_agreeing: int
    diagnostics: tuple[StartTrace, ...] = ()
    R: int = 0
    estimator: str = "qpc"
    cov: np.ndarray | None = None
    nobs: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray | None:
        if self.cov is None or self.nobs is None:
            return None
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None) / self.nobs)


# -- search box -------------------------------------------------------------


@dataclass(frozen=True)
class _Box:
    lo: np.ndarray
    hi: np.ndarray

    def fold(self, u: np.ndarray) -> np.ndarray:
        """Reflect an unconstrained point back into the box (triangle wave)."""
        width = self.hi - self.lo
        r = np.mod(u - self.lo, 2.0 * width)
        return self.lo + np.where(r > width, 2.0 * width - r, r)

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))


def _ols_start(system: LinearSystem) -> np.ndarray:
    """Closed-form minimiser with no factors (least squares on the system)."""
    C = system.cross
    H = np.einsum("abtt->ab", C)
    try:
        return np.linalg.solve(H[1:, 1:], H[1:, 0])
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H[1:, 1:], H[1:, 0], rcond=None)[0]


def _starts(box: _Box, first: np.ndarray, count: int, seed: int) -> list[np.ndarray]:
    starts = [box.clip(first)]
    if count > 1:
        d = first.size
        u = qmc.Halton(d=d, scramble=True, seed=seed).random(count - 1)
        # alpha spread over its whole interval, slopes within +-1 of the first start
        lo = np.r_[box.lo[0], np.maximum(box.lo[1:], first[1:] - 1.0)]
        hi = np.r_[box.hi[0], np.minimum(box.hi[1:], first[1:] + 1.0)]
        starts.extend(lo + u[i] * (hi - lo) for i in range(count - 1))
    return starts


def _simplex(x0: np.ndarray, box: _Box) -> np.ndarray:
    step = 0.05 * (box.hi - box.lo)
    step[0] = min(step[0], 0.1)
    step[1:] = np.minimum(step[1:], 0.25)
    simplex = np.tile(x0, (x0.size + 1, 1))
    for j in range(x0.size):
        simplex[j + 1, j] += step[j] if x0[j] + step[j] <= box.hi[j] else -step[j]
    return simplex


def _search(
    system: LinearSystem,
    R: int,
    x0: np.ndarray,
    box: _Box,
    opts: EstimateOptions,
    scale: float,
):
    def f(u):
        return system.profile(box.fold(u), R) / scale

    def fg(x):
        value, grad = system.profile_and_grad(x, R)
        return value / scale, grad / scale

    res = minimize(
        f,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": _simplex(x0, box),
            "xatol": 1e-5,
            "fatol": opts.tol,
            "maxiter": opts.max_iter,
            "maxfev": 4 * opts.max_iter,
        },
    )
    x = box.fold(res.x)
    obj = f(x)
    polish = minimize(
        fg,
        x,
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(box.lo, box.hi)),
        options={"ftol": 0.0, "gtol": 1e-14, "maxiter": 500},
    )
    if polish.fun <= obj:
        x, obj = box.clip(polish.x), polish.fun
    return x, system.profile(x, R), res.nfev + polish.nfev, bool(res.success)


def fit_system(
    system: LinearSystem,
    opts: EstimateOptions,
    R: int,
    center: np.ndarray,
    first: np.ndarray,
) -> tuple[np.ndarray, float, bool, int, tuple[StartTrace, ...]]:
    """Multistart minimisation of ``system.profile(., R)`` over the search box.

    Starts are ranked by (objective, start index), so the winner does not
    depend on the order in which they are evaluated.
    """
    lo = np.r_[opts.alpha_bounds[0], center[1:] - opts.beta_box]
    hi = np.r_[opts.alpha_bounds[1], center[1:] + opts.beta_box]
    box = _Box(lo, hi)
    # the search sees the objective relative to the total sum of squares, so
    # its tolerances do not depend on the units of the data
    scale = max(system.profile(np.zeros(system.p), 0), np.finfo(float).tiny)
    traces = []
    for x0 in _starts(box, first, opts.multistart, opts.seed):
        x, obj, nfev, success = _search(system, R, x0, box, opts, scale)
        traces.append(StartTrace(x0, x, obj, nfev, success))
    order = sorted(range(len(traces)), key=lambda i: (traces[i].objective, i))
    best = traces[order[0]]
    agreeing = sum(
        np.max(np.abs(t.theta - best.theta)) <= THETA_AGREE
        and abs(t.objective - best.objective) <= OBJ_AGREE
        for t in traces
    )
    converged = any(t.success for t in traces)
    if len(traces) > 1:
        converged = converged and agreeing >= 2
    return best.theta, best.objective, bool(converged), int(agreeing), tuple(traces)


def prepare_qpc(data: PanelData, opts: EstimateOptions) -> TransformedPanel:
    """Basis construction and projection with the options' basis settings."""
    spec = (
        LowRankSpec.none(data.K)
        if opts.low_rank_tol is None
        else LowRankSpec.detect(data, opts.low_rank_tol)
    )
    return transform_panel(data, build_basis(data, spec, opts.basis_method))


def _first_start(system: LinearSystem, opts: EstimateOptions) -> tuple[np.ndarray, np.ndarray]:
    center = _ols_start(system)
    first = center if opts.initial == "ls" else np.asarray(opts.initial.vector, dtype=float)
    if first.size != center.size:
        raise DimensionError("initial coefficients do not match the number of covariates")
    return center, first


def _finish(
    system: LinearSystem,
    theta: np.ndarray,
    R: int,
    converged: bool,
    agreeing: int,
    traces,
    estimator: str,
    opts: EstimateOptions,
    instruments,
    extra: dict | None = None,
) -> EstimateResult:
    # report the objective from the residual itself, not the cached Gram
    W = system.residual(theta)
    fs = factors_from_residual(W, R)
    mu = np.linalg.eigvalsh(W.T @ W)
    obj = float(np.clip(mu[: system.T - R], 0.0, None).sum()) / system.norm
    cov = None
    if opts.covariance is not None:
        cov = sandwich_covariance(
            instruments(theta), fs, W - fs.common, system.n, system.T, opts.covariance
        )
    return EstimateResult(
        theta_hat=Coefs.from_vector(theta),
        factors=fs,
        objective=obj,
        converged=converged,
        starts_agreeing=agreeing,
        diagnostics=traces,
        R=R,
        estimator=estimator,
        cov=cov,
        nobs=system.n * system.T,
        extra=extra or {},
    )


def estimate_qpc(data: PanelData, opts: EstimateOptions | None = None) -> EstimateResult:
    """Minimise the profile objective of the projected model.

    ``opts.R`` counts all factors including the initial-condition factor.
    ``data.y0`` is ignored.
    """
    opts = opts or EstimateOptions()
    if opts.R > data.T:
        raise DimensionError(f"R={opts.R} exceeds T={data.T}")
    tp = prepare_qpc(data, opts)
    system = qpc_system(tp)
    center, first = _first_start(system, opts)
    theta, _, converged, agreeing, traces = fit_system(system, opts, opts.R, center, first)

    def instruments(th):
        return build_instruments(tp, Coefs.from_vector(th)).Z

    return _finish(
        system, theta, opts.R, converged, agreeing, traces, "qpc", opts, instruments, {"panel": tp}
    )


def bn_system(data: PanelData, opts: EstimateOptions | None = None) -> LinearSystem:
    """Projected system that conditions on the first period.

    Periods 2..T are kept; the lagged outcome enters as a regressor after
    projection on the column space of the covariates of those periods.
    """
    opts = opts or EstimateOptions()
    if data.T < 3:
        raise DimensionError("the lagged-projection estimator needs T >= 3")
    current = PanelData(data.Y[:, 1:], tuple(x[:, 1:] for x in data.X))
    tp = prepare_qpc(current, opts)
    Q = tp.basis.Q
    lagged = Q.T @ data.Y[:, :-1]
    return LinearSystem(tp.Ytil, np.stack([lagged, *tp.Xtil]), data.n)


def estimate_bn(data: PanelData, opts: EstimateOptions | None = None) -> EstimateResult:
    """Estimator with the projected lagged outcome as an extra regressor.

    ``opts.R`` counts only the factors of the model (no initial-condition
    factor); the estimation system has T - 1 periods.
    """
    opts = opts or EstimateOptions(R=2)
    if opts.R > data.T - 1:
        raise DimensionError(f"R={opts.R} exceeds T-1={data.T - 1}")
    system = bn_system(data, opts)
    center, first = _first_start(system, opts)
    theta, _, converged, agreeing, traces = fit_system(system, opts, opts.R, center, first)

    def instruments(th):
        return list(system.regressors)

    return _finish(system, theta, opts.R, converged, agreeing, traces, "bn", opts, instruments)
