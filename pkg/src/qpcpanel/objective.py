"""Least-squares objectives of the projected model and factor extraction.

For fixed coefficients the composite residual

    Wmat(theta) = Ytil S(alpha) - sum_k beta_k Xtil_k

has a pure factor structure.  Minimising ``||Wmat - Lt F'||_F^2 / (nT)`` over
rank-R factor structures leaves the sum of the T - R smallest eigenvalues
of ``Wmat' Wmat`` (scaled by 1/nT), which is the profile objective the
estimator minimises.

Every residual used here is affine in theta, ``Wmat = target - sum_j
theta_j reg_j``, so :class:`LinearSystem` caches the T x T cross products of
``(target, reg_1, ...)`` once and evaluates ``Wmat' Wmat`` without touching
the (possibly large) row dimension again.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qpcpanel.errors import DimensionError
from qpcpanel.panel import Coefs, FactorStructure, shift_matrix
from qpcpanel.transform import TransformedPanel

__all__ = [
    "LinearSystem",
    "alternating_least_squares",
    "composite_residual",
    "extract_factors",
    "factors_from_residual",
    "full_objective",
    "profile_objective",
    "qpc_system",
]

TIE_RTOL = 1e-10


@dataclass(frozen=True)
class LinearSystem:
    """``Wmat(theta) = target - sum_j theta[j] * regressors[j]`` with normaliser ``n * T``."""

    target: np.ndarray
    regressors: np.ndarray  # (p, m, T)
    n: int
    cross: np.ndarray = field(init=False, repr=False)  # (p+1, p+1, T, T)

    def __post_init__(self):
        target = np.asarray(self.target, dtype=float)
        regs = np.asarray(self.regressors, dtype=float)
        if regs.ndim != 3 or regs.shape[1:] != target.shape:
            raise DimensionError("regressors must be a (p, m, T) stack matching target")
        blocks = np.concatenate([target[None], regs], axis=0)
        cross = np.einsum("ait,bis->abts", blocks, blocks)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "regressors", regs)
        object.__setattr__(self, "cross", cross)

    @property
    def T(self) -> int:
        return self.target.shape[1]

    @property
    def p(self) -> int:
        return self.regressors.shape[0]

    @property
    def norm(self) -> float:
        return float(self.n * self.T)

    def residual(self, theta: np.ndarray) -> np.ndarray:
        return self.target - np.tensordot(np.asarray(theta, dtype=float), self.regressors, 1)

    def gram(self, theta: np.ndarray) -> np.ndarray:
        """``Wmat(theta)' Wmat(theta)`` from the cached cross products."""
        c = np.r_[1.0, -np.asarray(theta, dtype=float)]
        g = np.tensordot(c, np.tensordot(c, self.cross, 1), 1)
        return 0.5 * (g + g.T)

    def profile(self, theta: np.ndarray, R: int) -> float:
        mu = np.linalg.eigvalsh(self.gram(theta))
        return float(np.clip(mu[: self.T - R], 0.0, None).sum()) / self.norm

    def profile_and_grad(self, theta: np.ndarray, R: int) -> tuple[float, np.ndarray]:
        """Profile objective and its gradient.

        The gradient is exact wherever the R-th and (R+1)-th eigenvalues of
        ``Wmat' Wmat`` differ: ``-2/nT * tr(P Wmat' reg_j)`` with ``P`` the
        projector on the trailing T - R eigenvectors.
        """
        c = np.r_[1.0, -np.asarray(theta, dtype=float)]
        A = np.tensordot(c, self.cross, 1)  # A[b] = Wmat' B_b
        g = np.tensordot(c, A, 1)
        mu, V = np.linalg.eigh(0.5 * (g + g.T))
        low = V[:, : self.T - R]
        P = low @ low.T
        value = float(np.clip(mu[: self.T - R], 0.0, None).sum()) / self.norm
        grad = -2.0 * np.einsum("ts,bts->b", P, A[1:]) / self.norm
        return value, grad


def qpc_system(tp: TransformedPanel) -> LinearSystem:
    """Linear system of the projected dynamic model: target ``Ytil``, regressors ``(Ytil W, Xtil_1, ...)``."""
    lagged = np.zeros_like(tp.Ytil)
    lagged[:, 1:] = tp.Ytil[:, :-1]
    return LinearSystem(tp.Ytil, np.stack([lagged, *tp.Xtil]), tp.n)


def _check_theta(tp: TransformedPanel, theta: Coefs) -> None:
    if theta.K != tp.K:
        raise DimensionError(f"theta has {theta.K} slopes but the panel has K={tp.K}")


def composite_residual(tp: TransformedPanel, theta: Coefs) -> np.ndarray:
    """``Ytil S(alpha) - sum_k beta_k Xtil_k`` (m x T)."""
    _check_theta(tp, theta)
    W = tp.Ytil @ shift_matrix(theta.alpha, tp.T)
    for b, x in zip(theta.beta, tp.Xtil):
        W = W - b * x
    return W


def _eig_desc(gram: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu, V = np.linalg.eigh(gram)
    return mu[::-1], V[:, ::-1]


def _check_R(R: int, T: int) -> int:
    R = int(R)
    if not 0 <= R <= T:
        raise DimensionError(f"R must lie in [0, T={T}], got {R}")
    return R


def profile_objective(tp: TransformedPanel, theta: Coefs, R: int) -> float:
    """``(1/nT) * sum of the T - R smallest eigenvalues of Wmat' Wmat``."""
    R = _check_R(R, tp.T)
    W = composite_residual(tp, theta)
    mu = np.linalg.eigvalsh(W.T @ W)
    return float(np.clip(mu[: tp.T - R], 0.0, None).sum()) / (tp.n * tp.T)


def full_objective(tp: TransformedPanel, theta: Coefs, fs: FactorStructure) -> float:
    """``(1/nT) ||Wmat - Lt F'||_F^2`` for an arbitrary factor structure."""
    W = composite_residual(tp, theta)
    if fs.F.shape[0] != tp.T or fs.LambdaTilde.shape[0] != tp.m:
        raise DimensionError(
            f"factor structure {fs.LambdaTilde.shape} x {fs.F.shape} does not conform "
            f"to a {tp.m} x {tp.T} residual"
        )
    E = W - fs.common
    return float(np.sum(E * E)) / (tp.n * tp.T)


def factors_from_residual(W: np.ndarray, R: int) -> FactorStructure:
    """Top-R principal components of ``W`` (m x T).

    Factors are the unit-norm leading eigenvectors of ``W'W``, each signed so
    its first non-negligible entry is positive; loadings are ``W F``.
    """
    T = W.shape[1]
    R = _check_R(R, T)
    if R == 0:
        return FactorStructure.empty(T, W.shape[0])
    mu, V = _eig_desc(W.T @ W)
    F = V[:, :R].copy()
    for r in range(R):
        nz = np.flatnonzero(np.abs(F[:, r]) > 1e-12)
        if nz.size and F[nz[0], r] < 0:
            F[:, r] = -F[:, r]
    tie = False
    if R < T:
        tie = abs(mu[R - 1] - mu[R]) <= TIE_RTOL * max(abs(mu[0]), np.finfo(float).tiny)
    return FactorStructure(F, W @ F, tie=bool(tie))


def extract_factors(tp: TransformedPanel, theta: Coefs, R: int) -> FactorStructure:
    """Factor structure minimising :func:`full_objective` at ``theta``."""
    return factors_from_residual(composite_residual(tp, theta), R)


@dataclass
class ALSResult:
    theta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    path: list[float]


def alternating_least_squares(
    system: LinearSystem,
    R: int,
    theta0: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 500,
    step_tol: float = 0.0,
) -> ALSResult:
    """Alternate between principal components given theta and least squares given factors.

    Each sweep cannot increase the profile objective.  Stops when the
    relative objective change is at most ``tol`` (and, if ``step_tol`` > 0,
    the coefficient step is at most ``step_tol``) or after ``max_iter``
    sweeps.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    p, T = system.p, system.T
    C = system.cross
    obj = system.profile(theta, R)
    path = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if R > 0:
            _, V = _eig_desc(system.gram(theta))
            Fh = V[:, :R]
            M = np.eye(T) - Fh @ Fh.T
        else:
            M = np.eye(T)
        # <reg_a M, reg_b> = sum(M * C[b, a]) with index 0 the target
        H = np.einsum("ts,abst->ab", M, C)
        A, b = H[1:, 1:], H[1:, 0]
        try:
            new = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            new = np.linalg.lstsq(A, b, rcond=None)[0]
        new_obj = system.profile(new, R)
        step = np.max(np.abs(new - theta)) if p else 0.0
        theta = new
        path.append(new_obj)
        change = abs(obj - new_obj)
        obj = new_obj
        small_step = step_tol <= 0.0 or step <= step_tol
        if change <= tol * max(abs(obj), 1e-300) and small_step:
            converged = True
            break
    return ALSResult(theta, obj, it, converged, path)
