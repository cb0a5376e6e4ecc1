"""Raw panel containers and the small structured matrices used everywhere.

Matrices follow the convention rows = cross-section units (n), columns =
periods (T).  ``W`` is the T x T shift with ones on the first superdiagonal,
so ``Y @ W`` moves every column one period to the right (the lag operator).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from qpcpanel.errors import DimensionError

__all__ = [
    "Coefs",
    "FactorStructure",
    "PanelData",
    "lag_response_G",
    "projectors",
    "shift_W",
    "shift_matrix",
]


@dataclass(frozen=True)
class PanelData:
    """Balanced panel: outcomes ``Y`` (n x T), covariates ``X`` (K matrices, n x T).

    ``y0`` holds period-0 outcomes when observed.  The QPC estimator never
    uses it (the initial condition is absorbed into the factor term); LS and
    PC use it as the first lag when present.
    """

    Y: np.ndarray
    X: tuple[np.ndarray, ...]
    y0: np.ndarray | None = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim != 2:
            raise DimensionError("Y must be an n x T matrix")
        X = tuple(np.asarray(x, dtype=float) for x in self.X)
        if len(X) < 1:
            raise DimensionError("at least one covariate is required (K >= 1)")
        for k, x in enumerate(X, start=1):
            if x.shape != Y.shape:
                raise DimensionError(f"X{k} has shape {x.shape}, expected {Y.shape}")
        n, T = Y.shape
        if T < 2:
            raise DimensionError("T >= 2 is required")
        if n < T * len(X):
            raise DimensionError(f"need n >= T*K, got n={n}, T*K={T * len(X)}")
        y0 = None
        if self.y0 is not None:
            y0 = np.asarray(self.y0, dtype=float).reshape(-1)
            if y0.shape != (n,):
                raise DimensionError(f"y0 must have length n={n}")
        arrays = [Y, *X] + ([y0] if y0 is not None else [])
        if not all(np.isfinite(a).all() for a in arrays):
            raise ValueError("panel contains non-finite entries")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y0", y0)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def K(self) -> int:
        return len(self.X)

    def scaled(self, c: float) -> "PanelData":
        y0 = None if self.y0 is None else c * self.y0
        return PanelData(c * self.Y, tuple(c * x for x in self.X), y0)


@dataclass(frozen=True)
class Coefs:
    """Autoregressive coefficient ``alpha`` and slopes ``beta``."""

    alpha: float
    beta: np.ndarray

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        alpha = float(self.alpha)
        if not (np.isfinite(alpha) and np.isfinite(beta).all()):
            raise ValueError("coefficients must be finite")
        if abs(alpha) >= 1.0:
            raise ValueError(f"|alpha| must be < 1, got {alpha}")
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def K(self) -> int:
        return self.beta.size

    @property
    def vector(self) -> np.ndarray:
        return np.r_[self.alpha, self.beta]

    @classmethod
    def from_vector(cls, theta: Sequence[float]) -> "Coefs":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[0], theta[1:])


@dataclass(frozen=True)
class FactorStructure:
    """Factors ``F`` (T x R) and transformed loadings (m x R).

    ``tie`` is set when the R-th and (R+1)-th eigenvalues coincide, in which
    case the factor space is not unique.
    """

    F: np.ndarray
    LambdaTilde: np.ndarray
    tie: bool = field(default=False)

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        L = np.asarray(self.LambdaTilde, dtype=float)
        if F.ndim != 2 or L.ndim != 2 or F.shape[1] != L.shape[1]:
            raise DimensionError(
                f"F {F.shape} and LambdaTilde {L.shape} must have equal column counts"
            )
        if F.shape[1] > F.shape[0]:
            raise DimensionError("R cannot exceed T")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "LambdaTilde", L)

    @property
    def R(self) -> int:
        return self.F.shape[1]

    @property
    def common(self) -> np.ndarray:
        """The common component LambdaTilde @ F.T."""
        return self.LambdaTilde @ self.F.T

    @classmethod
    def empty(cls, T: int, m: int) -> "FactorStructure":
        return cls(np.zeros((T, 0)), np.zeros((m, 0)))


def _check_T(T: int) -> int:
    T = int(T)
    if T < 1:
        raise DimensionError("T must be at least 1")
    return T


def shift_W(T: int) -> np.ndarray:
    """T x T matrix with ones directly above the main diagonal."""
    return np.eye(_check_T(T), k=1)


def shift_matrix(alpha: float, T: int) -> np.ndarray:
    """``S(alpha) = I_T - alpha * W``."""
    T = _check_T(T)
    return np.eye(T) - alpha * np.eye(T, k=1)


def lag_response_G(alpha: float, T: int) -> np.ndarray:
    """``G = S(alpha)^{-1} W``, built from powers of alpha.

    Entry (t, t + j) equals alpha**(j - 1) for j >= 1; everything on or below
    the diagonal is zero.
    """
    T = _check_T(T)
    G = np.zeros((T, T))
    power = 1.0
    for j in range(1, T):
        G += power * np.eye(T, k=j)
        power *= alpha
    return G


def projectors(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P_A, M_A)`` with ``P_A = A (A'A)^+ A'`` and ``M_A = I - P_A``.

    The projector is formed from the left singular vectors whose singular
    values exceed ``max(m, r) * eps * s_max``; rank-deficient and all-zero
    inputs are fine.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    m, r = A.shape
    if r == 0:
        return np.zeros((m, m)), np.eye(m)
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m, m)), np.eye(m)
    keep = s > max(m, r) * np.finfo(float).eps * s[0]
    Uk = U[:, keep]
    P = Uk @ Uk.T
    return P, np.eye(m) - P
