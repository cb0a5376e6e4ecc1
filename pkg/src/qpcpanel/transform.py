"""Orthonormal basis of the covariate column space and the projected model.

The stacked design is ``Xs = (X_1, ..., X_K)`` (n x TK).  Any matrix ``Q``
with orthonormal columns spanning ``col(Xs)`` works; premultiplying the
model by ``Q.T`` reduces every n-row matrix to TK rows while keeping the
covariates intact.  Rank-one covariates (time dummies, unit-invariant
regressors) contribute only their n-vector ``v`` to the stacked design.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from qpcpanel.errors import DegenerateError, DimensionError, RankDeficiencyError
from qpcpanel.panel import PanelData

__all__ = [
    "LowRankSpec",
    "TransformBasis",
    "TransformedPanel",
    "build_basis",
    "detect_low_rank",
    "transform_panel",
]

BasisMethod = Literal["symmetric-root", "qr"]

EIG_FLOOR = 1e-12


def detect_low_rank(Xk: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray] | None:
    """Return ``(v, w)`` with ``Xk ~= outer(v, w)`` if ``Xk`` is numerically rank one.

    The covariate is flagged when ``s2 / s1 <= tol``.  ``w`` is unit norm and
    ``v`` carries the singular value.
    """
    Xk = np.asarray(Xk, dtype=float)
    U, s, Vt = np.linalg.svd(Xk, full_matrices=False)
    if s[0] == 0.0:
        raise DegenerateError("covariate is identically zero")
    ratio = s[1] / s[0] if s.size > 1 else 0.0
    if ratio > tol:
        return None
    v, w = U[:, 0] * s[0], Vt[0]
    nz = np.flatnonzero(np.abs(w) > 1e-14)
    if nz.size and w[nz[0]] < 0:
        v, w = -v, -w
    return v, w


@dataclass(frozen=True)
class LowRankSpec:
    """Per-covariate rank-one flags with the (v, w) factors of flagged ones."""

    factors: tuple[tuple[np.ndarray, np.ndarray] | None, ...]

    @property
    def low_rank(self) -> tuple[bool, ...]:
        return tuple(f is not None for f in self.factors)

    @classmethod
    def none(cls, K: int) -> "LowRankSpec":
        return cls((None,) * K)

    @classmethod
    def detect(cls, data: PanelData, tol: float = 1e-8) -> "LowRankSpec":
        return cls(tuple(detect_low_rank(x, tol) for x in data.X))


@dataclass(frozen=True)
class TransformBasis:
    """``Q`` (n x m) with orthonormal columns spanning the stacked design.

    ``column_map[k]`` is the ``(start, stop)`` column range of ``Q``'s design
    block contributed by covariate ``k`` (before orthonormalisation).
    """

    Q: np.ndarray
    method: str
    column_map: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.Q.shape[1]

    def projector(self) -> np.ndarray:
        return self.Q @ self.Q.T


@dataclass(frozen=True)
class TransformedPanel:
    """Projected outcomes and covariates, each m x T (m = TK without low-rank covariates)."""

    Ytil: np.ndarray
    Xtil: tuple[np.ndarray, ...]
    n: int
    basis: TransformBasis

    @property
    def T(self) -> int:
        return self.Ytil.shape[1]

    @property
    def K(self) -> int:
        return len(self.Xtil)

    @property
    def m(self) -> int:
        return self.Ytil.shape[0]


def _stacked_design(data: PanelData, spec: LowRankSpec):
    vs, full = [], []
    for k, (x, f) in enumerate(zip(data.X, spec.factors)):
        if f is None:
            full.append((k, x))
        else:
            vs.append((k, f[0][:, None]))
    blocks = vs + full
    cols, column_map, start = [], [None] * data.K, 0
    for k, block in blocks:
        cols.append(block)
        column_map[k] = (start, start + block.shape[1])
        start += block.shape[1]
    return np.hstack(cols), blocks, tuple(column_map)


def _offending_block(blocks) -> int:
    acc = None
    for k, block in blocks:
        acc = block if acc is None else np.hstack([acc, block])
        s = np.linalg.svd(acc, compute_uv=False)
        if s[-1] ** 2 <= EIG_FLOOR * s[0] ** 2:
            return k
    return blocks[-1][0]


def build_basis(
    data: PanelData,
    spec: LowRankSpec | None = None,
    method: BasisMethod = "symmetric-root",
) -> TransformBasis:
    """Orthonormal basis of ``col(Xs)``.

    ``symmetric-root`` returns ``Xs (Xs'Xs)^{-1/2}``; ``qr`` returns the thin
    Q factor.  Both span the same space, so everything downstream that
    depends on ``Q Q'`` is identical.
    """
    if spec is None:
        spec = LowRankSpec.none(data.K)
    if len(spec.factors) != data.K:
        raise DimensionError("low-rank spec does not match the number of covariates")
    Xs, blocks, column_map = _stacked_design(data, spec)
    if Xs.shape[1] > Xs.shape[0]:
        raise RankDeficiencyError(
            f"stacked design has {Xs.shape[1]} columns but only {Xs.shape[0]} rows"
        )
    gram = Xs.T @ Xs
    evals, evecs = np.linalg.eigh(gram)
    if evals[0] <= EIG_FLOOR * evals[-1]:
        k = _offending_block(blocks)
        raise RankDeficiencyError(
            f"stacked covariate design is rank deficient; covariate X{k + 1} "
            "is (nearly) collinear with the preceding blocks"
        )
    if method == "symmetric-root":
        Q = Xs @ (evecs / np.sqrt(evals)) @ evecs.T
    elif method == "qr":
        Q, _ = np.linalg.qr(Xs)
    else:
        raise ValueError(f"unknown basis method {method!r}")
    return TransformBasis(Q, method, column_map)


def transform_panel(data: PanelData, basis: TransformBasis) -> TransformedPanel:
    """Premultiply outcomes and covariates by ``Q.T``."""
    Q = basis.Q
    if Q.shape[0] != data.n:
        raise DimensionError(f"basis has {Q.shape[0]} rows, panel has n={data.n}")
    Xtil = tuple(Q.T @ x for x in data.X)
    for k, (x, xt) in enumerate(zip(data.X, Xtil), start=1):
        scale = max(np.linalg.norm(x), 1.0)
        if np.linalg.norm(Q @ xt - x) > 1e-8 * scale:
            raise DimensionError(f"basis does not span covariate X{k}")
    return TransformedPanel(Q.T @ data.Y, Xtil, data.n, basis)
