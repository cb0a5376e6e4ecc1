"""Instruments, the D and Omega matrices, large-n bias/variance terms and intervals.

Notation: ``nT`` is the pair ``(n, T)`` with ``n`` the ORIGINAL cross-section
size.  Covariance matrices returned here describe ``sqrt(nT) (theta_hat -
theta0)``; standard errors are ``sqrt(diag(cov) / (n T))``.

The bias and variance evaluators (:func:`bias_psi`, :func:`variance_terms`)
need the true error covariances and are intended for validation against
simulations.  Default reporting uses the fixed-T sandwich ``D^-1 Omega D^-1``
with plug-in covariances from :func:`estimate_sigmas`.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from qpcpanel.errors import DegenerateError, DimensionError, SingularityError
from qpcpanel.panel import Coefs, FactorStructure, lag_response_G, projectors
from qpcpanel.transform import TransformedPanel

__all__ = [
    "Instruments",
    "Sigmas",
    "VarianceTerms",
    "bias_psi",
    "build_instruments",
    "confidence_intervals",
    "estimate_sigmas",
    "expansion_terms",
    "fixed_T_covariance",
    "hessian_D",
    "nickell_bias",
    "nickell_bias_untransformed",
    "nickell_sum",
    "omega",
    "sandwich_covariance",
    "large_n_covariance",
]

Z_95 = 1.959964
COND_MAX = 1e12


def _vec(A: np.ndarray) -> np.ndarray:
    return np.asarray(A).reshape(-1, order="F")


@dataclass(frozen=True)
class Instruments:
    """``Z[0] = sum_k beta_k Xtil_k G(alpha)``, ``Z[k] = Xtil_k``; ``Zstacked[:, j] = vec(Z[j])``."""

    Z: tuple[np.ndarray, ...]

    @property
    def Zstacked(self) -> np.ndarray:
        return np.column_stack([_vec(z) for z in self.Z])

    @classmethod
    def from_list(cls, Z: Sequence[np.ndarray]) -> "Instruments":
        Z = tuple(np.asarray(z, dtype=float) for z in Z)
        if not Z or any(z.shape != Z[0].shape for z in Z):
            raise DimensionError("instruments must be a non-empty list of equally shaped matrices")
        return cls(Z)


def build_instruments(tp: TransformedPanel, theta: Coefs) -> Instruments:
    if theta.K != tp.K:
        raise DimensionError(f"theta has {theta.K} slopes but the panel has K={tp.K}")
    G = lag_response_G(theta.alpha, tp.T)
    Z1 = sum(b * x for b, x in zip(theta.beta, tp.Xtil)) @ G
    return Instruments((Z1, *tp.Xtil))


def _as_instruments(ins) -> Instruments:
    return ins if isinstance(ins, Instruments) else Instruments.from_list(ins)


def _defactored(ins: Instruments, fs: FactorStructure) -> list[np.ndarray]:
    """``M_Lambda Z M_F`` for every instrument."""
    _, MF = projectors(fs.F)
    _, ML = projectors(fs.LambdaTilde)
    return [ML @ z @ MF for z in ins.Z]


def hessian_D(ins, fs: FactorStructure, nT: tuple[int, int]) -> np.ndarray:
    """``D[a, b] = tr(Z_a M_F Z_b' M_Lambda) / nT``."""
    ins = _as_instruments(ins)
    n, T = nT
    A = _defactored(ins, fs)
    p = len(A)
    D = np.array([[np.sum(A[a] * ins.Z[b]) for b in range(p)] for a in range(p)]) / (n * T)
    return 0.5 * (D + D.T)


@dataclass(frozen=True)
class Sigmas:
    """Time covariance ``SigmaT`` (T x T) and transformed cross-section covariance (m x m).

    Oracle instances may also carry ``SigmaN`` (n x n), the basis ``Q`` and
    the third and fourth moments of the standardised errors, which the
    variance terms involving ``P_X`` need.
    """

    SigmaT: np.ndarray
    SigmaNtilde: np.ndarray
    source: str
    SigmaN: np.ndarray | None = None
    Q: np.ndarray | None = None
    upsilon3: float = 0.0
    upsilon4: float = 3.0

    def __post_init__(self):
        for name in ("SigmaT", "SigmaNtilde"):
            S = np.asarray(getattr(self, name), dtype=float)
            if S.ndim != 2 or S.shape[0] != S.shape[1]:
                raise DimensionError(f"{name} must be square")
            scale = max(np.max(np.abs(S)), 1.0)
            if np.max(np.abs(S - S.T)) > 1e-10 * scale:
                raise ValueError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(S)[0] < -1e-10 * scale:
                raise ValueError(f"{name} is not positive semi-definite")
            object.__setattr__(self, name, S)

    @classmethod
    def oracle(
        cls,
        SigmaN: np.ndarray,
        SigmaT: np.ndarray,
        Q: np.ndarray,
        upsilon3: float = 0.0,
        upsilon4: float = 3.0,
    ) -> "Sigmas":
        SigmaN = np.asarray(SigmaN, dtype=float)
        Q = np.asarray(Q, dtype=float)
        return cls(SigmaT, Q.T @ SigmaN @ Q, "oracle", SigmaN, Q, upsilon3, upsilon4)


def omega(ins, fs: FactorStructure, sig: Sigmas, nT: tuple[int, int]) -> np.ndarray:
    """``Omega[a, b] = tr(A_a SigmaT A_b' SigmaNtilde) / nT`` with ``A = M_Lambda Z M_F``."""
    ins = _as_instruments(ins)
    n, T = nT
    A = _defactored(ins, fs)
    B = [sig.SigmaNtilde @ a @ sig.SigmaT for a in A]
    p = len(A)
    Om = np.array([[np.sum(B[a] * A[b]) for b in range(p)] for a in range(p)]) / (n * T)
    return 0.5 * (Om + Om.T)


def _inverse(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if not np.all(np.isfinite(D)) or np.linalg.cond(D) > COND_MAX:
        raise SingularityError(
            "D is singular: after removing the factor structure the instruments "
            "do not identify the coefficients"
        )
    return np.linalg.inv(D)


def fixed_T_covariance(D: np.ndarray, Omega: np.ndarray) -> np.ndarray:
    """Sandwich ``D^-1 Omega D^-1``."""
    Di = _inverse(D)
    V = Di @ Omega @ Di
    return 0.5 * (V + V.T)


def estimate_sigmas(
    residual: np.ndarray,
    mode: str = "plugin-kronecker",
    *,
    K: int | None = None,
    R: int = 0,
) -> Sigmas:
    """Plug-in error covariances from the defactored residual ``E`` (m x T).

    ``plugin-kronecker``: ``SigmaT = T E'E / ||E||^2`` (trace T) and
    ``SigmaNtilde = E E' / T``, so ``tr(SigmaT kron SigmaNtilde) = ||E||^2``.

    ``plugin-homoskedastic``: ``SigmaT = s2 I_T`` and ``SigmaNtilde = I_m``
    with ``s2 = ||E||^2 / (m T - df)``; ``df = (K + 1) + R (T + m - R)``
    when ``K`` is given, else 0.
    """
    E = np.asarray(residual, dtype=float)
    m, T = E.shape
    ss = float(np.sum(E * E))
    if not ss > 0.0:
        raise DegenerateError("residual is identically zero; error covariance is degenerate")
    if mode == "plugin-kronecker":
        ST = T * (E.T @ E) / ss
        SN = (E @ E.T) / T
        return Sigmas(0.5 * (ST + ST.T), 0.5 * (SN + SN.T), mode)
    if mode == "plugin-homoskedastic":
        df = 0 if K is None else (K + 1) + R * (T + m - R)
        dof = m * T - df
        if dof <= 0:
            raise DegenerateError(f"no residual degrees of freedom (m*T={m * T}, df={df})")
        s2 = ss / dof
        return Sigmas(s2 * np.eye(T), np.eye(m), mode)
    raise ValueError(f"unknown covariance mode {mode!r}")


def sandwich_covariance(
    Z: Sequence[np.ndarray],
    fs: FactorStructure,
    residual: np.ndarray,
    n: int,
    T: int,
    mode: str = "plugin-kronecker",
) -> np.ndarray:
    """Fixed-T covariance with plug-in covariances estimated from ``residual``."""
    ins = Instruments.from_list(Z)
    sig = estimate_sigmas(residual, mode, K=len(ins.Z) - 1, R=fs.R)
    return fixed_T_covariance(hessian_D(ins, fs, (n, T)), omega(ins, fs, sig, (n, T)))


# -- large-n bias and variance terms ----------------------------------------


def _factor_pieces(fs: FactorStructure):
    F, L = fs.F, fs.LambdaTilde
    PF, MF = projectors(F)
    _, ML = projectors(L)
    if fs.R:
        H = F @ np.linalg.inv(F.T @ F) @ np.linalg.inv(L.T @ L) @ L.T  # T x m
    else:
        H = np.zeros((F.shape[0], L.shape[0]))
    return PF, MF, ML, H


def bias_psi(
    theta0: Coefs,
    fs0: FactorStructure,
    ins,
    sig: Sigmas,
    nT: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """The four bias vectors ``psi0, psi1, psi2, psi3`` at the true parameters."""
    ins = _as_instruments(ins)
    n, T = nT
    s = np.sqrt(n * T)
    p = len(ins.Z)
    G = lag_response_G(theta0.alpha, T)
    ST, SN = sig.SigmaT, sig.SigmaNtilde
    PF, MF, ML, H = _factor_pieces(fs0)

    psi0 = np.zeros(p)
    psi0[0] = np.trace(ML @ SN) * np.trace(G @ ST) / s
    psi1 = np.zeros(p)
    psi1[0] = np.trace(SN) * (np.trace(ST @ MF @ G @ PF) + np.trace(PF @ ST @ G)) / s
    psi2 = np.array([np.trace(ST) * np.trace(SN @ ML @ z @ H) for z in ins.Z]) / s
    psi3 = np.array([np.trace(SN) * np.trace(ST @ H @ z @ MF) for z in ins.Z]) / s
    return psi0, psi1, psi2, psi3


@dataclass(frozen=True)
class VarianceTerms:
    Upsilon1: np.ndarray
    Upsilon2: np.ndarray
    Xi: np.ndarray
    PhiBar: np.ndarray
    D: np.ndarray

    @property
    def Delta(self) -> np.ndarray:
        return self.D + self.Upsilon1


def _sym_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def variance_terms(
    theta0: Coefs,
    fs0: FactorStructure,
    ins,
    sig: Sigmas,
    nT: tuple[int, int],
    moments: tuple[float, float] | None = None,
    dynamic: bool = True,
) -> VarianceTerms:
    """``Upsilon1, Upsilon2, Xi, PhiBar`` and ``D``.

    ``moments`` are the third and fourth moments of the standardised errors
    (defaults to those stored in ``sig``).  ``Xi`` and ``PhiBar`` need
    ``sig.SigmaN`` and ``sig.Q``; they are zero when the moments are
    Gaussian.  ``dynamic=False`` treats the model as static (no lag).
    """
    ins = _as_instruments(ins)
    n, T = nT
    nt = n * T
    p = len(ins.Z)
    u3, u4 = moments if moments is not None else (sig.upsilon3, sig.upsilon4)
    G = lag_response_G(theta0.alpha, T) if dynamic else np.zeros((T, T))
    ST, SN = sig.SigmaT, sig.SigmaNtilde
    PF, MF, ML, _ = _factor_pieces(fs0)

    U1 = np.zeros((p, p))
    U1[0, 0] = np.trace(SN) * np.trace(G @ ST @ G.T) / nt
    U2 = np.zeros((p, p))
    U2[0, 0] = (
        np.trace(SN @ SN)
        * (
            np.trace(G @ ST @ G @ ST)
            + 2.0 * np.trace(G @ ST @ G.T @ ST)
            + np.trace(G.T @ ST @ G.T @ ST)
        )
        / (2.0 * nt)
    )

    Xi = np.zeros((p, p))
    PhiBar = np.zeros((p, p))
    needs_n_space = (u4 != 3.0 or u3 != 0.0) and np.any(G)
    if needs_n_space:
        if sig.SigmaN is None or sig.Q is None:
            raise ValueError("non-Gaussian variance terms need SigmaN and Q (use Sigmas.oracle)")
        STh = _sym_sqrt(ST)
        SNh = _sym_sqrt(sig.SigmaN)
        PX = sig.Q @ sig.Q.T
        a = np.diag(STh @ G @ STh)
        b = np.diag(SNh @ PX @ SNh)
        Xi[0, 0] = (u4 - 3.0) * (a @ a) * (b @ b) / nt
        phi = np.array([b @ (SNh @ sig.Q @ ML @ z @ MF @ STh) @ a for z in ins.Z])
        Phi = np.zeros((p, p))
        Phi[:, 0] = phi
        PhiBar = u3 * (Phi + Phi.T) / nt

    return VarianceTerms(U1, U2, Xi, PhiBar, hessian_D(ins, fs0, nT))


def large_n_covariance(vt: VarianceTerms, Omega: np.ndarray) -> np.ndarray:
    """``Delta^-1 (Omega + Upsilon2 + Xi + PhiBar) Delta^-1``."""
    return fixed_T_covariance(vt.Delta, Omega + vt.Upsilon2 + vt.Xi + vt.PhiBar)


def expansion_terms(
    theta0: Coefs,
    fs0: FactorStructure,
    ins,
    eps_tilde: np.ndarray,
    nT: tuple[int, int],
) -> dict[str, np.ndarray]:
    """Score pieces ``c`` and ``b1`` to ``b4`` of the local expansion at the truth.

    ``eps_tilde`` is the projected error ``Q' eps``; only simulations know it.
    """
    ins = _as_instruments(ins)
    n, T = nT
    nt, s = n * T, np.sqrt(n * T)
    E = np.asarray(eps_tilde, dtype=float)
    G = lag_response_G(theta0.alpha, T)
    _, MF, ML, H = _factor_pieces(fs0)
    p = len(ins.Z)
    c = np.array([np.trace(z @ MF @ E.T @ ML) for z in ins.Z]) / nt
    b1 = np.zeros(p)
    b1[0] = np.trace(MF @ G @ MF @ E.T @ ML @ E) / s
    b2 = -np.array([np.trace(MF @ E.T @ ML @ z @ H @ E) for z in ins.Z]) / s
    b3 = -np.array([np.trace(MF @ z.T @ ML @ E @ H @ E) for z in ins.Z]) / s
    b4 = -np.array([np.trace(MF @ E.T @ ML @ E @ H @ z) for z in ins.Z]) / s
    return {"c": c, "b1": b1, "b2": b2, "b3": b3, "b4": b4}


# -- closed forms for the individual-effects case ---------------------------


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not abs(alpha) < 1.0:
        raise ValueError(f"|alpha| must be < 1, got {alpha}")
    return alpha


def nickell_sum(alpha: float, T: int) -> float:
    """``sum_{t=1}^{T-1} sum_{tau=1}^{t} alpha^(tau-1)`` in closed form."""
    alpha = _check_alpha(alpha)
    if T < 1:
        raise DimensionError("T must be at least 1")
    return T / (1.0 - alpha) * (1.0 - (1.0 - alpha**T) / (T * (1.0 - alpha)))


def nickell_bias(alpha: float, T: int, n: int, K: int) -> float:
    """``sqrt(T/n) K / (1 - alpha) (1 - (1 - alpha^T) / (T (1 - alpha)))``."""
    return np.sqrt(T / n) * K * nickell_sum(alpha, T) / T


def nickell_bias_untransformed(alpha: float, T: int, n: int) -> float:
    """Same bias without the projection: ``sqrt(n/T) / (1 - alpha) (...)``."""
    return np.sqrt(n / T) * nickell_sum(alpha, T) / T


# -- intervals ---------------------------------------------------------------


def _z(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if level == 0.95:
        return Z_95
    return NormalDist().inv_cdf(0.5 + level / 2.0)


def confidence_intervals(
    result,
    cov: np.ndarray | None = None,
    nT: int | tuple[int, int] | None = None,
    level: float = 0.95,
) -> np.ndarray:
    """Rows ``(lo, hi)`` per coefficient: ``theta_hat +- z sqrt(cov_jj / nT)``.

    ``result`` may be an ``EstimateResult`` (whose ``cov`` and ``nobs`` are
    used when ``cov`` and ``nT`` are omitted) or a ``Coefs``.
    """
    theta = result if isinstance(result, Coefs) else result.theta_hat
    if cov is None:
        cov = result.cov
    if nT is None:
        nT = result.nobs
    if cov is None or nT is None:
        raise ValueError("a covariance matrix and sample size are required")
    nobs = nT[0] * nT[1] if isinstance(nT, tuple) else int(nT)
    d = np.diag(np.asarray(cov, dtype=float))
    if np.any(d < 0):
        raise ValueError("covariance has a negative diagonal entry")
    half = _z(level) * np.sqrt(d / nobs)
    th = theta.vector
    return np.column_stack([th - half, th + half])
