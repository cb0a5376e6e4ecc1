"""Simulation design: two standard-normal factors, one covariate loading on them.

Each replication draws from independent counter-based streams keyed by
``(seed, replication, stream)``, so any replication can be regenerated
alone and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from qpcpanel.panel import Coefs, FactorStructure, PanelData

__all__ = ["DgpConfig", "SimTruth", "generate", "rng_stream"]

ErrorMode = Literal["heteroskedastic-diagonal", "iid", "custom"]

_STREAMS = {"loadings": 0, "factors": 1, "covariates": 2, "sigmas": 3, "errors": 4, "burn": 5}


def rng_stream(seed: int, replication: int, stream: str) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(replication), _STREAMS[stream]])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DgpConfig:
    """Simulation settings.

    ``error_mode`` selects diagonal covariances with entries drawn from
    ``het_range`` (``heteroskedastic-diagonal``), ``sigma2 * I_n`` and
    ``I_T`` (``iid``; ``sigma2 = 0`` gives a noiseless panel), or the fixed
    ``Sigma_n``/``Sigma_T`` pair (``custom``).  Errors of the burn-in
    periods use the cross-section covariance and, per period, a time
    variance drawn like the in-sample ones.
    """

    n: int = 300
    T: int = 6
    R_star: int = 2
    alpha0: float = 0.5
    beta0: tuple[float, ...] = (1.0, 1.0)
    het_range: tuple[float, float] = (0.5, 2.5)
    burn_in: int = 100
    seed: int = 0
    error_mode: ErrorMode = "heteroskedastic-diagonal"
    sigma2: float = 1.0
    Sigma_n: np.ndarray | None = field(default=None, repr=False)
    Sigma_T: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not abs(self.alpha0) < 1:
            raise ValueError("|alpha0| must be < 1")
        if not 0 < self.het_range[0] <= self.het_range[1]:
            raise ValueError("het_range must satisfy 0 < lo <= hi")
        if len(self.beta0) < 1:
            raise ValueError("beta0 needs at least one slope")
        if self.n < 1 or self.T < 2 or self.R_star < 0 or self.burn_in < 0:
            raise ValueError("invalid dimensions")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if self.error_mode == "custom" and (self.Sigma_n is None or self.Sigma_T is None):
            raise ValueError("custom error mode needs Sigma_n and Sigma_T")
        if self.error_mode not in ("heteroskedastic-diagonal", "iid", "custom"):
            raise ValueError(f"unknown error mode {self.error_mode!r}")
        object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))

    @property
    def K(self) -> int:
        return len(self.beta0)


@dataclass(frozen=True)
class SimTruth:
    Lambda: np.ndarray
    F: np.ndarray
    Sigma_n: np.ndarray
    Sigma_T: np.ndarray
    epsilon: np.ndarray
    theta0: Coefs
    y0: np.ndarray

    def factor_structure(self, Q: np.ndarray) -> FactorStructure:
        """True factors of the projected model, initial condition included.

        The period-1 equation carries ``alpha * y0``, so the extra factor is
        ``alpha * e_1`` with loading ``y0``.
        """
        T = self.F.shape[0]
        e1 = np.zeros(T)
        e1[0] = self.theta0.alpha
        F = np.column_stack([e1, self.F])
        L = Q.T @ np.column_stack([self.y0, self.Lambda])
        return FactorStructure(F, L)


def _sqrt_psd(S: np.ndarray) -> np.ndarray:
    if np.count_nonzero(S - np.diag(np.diag(S))) == 0:
        return np.diag(np.sqrt(np.diag(S)))
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _covariates(rng, Lambda, F, K):
    n, T = Lambda.shape[0], F.shape[0]
    X1 = Lambda @ F.T + rng.standard_normal((n, T))
    return [X1] + [rng.standard_normal((n, T)) for _ in range(K - 1)]


def generate(cfg: DgpConfig, replication: int = 0) -> tuple[PanelData, SimTruth]:
    """Draw one panel.  Deterministic given ``(cfg.seed, replication)``."""
    n, T, R, K = cfg.n, cfg.T, cfg.R_star, cfg.K
    alpha, beta = cfg.alpha0, np.asarray(cfg.beta0)
    key = (cfg.seed, replication)

    Lambda = rng_stream(*key, "loadings").standard_normal((n, R))
    F = rng_stream(*key, "factors").standard_normal((T, R))
    X = _covariates(rng_stream(*key, "covariates"), Lambda, F, K)

    sig_rng = rng_stream(*key, "sigmas")
    lo, hi = cfg.het_range
    if cfg.error_mode == "heteroskedastic-diagonal":
        Sigma_n = np.diag(sig_rng.uniform(lo, hi, n))
        Sigma_T = np.diag(sig_rng.uniform(lo, hi, T))
        burn_var = sig_rng.uniform(lo, hi, cfg.burn_in)
    elif cfg.error_mode == "iid":
        Sigma_n = cfg.sigma2 * np.eye(n)
        Sigma_T = np.eye(T)
        burn_var = np.ones(cfg.burn_in)
    else:
        Sigma_n = np.asarray(cfg.Sigma_n, dtype=float)
        Sigma_T = np.asarray(cfg.Sigma_T, dtype=float)
        if Sigma_n.shape != (n, n) or Sigma_T.shape != (T, T):
            raise ValueError("custom covariances do not match (n, T)")
        burn_var = np.full(cfg.burn_in, np.trace(Sigma_T) / T)
    Sn_half = _sqrt_psd(Sigma_n)

    U = rng_stream(*key, "errors").standard_normal((n, T))
    eps = Sn_half @ U @ _sqrt_psd(Sigma_T)

    # burn-in: same loadings, fresh factors, covariates and errors each period
    burn = rng_stream(*key, "burn")
    y = np.zeros(n)
    for b in range(cfg.burn_in):
        f = burn.standard_normal((1, R))
        xb = _covariates(burn, Lambda, f, K)
        e = Sn_half @ burn.standard_normal(n) * np.sqrt(burn_var[b])
        y = alpha * y + sum(bk * x[:, 0] for bk, x in zip(beta, xb)) + Lambda @ f[0] + e
    y0 = y

    rhs = sum(bk * x for bk, x in zip(beta, X)) + Lambda @ F.T + eps
    Y = np.empty((n, T))
    prev = y0
    for t in range(T):
        prev = Y[:, t] = alpha * prev + rhs[:, t]

    truth = SimTruth(Lambda, F, Sigma_n, Sigma_T, eps, Coefs(alpha, beta), y0)
    return PanelData(Y, tuple(X), y0), truth
