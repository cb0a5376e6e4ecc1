"""Eigenvalue-ratio selection of the number of factors at fixed T."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qpcpanel.errors import DimensionError
from qpcpanel.objective import composite_residual
from qpcpanel.panel import Coefs
from qpcpanel.transform import TransformedPanel

__all__ = ["EigRReport", "eigenvalue_ratio", "eigenvalue_ratio_from_residual"]


@dataclass(frozen=True)
class EigRReport:
    """Shifted eigenvalues (descending), their consecutive ratios and the selected count.

    ``degenerate`` is set when every ratio is equal, in which case
    ``R_hat`` falls back to 1.
    """

    mu_star: np.ndarray
    ratios: np.ndarray
    R_hat: int
    degenerate: bool = False


def eigenvalue_ratio_from_residual(W: np.ndarray, n: int) -> EigRReport:
    """Ratio statistic from a composite residual ``W`` (m x T)."""
    W = np.asarray(W, dtype=float)
    T = W.shape[1]
    if T < 2:
        raise DimensionError("the ratio statistic needs T >= 2")
    mu = np.linalg.eigvalsh(W.T @ W / (n * T))[::-1]
    mu_star = np.clip(mu, 0.0, None) + 1.0 / n
    ratios = mu_star[:-1] / mu_star[1:]
    degenerate = bool(np.ptp(ratios) <= 1e-12 * ratios.max())
    # argmax returns the first maximiser, so ties go to the smaller count
    R_hat = 1 if degenerate else int(np.argmax(ratios)) + 1
    return EigRReport(mu_star, ratios, R_hat, degenerate)


def eigenvalue_ratio(tp: TransformedPanel, theta_hat: Coefs, n: int | None = None) -> EigRReport:
    """Select the factor count from the composite residual at ``theta_hat``.

    ``theta_hat`` should come from a fit that over-states the number of
    factors.  ``n`` defaults to the panel's cross-section size.
    """
    return eigenvalue_ratio_from_residual(composite_residual(tp, theta_hat), n or tp.n)
