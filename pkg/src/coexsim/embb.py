"""eMBB hardening-bound SINR, spectral efficiency and PUNC service outage."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class NegativeDenominatorError(ArithmeticError):
    """Interference-plus-noise estimate came out non-positive (ensemble too small)."""


def sinr_all(varrho: np.ndarray, g_hat: np.ndarray, mean_abs2: np.ndarray, sigma2_d: float, strict: bool = True) -> np.ndarray:
    """Hardening-bound SINR for every user.

    ``varrho``: (..., L*K) effective transmit powers (A rho_u or A_tilde rho_e);
    ``g_hat``: (L*K,) E[g] of each own channel; ``mean_abs2``: (L*K, L*K)
    E|g|^2 with receivers on rows and transmitters on columns.
    """
    num = varrho * np.abs(g_hat) ** 2
    den = varrho @ mean_abs2.T - num + sigma2_d
    bad = ~(den > 0)
    if np.any(bad):
        msg = f"{int(bad.sum())} non-positive SINR denominators (min {np.min(den):.3e}); increase the realization count"
        if strict:
            raise NegativeDenominatorError(msg)
        log.warning(msg)
        den = np.where(bad, sigma2_d * 1e-6, den)
    return num / den


def embb_se(sinr: np.ndarray, tau_d: int, tau_c: int) -> np.ndarray:
    """SE in bit/s/Hz from per-slot SINRs stacked on axis 0."""
    return (tau_d / tau_c) * np.mean(np.log2(1.0 + sinr), axis=0)


def service_outage(cell_sum_se: np.ndarray) -> float:
    """Fraction of (snapshot, cell) samples with zero eMBB sum SE."""
    x = np.asarray(cell_sum_se)
    return float(np.mean(x == 0.0))


def outage_tolerance(p: float, n: int, k: float = 3.0) -> float:
    """k-sigma binomial half-width."""
    return k * np.sqrt(p * (1 - p) / n)


@dataclass
class EmbbMetrics:
    """eMBB results of one snapshot: ``sinr`` (T, L, K_e), ``se`` (L, K_e), ``cell_sum`` (L,)."""

    sinr: np.ndarray
    se: np.ndarray
    cell_sum: np.ndarray

    @property
    def outage(self) -> np.ndarray:
        return self.cell_sum == 0.0

    @property
    def active_se(self) -> np.ndarray:
        return self.se[self.se > 0]


def embb_metrics(varrho: np.ndarray, g_hat: np.ndarray, mean_abs2: np.ndarray, sigma2_d: float, K_u: int, tau_d: int, tau_c: int, strict: bool = True) -> EmbbMetrics:
    """``varrho``: (T, L, K) effective powers of one slot pattern."""
    T, L, K = varrho.shape
    s = sinr_all(varrho.reshape(T, L * K), g_hat, mean_abs2, sigma2_d, strict=strict).reshape(T, L, K)[..., K_u:]
    se = embb_se(s, tau_d, tau_c)
    return EmbbMetrics(s, se, se.sum(axis=-1))
