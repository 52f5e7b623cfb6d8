"""MR, RZF and multi-cell MMSE precoding, effective channels and their
ensemble statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MR = "mr"
RZF = "rzf"
MMMSE = "mmmse"
SCHEMES = (MR, RZF, MMMSE)


def _herm(X):
    return np.conj(np.swapaxes(X, -1, -2))


def normalize_columns(V: np.ndarray) -> np.ndarray:
    """w = v / ||v|| column-wise over axis -2."""
    return V / np.linalg.norm(V, axis=-2, keepdims=True)


def mr_precoder(h_hat: np.ndarray) -> np.ndarray:
    """Unit-norm MR direction; ``h_hat`` is (..., M) or (..., M, K) with columns as users."""
    if h_hat.ndim == 1:
        return h_hat / np.linalg.norm(h_hat)
    return normalize_columns(h_hat)


def rzf_precoder(H_hat: np.ndarray, p, sigma2_ul: float) -> np.ndarray:
    """Columns of H (H^H H + sigma2 P^-1)^-1, normalized. ``H_hat``: (..., M, K)."""
    K = H_hat.shape[-1]
    p = np.broadcast_to(np.asarray(p, dtype=float), (K,))
    G = _herm(H_hat) @ H_hat + np.diag(sigma2_ul / p)
    G = 0.5 * (G + _herm(G))
    # H G^-1 = (G^-1 H^H)^H with G Hermitian
    V = _herm(np.linalg.solve(G, _herm(H_hat)))
    return normalize_columns(V)


def mmmse_precoder(H_all: np.ndarray, p_all, Upsilon: np.ndarray, sigma2_ul: float, own: slice) -> np.ndarray:
    """Columns ``own`` of (sum_l H_l P_l H_l^H + Upsilon + sigma2 I)^-1 H_j P_j, normalized.

    ``H_all``: (..., M, L*K) estimates at one BS of every user in the network.
    """
    M, LK = H_all.shape[-2:]
    p_all = np.broadcast_to(np.asarray(p_all, dtype=float), (LK,))
    S = (H_all * p_all) @ _herm(H_all) + Upsilon + sigma2_ul * np.eye(M)
    S = 0.5 * (S + _herm(S))
    V = np.linalg.solve(S, H_all[..., own] * p_all[own])
    return normalize_columns(V)


def effective_channels(h: np.ndarray, W: np.ndarray) -> np.ndarray:
    """g[n, rx, l, i] = (h^l_rx)^H w_li.

    ``h``: (n, L, L*K, M) true channels; ``W``: (n, L, M, K). Returns
    (n, L*K, L*K) with transmit index ``l*K + i`` on the last axis.
    """
    n, L, LK, M = h.shape
    K = W.shape[-1]
    g = np.conj(h) @ W  # (n, L, LK, K)
    return np.moveaxis(g, 1, 2).reshape(n, LK, L * K)


def precode(scheme: str, h_hat_own: np.ndarray, p_ul: float, sigma2_ul: float, h_hat_all=None, upsilon=None) -> np.ndarray:
    """Precoders for every BS over a realization batch: (n, L, M, K).

    ``h_hat_own``: (n, L, K, M). M-MMSE also needs ``h_hat_all`` (n, L, L*K, M)
    and ``upsilon`` (L, M, M).
    """
    H = np.swapaxes(h_hat_own, -1, -2)  # (n, L, M, K)
    if scheme == MR:
        return mr_precoder(H)
    if scheme == RZF:
        return rzf_precoder(H, p_ul, sigma2_ul)
    if scheme == MMMSE:
        if h_hat_all is None or upsilon is None:
            raise ValueError("M-MMSE needs estimates of every user and the Upsilon matrices")
        n, L, K, M = h_hat_own.shape
        Ha = np.swapaxes(h_hat_all, -1, -2)  # (n, L, M, LK)
        W = np.empty((n, L, M, K), dtype=complex)
        for j in range(L):
            W[:, j] = mmmse_precoder(Ha[:, j], p_ul, upsilon[j], sigma2_ul, slice(j * K, (j + 1) * K))
        return W
    raise ValueError(f"unknown precoder {scheme!r}")


@dataclass
class EffectiveChannelStats:
    """Ensemble statistics of the effective channels of one snapshot and precoder.

    ``g_hat[u] = E[g^{u}_{u}]``; ``mean_abs2[rx, tx] = E|g^{tx}_{rx}|^2``;
    ``urllc_g``: (n, U) realizations of the own channel of each URLLC user;
    ``urllc_abs2``: (n, U, L*K) realizations of |g|^2 towards each URLLC user.
    """

    g_hat: np.ndarray
    mean_abs2: np.ndarray
    urllc_ids: np.ndarray
    urllc_g: np.ndarray
    urllc_abs2: np.ndarray
    n: int

    @property
    def var_own(self) -> np.ndarray:
        return np.diag(self.mean_abs2) - np.abs(self.g_hat) ** 2


class StatsAccumulator:
    """Associative reduction of effective-channel batches."""

    def __init__(self, LK: int, urllc_ids: np.ndarray):
        self.urllc_ids = np.asarray(urllc_ids)
        self.sum_g = np.zeros(LK, dtype=complex)
        self.sum_abs2 = np.zeros((LK, LK))
        self.ug, self.uabs2 = [], []
        self.n = 0

    def add(self, g: np.ndarray) -> None:
        own = np.einsum("nii->ni", g)
        a2 = np.abs(g) ** 2
        self.sum_g += own.sum(axis=0)
        self.sum_abs2 += a2.sum(axis=0)
        self.ug.append(own[:, self.urllc_ids])
        self.uabs2.append(a2[:, self.urllc_ids])
        self.n += g.shape[0]

    def finalize(self) -> EffectiveChannelStats:
        return EffectiveChannelStats(
            g_hat=self.sum_g / self.n,
            mean_abs2=self.sum_abs2 / self.n,
            urllc_ids=self.urllc_ids,
            urllc_g=np.concatenate(self.ug),
            urllc_abs2=np.concatenate(self.uabs2),
            n=self.n,
        )


def hardening_ratio(g_own: np.ndarray) -> float:
    """Var[g] / |E g|^2 of an ensemble of own effective channels."""
    m = np.mean(g_own)
    return float(np.mean(np.abs(g_own - m) ** 2) / np.abs(m) ** 2)
