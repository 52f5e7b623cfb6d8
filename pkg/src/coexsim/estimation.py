"""Uplink training: channel draws, despread pilot statistics and MMSE estimates.

Flat user index ``u = l*K + k`` is used throughout; channel ensembles have
shape ``(n, L_bs, L*K, M)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frame import PilotPlan
from .rng import crandn
from .scenario import ScenarioSnapshot


def _herm(X: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(X, -1, -2))


def draw_channels(snapshot: ScenarioSnapshot, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """h ~ CN(0, R) for every (BS, user) link: shape (n, L, L*K, M)."""
    L, K, M = snapshot.L, snapshot.K, snapshot.M
    S = snapshot.sqrt_R.reshape(L, L * K, M, M)
    x = crandn(rng, (L, L * K, M, n))
    return np.ascontiguousarray(np.moveaxis(S @ x, -1, 0))


def correlated_draws(R: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    """n draws from CN(0, R) for a single M x M correlation; shape (n, M)."""
    lam, U = np.linalg.eigh(0.5 * (R + _herm(R)))
    S = U * np.sqrt(np.clip(lam, 0.0, None))
    return crandn(rng, (n, R.shape[-1])) @ S.T


def pilot_noise(rng: np.random.Generator, shape, tau_p: int, sigma2_ul: float) -> np.ndarray:
    """Despread receiver noise N*phi^*, distributed CN(0, tau_p * sigma2 * I)."""
    return crandn(rng, shape, tau_p * sigma2_ul)


def despread_pilot(h: np.ndarray, plan: PilotPlan, p, noise: np.ndarray) -> np.ndarray:
    """Despread statistic per (BS, pilot).

    ``h``: (n, L_bs, L*K, M); ``p``: uplink power per user (scalar or (L*K,));
    ``noise``: (n, L_bs, tau_p, M). Returns y of shape (n, L_bs, tau_p, M) with
    ``y[:, j, pi] = sqrt(p) tau_p sum_{u on pi} h[:, j, u] + noise[:, j, pi]``.
    """
    tau_p = plan.tau_p
    pil = plan.pilot_index.reshape(-1)
    amp = np.sqrt(np.broadcast_to(np.asarray(p, dtype=float), pil.shape)) * tau_p
    y = noise.astype(complex, copy=True)
    onehot = np.zeros((tau_p, pil.size))
    onehot[pil, np.arange(pil.size)] = amp
    y += onehot @ h
    return y


def user_statistic(y: np.ndarray, plan: PilotPlan, j: int, k: int) -> np.ndarray:
    """y_p for user k of cell j at its own BS."""
    return y[:, j, plan.pilot_index[j, k]]


def psi_matrix(R_group: np.ndarray, p_group, tau_p: int, sigma2_ul: float) -> np.ndarray:
    """(sum_{(l,i) in P} p tau_p R + sigma2 I)^-1 for one co-pilot group."""
    M = R_group.shape[-1]
    p_group = np.broadcast_to(np.asarray(p_group, dtype=float), R_group.shape[:1])
    Q = np.einsum("u,umn->mn", p_group * tau_p, R_group) + sigma2_ul * np.eye(M)
    Q = 0.5 * (Q + _herm(Q))
    return np.linalg.solve(Q, np.eye(M))


def mmse_estimate(y: np.ndarray, Psi: np.ndarray, R: np.ndarray, p: float) -> np.ndarray:
    """h_hat = sqrt(p) R Psi y; ``y`` has shape (..., M)."""
    return np.sqrt(p) * np.einsum("mn,...n->...m", R @ Psi, y)


def error_covariance(R: np.ndarray, Psi: np.ndarray, p: float, tau_p: int) -> np.ndarray:
    C = R - p * tau_p * (R @ Psi @ R)
    return 0.5 * (C + _herm(C))


@dataclass
class EstimationResult:
    """Estimates for one realization batch.

    ``h``: true channels (n, L, L*K, M). ``h_hat``: estimates, either for all
    (BS, user) pairs (n, L, L*K, M) or only for each BS's own users
    (n, L, K, M) when ``own_only``.
    """

    h: np.ndarray
    h_hat: np.ndarray
    own_only: bool


class ChannelEstimator:
    """MMSE estimation for one (snapshot, pilot plan); Psi is built once and reused."""

    def __init__(self, snapshot: ScenarioSnapshot, plan: PilotPlan, p_ul: float, sigma2_ul: float, all_links: bool = True):
        L, K, M = snapshot.L, snapshot.K, snapshot.M
        self.snapshot, self.plan = snapshot, plan
        self.L, self.K, self.M = L, K, M
        self.p, self.tau_p, self.sigma2 = p_ul, plan.tau_p, sigma2_ul
        self.all_links = all_links
        self.R = snapshot.R.reshape(L, L * K, M, M)
        pil = plan.pilot_index.reshape(-1)
        self.used, self.col = np.unique(pil, return_inverse=True)
        Q = np.zeros((L, self.used.size, M, M), dtype=complex)
        np.add.at(Q, (slice(None), self.col), p_ul * self.tau_p * self.R)
        Q += sigma2_ul * np.eye(M)
        Q = 0.5 * (Q + _herm(Q))
        self.Psi = np.linalg.solve(Q, np.broadcast_to(np.eye(M), Q.shape))
        self._own = np.arange(L)[:, None] * K + np.arange(K)[None, :]  # (L, K) flat ids of own users

    def Psi_for(self, j: int, l: int, k: int) -> np.ndarray:
        """Psi at BS j for the pilot of user (l, k)."""
        return self.Psi[j, self.col[l * self.K + k]]

    def error_covariance(self, j: int, l: int, k: int) -> np.ndarray:
        R = self.R[j, l * self.K + k]
        return error_covariance(R, self.Psi_for(j, l, k), self.p, self.tau_p)

    def own_error_covariances(self) -> np.ndarray:
        """C^j_{jk} for every (j, k): shape (L, K, M, M)."""
        R = self.R[np.arange(self.L)[:, None], self._own]
        Psi = self.Psi[np.arange(self.L)[:, None], self.col[self._own]]
        return error_covariance(R, Psi, self.p, self.tau_p)

    def upsilon(self) -> np.ndarray:
        """sum_{l,i} p C^j_{li} for every BS j: shape (L, M, M)."""
        out = np.empty((self.L, self.M, self.M), dtype=complex)
        for j in range(self.L):
            R = self.R[j]
            RPsiR = R @ self.Psi[j, self.col] @ R
            out[j] = self.p * (R.sum(axis=0) - self.p * self.tau_p * RPsiR.sum(axis=0))
        return 0.5 * (out + _herm(out))

    def estimate(self, h: np.ndarray, rng: np.random.Generator) -> EstimationResult:
        n = h.shape[0]
        noise = pilot_noise(rng, (n, self.L, self.tau_p, self.M), self.tau_p, self.sigma2)
        y = despread_pilot(h, self.plan, self.p, noise)
        return self.estimate_from(h, y)

    def estimate_from(self, h: np.ndarray, y: np.ndarray) -> EstimationResult:
        # z[:, j, c] = Psi^j_c y^j_c over the used pilots only
        z = self.Psi @ np.moveaxis(y[:, :, self.used], 0, -1)  # (L, C, M, n)
        if self.all_links:
            h_hat = np.sqrt(self.p) * np.moveaxis(self.R @ z[:, self.col], -1, 0)
            return EstimationResult(h, h_hat, own_only=False)
        R_own = self.R[np.arange(self.L)[:, None], self._own]  # (L, K, M, M)
        zt = z[np.arange(self.L)[:, None], self.col[self._own]]  # (L, K, M, n)
        h_hat = np.sqrt(self.p) * np.moveaxis(R_own @ zt, -1, 0)
        return EstimationResult(h, h_hat, own_only=True)

    def own_estimates(self, est: EstimationResult) -> np.ndarray:
        """h_hat^j_{jk} for every BS j: shape (n, L, K, M)."""
        if est.own_only:
            return est.h_hat
        return est.h_hat[:, np.arange(self.L)[:, None], self._own]
