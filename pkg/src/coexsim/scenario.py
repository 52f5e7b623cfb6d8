"""Network snapshots: cell grid with wrap-around, user drops, path loss and
local-scattering spatial correlation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class NetworkConfig:
    L: int = 4
    M: int = 100
    K: int = 20
    alpha: float = 0.2
    cell_side_m: float = 500.0
    min_bs_dist_m: float = 25.0
    urllc_box_m: float = 125.0
    carrier_ghz: float = 2.0
    bandwidth_mhz: float = 20.0
    sigma2_ul: float = dbm_to_watt(-94.0)
    sigma2_dl: float = dbm_to_watt(-94.0)
    rho_max: float = dbm_to_watt(46.0)
    p_ul: float = dbm_to_watt(23.0)
    shadowing_db: float = 4.0
    angular_spread_deg: float = 25.0
    rng_seed: int = 0

    @property
    def K_u(self) -> int:
        return int(round(self.alpha * self.K))

    @property
    def K_e(self) -> int:
        return self.K - self.K_u

    def errors(self) -> list[str]:
        errs = []
        if self.L < 1:
            errs.append(f"L must be >= 1 (got {self.L})")
        if self.M < 1:
            errs.append(f"M must be >= 1 (got {self.M})")
        if self.K < 2:
            errs.append(f"K must be >= 2 (got {self.K})")
        if not 0.0 < self.alpha < 1.0:
            errs.append(f"alpha must lie in (0, 1) (got {self.alpha})")
        elif abs(self.alpha * self.K - round(self.alpha * self.K)) > 1e-9 or self.K_u in (0, self.K):
            errs.append(f"alpha*K must be an integer in [1, K-1] (alpha={self.alpha}, K={self.K})")
        for name in ("sigma2_ul", "sigma2_dl", "rho_max", "p_ul"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0 (got {getattr(self, name)})")
        if self.shadowing_db < 0:
            errs.append(f"shadowing_db must be >= 0 (got {self.shadowing_db})")
        if self.angular_spread_deg < 0:
            errs.append(f"angular_spread_deg must be >= 0 (got {self.angular_spread_deg})")
        if not self.cell_side_m > 2 * self.min_bs_dist_m:
            errs.append(
                f"cell_side_m must exceed 2*min_bs_dist_m "
                f"(cell_side_m={self.cell_side_m}, min_bs_dist_m={self.min_bs_dist_m})"
            )
        if not 0 < self.urllc_box_m <= self.cell_side_m:
            errs.append(f"urllc_box_m must lie in (0, cell_side_m] (got {self.urllc_box_m})")
        elif self.urllc_box_m / 2 * math.sqrt(2) <= self.min_bs_dist_m:
            errs.append("urllc_box_m too small: no point of the URLLC box clears min_bs_dist_m")
        return errs

    def validate(self) -> None:
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))


class GeometryError(RuntimeError):
    """Rejection sampling could not place a user within the retry budget."""


def grid_shape(L: int) -> tuple[int, int]:
    """Most square (rows, cols) factorisation of ``L``."""
    rows = int(math.isqrt(L))
    while L % rows:
        rows -= 1
    return rows, L // rows


def bs_positions(L: int, side: float) -> np.ndarray:
    rows, cols = grid_shape(L)
    ii, jj = np.divmod(np.arange(L), cols)
    return np.stack([(jj + 0.5) * side, (ii + 0.5) * side], axis=-1)


def wrapped_displacement(points: np.ndarray, origin: np.ndarray, torus: tuple[float, float]) -> np.ndarray:
    """Shortest displacement ``points - origin`` over the 9 torus images."""
    d = np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)
    shifts = np.array([(a * torus[0], b * torus[1]) for a in (-1, 0, 1) for b in (-1, 0, 1)])
    cand = d[..., None, :] + shifts
    best = np.argmin(np.sum(cand**2, axis=-1), axis=-1)
    return np.take_along_axis(cand, best[..., None, None], axis=-2)[..., 0, :]


def wrapped_distance(a: np.ndarray, b: np.ndarray, torus: tuple[float, float]) -> np.ndarray:
    return np.linalg.norm(wrapped_displacement(a, b, torus), axis=-1)


def path_loss_db(distance_m, shadowing_draw_db=0.0):
    """3GPP NLoS macro-cell gain in dB (2 GHz), plus a shadowing term."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = -35.3 - 37.6 * np.log10(d) + np.asarray(shadowing_draw_db, dtype=float)
    return float(out) if out.ndim == 0 else out


_GL_NODES = 200


def _scattering_coefficients(M, angles, spread_deg, beta, nodes=_GL_NODES):
    """First column of the Toeplitz correlation for each link.

    ``c[..., n] = beta * E[exp(i*pi*n*sin(theta + delta))]`` with delta uniform
    on [-spread/2, spread/2], by Gauss-Legendre quadrature.
    """
    angles, beta = np.broadcast_arrays(np.asarray(angles, dtype=float), np.asarray(beta, dtype=float))
    half = np.deg2rad(spread_deg) / 2.0
    x, w = np.polynomial.legendre.leggauss(nodes)
    delta = half * x
    w = w / 2.0  # weights of the uniform density on [-half, half] after rescaling
    n = np.arange(M)
    flat = angles.reshape(-1)
    c = np.empty((flat.size, M), dtype=complex)
    chunk = 32
    for s in range(0, flat.size, chunk):
        phase = np.sin(flat[s : s + chunk, None] + delta)  # (chunk, nodes)
        c[s : s + chunk] = np.exp(1j * np.pi * phase[..., None] * n).transpose(0, 2, 1) @ w
    return beta[..., None] * c.reshape(angles.shape + (M,))


def _toeplitz_hermitian(c: np.ndarray) -> np.ndarray:
    M = c.shape[-1]
    idx = np.arange(M)[:, None] - np.arange(M)[None, :]
    R = c[..., np.abs(idx)]
    return np.where(idx >= 0, R, np.conj(R))


def _repair_psd_eig(R: np.ndarray, beta):
    """repair_psd plus the eigendecomposition (lam, U) of the returned matrices."""
    R = 0.5 * (R + np.conj(np.swapaxes(R, -1, -2)))
    lam, U = np.linalg.eigh(R)
    bad = lam[..., 0] < -1e-9 * lam[..., -1]
    if not np.any(bad):
        return R, lam, U
    M = R.shape[-1]
    lam_c = np.clip(lam, 0.0, None)
    fixed = (U * lam_c[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))
    scale = np.asarray(beta) * M / np.real(np.trace(fixed, axis1=-2, axis2=-1))
    fixed = fixed * scale[..., None, None]
    R = np.where(bad[..., None, None], fixed, R)
    lam = np.where(bad[..., None], lam_c * scale[..., None], lam)
    return R, lam, U


def repair_psd(R: np.ndarray, beta) -> np.ndarray:
    """Clip eigenvalues that fall below -1e-9 * lambda_max and restore tr(R)/M = beta."""
    return _repair_psd_eig(R, beta)[0]


def _check_corr_args(M, beta):
    if M < 1:
        raise ValueError("M must be >= 1")
    if np.any(np.asarray(beta) <= 0):
        raise ValueError("beta must be positive")


def local_scattering_correlation(M: int, nominal_angle_rad, angular_spread_deg: float, beta, nodes: int = _GL_NODES):
    """M x M spatial correlation of a half-wavelength ULA under local scattering.

    Broadcasts over leading dimensions of ``nominal_angle_rad`` and ``beta``.
    """
    _check_corr_args(M, beta)
    c = _scattering_coefficients(M, nominal_angle_rad, angular_spread_deg, beta, nodes)
    return repair_psd(_toeplitz_hermitian(c), beta)


def steering_vector(M: int, angle_rad: float) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(M) * np.sin(angle_rad))


@dataclass
class ScenarioSnapshot:
    """One network drop.

    Arrays are indexed ``[j, l, k]`` = (BS, cell of the user, user in cell).
    URLLC users occupy indices ``0..K_u-1`` of every cell.
    """

    cfg: NetworkConfig
    bs_positions: np.ndarray  # (L, 2)
    user_positions: np.ndarray  # (L, K, 2)
    urllc_mask: np.ndarray  # (L, K) bool
    shadowing_db: np.ndarray  # (L, L, K)
    distance_m: np.ndarray = field(init=False)
    angle_rad: np.ndarray = field(init=False)
    beta: np.ndarray = field(init=False)
    R: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cfg = self.cfg
        rows, cols = grid_shape(cfg.L)
        torus = (cols * cfg.cell_side_m, rows * cfg.cell_side_m)
        disp = wrapped_displacement(self.user_positions[None, :, :, :], self.bs_positions[:, None, None, :], torus)
        self.distance_m = np.linalg.norm(disp, axis=-1)
        self.angle_rad = np.arctan2(disp[..., 1], disp[..., 0])
        self.beta = 10.0 ** (path_loss_db(self.distance_m, self.shadowing_db) / 10.0)
        _check_corr_args(cfg.M, self.beta)
        c = _scattering_coefficients(cfg.M, self.angle_rad, cfg.angular_spread_deg, self.beta)
        R, self._lam, self._U = _repair_psd_eig(_toeplitz_hermitian(c), self.beta)
        self.R = np.ascontiguousarray(R)

    @property
    def L(self) -> int:
        return self.cfg.L

    @property
    def K(self) -> int:
        return self.cfg.K

    @property
    def M(self) -> int:
        return self.cfg.M

    @property
    def serving_beta(self) -> np.ndarray:
        """beta^j_{jk}, shape (L, K)."""
        return self.beta[np.arange(self.L), np.arange(self.L)]

    @cached_property
    def sqrt_R(self) -> np.ndarray:
        lam, U = self._lam, self._U
        return (U * np.sqrt(np.clip(lam, 0.0, None))[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))

    def to_json(self) -> str:
        return json.dumps(
            {
                "cfg": asdict(self.cfg),
                "bs_positions": self.bs_positions.tolist(),
                "user_positions": self.user_positions.tolist(),
                "urllc_mask": self.urllc_mask.astype(int).tolist(),
                "shadowing_db": self.shadowing_db.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSnapshot":
        d = json.loads(text)
        return cls(
            cfg=NetworkConfig(**d["cfg"]),
            bs_positions=np.array(d["bs_positions"], dtype=float),
            user_positions=np.array(d["user_positions"], dtype=float),
            urllc_mask=np.array(d["urllc_mask"], dtype=bool),
            shadowing_db=np.array(d["shadowing_db"], dtype=float),
        )


_MAX_TRIES = 1000


def _drop_in_square(rng, center, side, min_dist, n):
    out = np.empty((n, 2))
    filled = 0
    for _ in range(_MAX_TRIES):
        cand = center + rng.uniform(-side / 2, side / 2, size=(n, 2))
        ok = np.linalg.norm(cand - center, axis=-1) >= min_dist
        take = cand[ok][: n - filled]
        out[filled : filled + len(take)] = take
        filled += len(take)
        if filled == n:
            return out
    raise GeometryError(f"could not place {n} users in a {side} m square clear of {min_dist} m")


def draw_snapshot(cfg: NetworkConfig, rng: np.random.Generator) -> ScenarioSnapshot:
    cfg.validate()
    bs = bs_positions(cfg.L, cfg.cell_side_m)
    users = np.empty((cfg.L, cfg.K, 2))
    for l in range(cfg.L):
        users[l, : cfg.K_u] = _drop_in_square(rng, bs[l], cfg.urllc_box_m, cfg.min_bs_dist_m, cfg.K_u)
        users[l, cfg.K_u :] = _drop_in_square(rng, bs[l], cfg.cell_side_m, cfg.min_bs_dist_m, cfg.K_e)
    mask = np.zeros((cfg.L, cfg.K), dtype=bool)
    mask[:, : cfg.K_u] = True
    shadow = cfg.shadowing_db * rng.standard_normal((cfg.L, cfg.L, cfg.K))
    return ScenarioSnapshot(cfg, bs, users, mask, shadow)
