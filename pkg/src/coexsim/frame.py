"""TDD frame layout, URLLC activation patterns, PUNC/SPC coefficients and
URLLC-first pilot assignment."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

PUNC = "punc"
SPC = "spc"
MODES = (PUNC, SPC)


@dataclass
class FrameConfig:
    """Frame partition in channel uses.

    ``tau_p`` defaults to ``f * K`` when given through :meth:`from_reuse`;
    ``n_d`` defaults to ``floor((tau_c - tau_p) / T)``.
    """

    tau_c: int = 580
    tau_p: int = 80
    T: int = 5
    a_u: float = 10**-0.5
    mode: str = SPC
    b: int = 160
    n_d: Optional[int] = None
    f: Optional[int] = None

    def __post_init__(self):
        if self.n_d is None and self.T >= 1:
            self.n_d = (self.tau_c - self.tau_p) // self.T

    @classmethod
    def from_reuse(cls, f: int, K: int, **kw) -> "FrameConfig":
        return cls(tau_p=f * K, f=f, **kw)

    @property
    def tau_d(self) -> int:
        return self.tau_c - self.tau_p

    @property
    def rate_nats(self) -> float:
        """URLLC rate b*ln2/n_d in nats per channel use."""
        return self.b * math.log(2.0) / self.n_d

    @property
    def rate_bits(self) -> float:
        return self.b / self.n_d

    def errors(self) -> list[str]:
        errs = []
        if self.mode not in MODES:
            errs.append(f"mode must be one of {MODES} (got {self.mode!r})")
        if self.tau_p < 1:
            errs.append(f"tau_p must be >= 1 (got {self.tau_p})")
        if self.T < 1:
            errs.append(f"T must be >= 1 (got {self.T})")
        if self.n_d is None or self.n_d < 1:
            errs.append(f"n_d must be >= 1 (tau_c={self.tau_c}, tau_p={self.tau_p}, T={self.T}, n_d={self.n_d})")
        elif self.tau_p + self.T * self.n_d > self.tau_c:
            errs.append(
                f"tau_p + T*n_d exceeds tau_c (tau_p={self.tau_p}, T={self.T}, n_d={self.n_d}, tau_c={self.tau_c})"
            )
        if not 0.0 <= self.a_u <= 1.0:
            errs.append(f"a_u must lie in [0, 1] (got {self.a_u})")
        if self.b < 1:
            errs.append(f"b must be >= 1 (got {self.b})")
        return errs

    def validate(self) -> None:
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))


def coexistence_coefficients(A: np.ndarray, mode: str) -> np.ndarray:
    """A_tilde[t, j] from activations A[t, j, i]: 1 under SPC, (1 - sum_i A)^+ under PUNC."""
    if mode == SPC:
        return np.ones(A.shape[:2])
    if mode == PUNC:
        return np.clip(1.0 - A.sum(axis=-1), 0.0, None)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class ActivationMatrix:
    A: np.ndarray  # (T, L, K_u) in {0, 1}
    mode: str
    A_tilde: np.ndarray = field(init=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.int8)
        self.A_tilde = coexistence_coefficients(self.A, self.mode)

    def with_mode(self, mode: str) -> "ActivationMatrix":
        return ActivationMatrix(self.A, mode)

    def to_json(self) -> str:
        return json.dumps({"mode": self.mode, "A": self.A.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ActivationMatrix":
        d = json.loads(text)
        return cls(np.array(d["A"], dtype=np.int8), d["mode"])


def draw_activations(cfg: FrameConfig, K_u: int, L: int, rng: np.random.Generator) -> ActivationMatrix:
    A = rng.random((cfg.T, L, K_u)) < cfg.a_u
    return ActivationMatrix(A, cfg.mode)


def punc_outage_probability(K_u: int, a_u: float, T: int) -> float:
    """Probability that every slot of a frame is punctured."""
    return (1.0 - (1.0 - a_u) ** K_u) ** T


@dataclass
class PilotPlan:
    pilot_index: np.ndarray  # (L, K)
    tau_p: int

    def copilots(self, j: int, k: int) -> set[tuple[int, int]]:
        """P_jk: every (cell, user) sharing the pilot of user k in cell j."""
        ls, ks = np.nonzero(self.pilot_index == self.pilot_index[j, k])
        return set(zip(ls.tolist(), ks.tolist()))

    def groups(self) -> dict[int, list[tuple[int, int]]]:
        out: dict[int, list[tuple[int, int]]] = {}
        for (l, k), p in np.ndenumerate(self.pilot_index):
            out.setdefault(int(p), []).append((l, k))
        return out

    def inner_product(self, a: tuple[int, int], b: tuple[int, int]) -> int:
        return self.tau_p if self.pilot_index[a] == self.pilot_index[b] else 0


def _spread(pool: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` pilots from ``pool``, each reused as evenly as possible, in random order."""
    reps = -(-count // len(pool))
    return np.concatenate([rng.permutation(pool) for _ in range(reps)])[:count]


def assign_pilots(tau_p: int, urllc_mask: np.ndarray, rng: np.random.Generator, urllc_priority: bool = True) -> PilotPlan:
    """Pilot indices for every user.

    With ``urllc_priority`` the URLLC users get network-unique pilots whenever
    at least one pilot is left for the eMBB users; eMBB users then draw from
    the remaining pool, orthogonally within a cell when the pool allows.
    With ``tau_p >= L*K`` everybody is unique. Otherwise pilots are spread at
    random over the whole population. Without ``urllc_priority`` the
    conventional per-cell cyclic reuse is used.
    """
    if tau_p < 1:
        raise ValueError("tau_p must be >= 1")
    L, K = urllc_mask.shape
    idx = np.empty((L, K), dtype=np.int64)
    if tau_p >= L * K:
        idx[:] = np.arange(L * K).reshape(L, K)
        return PilotPlan(idx, tau_p)
    if not urllc_priority:
        idx[:] = np.arange(K)[None, :] % tau_p
        return PilotPlan(idx, tau_p)
    n_u = int(urllc_mask.sum())
    if tau_p > n_u:
        idx[urllc_mask] = np.arange(n_u)
        pool = np.arange(n_u, tau_p)
        for l in range(L):
            e = ~urllc_mask[l]
            idx[l, e] = _spread(pool, int(e.sum()), rng)
    else:
        pool = np.arange(tau_p)
        for l in range(L):
            idx[l] = _spread(pool, K, rng)
    return PilotPlan(idx, tau_p)
