"""Finite-blocklength URLLC analysis for a mismatched scaled nearest-neighbour
decoder.

Everything is in nats and vectorized: context fields broadcast against each
other, so one call can evaluate many (user, slot, realization) instances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcx, log_ndtr, logsumexp

log = logging.getLogger(__name__)

_SQRT2 = np.sqrt(2.0)

# branch codes
BRANCH_NEG = -1
BRANCH_MID = 0
BRANCH_CRIT = 1
BRANCH_DEGENERATE = 2


class BranchConsistencyError(AssertionError):
    """Solved tilt and rate comparisons disagree on the saddlepoint branch."""


class RootFindingError(RuntimeError):
    pass


def info_density(s, q, y, g_hat, rho):
    """Generalized information density i_s(q, y) of the scaled nearest-neighbour metric."""
    c = s * rho * np.abs(g_hat) ** 2
    return -s * np.abs(y - g_hat * q) ** 2 + s * np.abs(y) ** 2 / (1.0 + c) + np.log1p(c)


@dataclass
class SaddlepointContext:
    """Inputs of the conditional error-probability approximation and the derived constants.

    ``g``: realized own effective channel; ``g_hat``: its mean used by the decoder;
    ``sigma2``: conditional effective noise variance; ``R`` in nats per channel use.
    """

    g: np.ndarray
    g_hat: np.ndarray
    rho: np.ndarray
    sigma2: np.ndarray
    s: np.ndarray
    n_d: int
    R: float
    c: np.ndarray = field(init=False, repr=False)
    zeta_a: np.ndarray = field(init=False, repr=False)
    zeta_b: np.ndarray = field(init=False, repr=False)
    mu: np.ndarray = field(init=False, repr=False)
    B: np.ndarray = field(init=False, repr=False)
    C: np.ndarray = field(init=False, repr=False)
    eps_lo: np.ndarray = field(init=False, repr=False)
    eps_hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g, gh = np.asarray(self.g, dtype=complex), np.asarray(self.g_hat, dtype=complex)
        rho, s2, s = (np.asarray(x, dtype=float) for x in (self.rho, self.sigma2, self.s))
        self.g, self.g_hat, self.rho, self.sigma2, self.s = g, gh, rho, s2, s
        gh2 = np.abs(gh) ** 2
        self.c = s * rho * gh2
        self.zeta_a = s * (rho * np.abs(g - gh) ** 2 + s2)
        self.zeta_b = s * (rho * np.abs(g) ** 2 + s2) / (1.0 + self.c)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.mu = s**2 * np.abs(rho * np.abs(g) ** 2 + s2 - np.conj(g) * gh * rho) ** 2 / (
                self.zeta_a * self.zeta_b * (1.0 + self.c)
            )
        self.B = self.zeta_b - self.zeta_a
        # zeta_a zeta_b (1 - mu) written through the covariance determinant rho sigma2 |g_hat|^2,
        # which avoids the cancellation in 1 - mu
        self.C = s**2 * rho * s2 * gh2 / (1.0 + self.c)
        self.eps_lo, self.eps_hi = convergence_bounds(self.B, self.C)

    @property
    def degenerate(self) -> np.ndarray:
        return ~(self.C > 0)

    @property
    def mutual_information(self) -> np.ndarray:
        """I_s = -v'(0)."""
        return np.log1p(self.c) + self.B

    @property
    def critical_rate(self) -> np.ndarray:
        """R_cr = -v'(1), or -inf when 1 lies outside the convergence region."""
        with np.errstate(invalid="ignore", divide="ignore"):
            v1 = -cgf_and_derivs(self, np.ones_like(self.B), check=False)[1]
        return np.where(self.eps_hi > 1.0, v1, -np.inf)


def convergence_bounds(B, C):
    """Roots of 1 + B e - C e^2, i.e. the edges of the region where the CGF is finite."""
    B, C = np.asarray(B, dtype=float), np.asarray(C, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.sqrt(B * B + 4.0 * C)
        hi = np.where(B > 0, (B + root) / (2.0 * C), 2.0 / (root - B))
        lo = np.where(B < 0, (B - root) / (2.0 * C), -2.0 / (root + B))
    return lo, hi


def cgf_and_derivs(ctx: SaddlepointContext, eps, check: bool = True):
    """(v, v', v'') of the CGF of -i_s at tilt ``eps``."""
    eps = np.asarray(eps, dtype=float)
    if check and np.any((eps <= ctx.eps_lo) | (eps >= ctx.eps_hi)):
        raise ValueError("tilt outside the open convergence region")
    B, C = ctx.B, ctx.C
    D = 1.0 + B * eps - C * eps**2
    N = B - 2.0 * C * eps
    lc = np.log1p(ctx.c)
    v = -eps * lc - np.log1p(B * eps - C * eps**2)
    v1 = -lc - N / D
    v2 = (N / D) ** 2 + 2.0 * C / D
    return v, v1, v2


def _solve_tilt_closed_form(ctx: SaddlepointContext) -> np.ndarray:
    """Root of R = -v'(e) inside the convergence region.

    R = -v'(e) is the quadratic r C e^2 - (2C + r B) e + (B - r) = 0 with
    r = R - ln(1 + c); its discriminant 4C^2 + r^2 B^2 + 4 r^2 C is positive
    and exactly one root lies in the region because -v' is monotone there.
    """
    B, C = ctx.B, ctx.C
    r = ctx.R - np.log1p(ctx.c)
    a2 = r * C
    a1 = -(2.0 * C + r * B)
    a0 = B - r
    disc = np.sqrt(a1 * a1 - 4.0 * a2 * a0)
    q = -0.5 * (a1 + np.where(a1 >= 0, 1.0, -1.0) * disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        x1 = a0 / q
        x2 = q / a2
    in1 = (x1 > ctx.eps_lo) & (x1 < ctx.eps_hi)
    in2 = (x2 > ctx.eps_lo) & (x2 < ctx.eps_hi)
    return np.where(in1, x1, np.where(in2, x2, np.nan))


def solve_tilt_bisection(ctx: SaddlepointContext, tol: float = 1e-10, max_iter: int = 400) -> np.ndarray:
    """Bisection for R = -v'(e).

    -v' decreases from +inf to -inf across the convergence region, so the sign
    of -v'(0) - R picks the half-region that brackets the root.
    """
    shape = np.broadcast(ctx.B, ctx.C).shape

    def f(e):
        return -cgf_and_derivs(ctx, e, check=False)[1] - ctx.R

    with np.errstate(all="ignore"):
        f0 = np.broadcast_to(f(np.zeros(shape)), shape)
        right = f0 > 0
        lo = np.where(right, 0.0, np.broadcast_to(ctx.eps_lo, shape))
        hi = np.where(right, np.broadcast_to(ctx.eps_hi, shape), 0.0)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            lo = np.where(fm > 0, mid, lo)
            hi = np.where(fm > 0, hi, mid)
            if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(mid))):
                break
        else:
            raise RootFindingError(f"bisection did not converge: max bracket width {np.max(hi - lo):.3e}")
    return np.where(f0 == 0, 0.0, 0.5 * (lo + hi))


def solve_tilt(ctx: SaddlepointContext) -> np.ndarray:
    """Closed-form root with a bisection fallback for the instances it cannot place."""
    eps = _solve_tilt_closed_form(ctx)
    bad = ~np.isfinite(eps) & ~ctx.degenerate & np.isfinite(ctx.B)
    if np.any(bad):
        sub = SaddlepointContext(
            *(np.broadcast_to(x, eps.shape)[bad] for x in (ctx.g, ctx.g_hat, ctx.rho, ctx.sigma2, ctx.s)),
            n_d=ctx.n_d,
            R=ctx.R,
        )
        eps = eps.copy()
        eps[bad] = solve_tilt_bisection(sub)
    return eps


def _log_psi(ell, a):
    """log of exp(a^2 ell^2 / 2) Q(a ell) for ell >= 0, via the scaled complementary error function."""
    return np.log(0.5 * erfcx(ell * a / _SQRT2))


@dataclass
class SaddlepointResult:
    eps: np.ndarray  # clipped to [0, 1]
    log_eps: np.ndarray  # natural log of the unclipped value where positive
    tilt: np.ndarray
    branch: np.ndarray
    n_clipped: int
    n_nan: int
    n_inconsistent: int


def saddlepoint_epsilon(ctx: SaddlepointContext, check: bool = True, rel_tol: float = 1e-9) -> SaddlepointResult:
    """Conditional error-probability approximation with the three tilt branches.

    Degenerate instances (no usable decoder metric, e.g. g_hat = 0) give 1.
    """
    n, R = ctx.n_d, ctx.R
    shape = np.broadcast(ctx.g, ctx.g_hat, ctx.rho, ctx.sigma2, ctx.s).shape
    with np.errstate(all="ignore"):
        eps = np.broadcast_to(solve_tilt(ctx), shape)
        v, _, v2 = cgf_and_derivs(ctx, eps, check=False)
        logp = np.full(shape, np.nan)
        raw = np.full(shape, np.nan)
        branch = np.full(shape, BRANCH_DEGENERATE, dtype=np.int8)

        mid = (eps >= 0) & (eps <= 1)
        a = np.sqrt(n * v2)
        lp = n * (v + eps * R) + np.logaddexp(_log_psi(eps, a), _log_psi(1.0 - eps, a))
        logp = np.where(mid, lp, logp)
        branch = np.where(mid, BRANCH_MID, branch)

        crit = eps > 1
        ones = np.ones(shape)
        v1_, dv1, v21 = cgf_and_derivs(ctx, ones, check=False)
        a1 = np.sqrt(n * v21)
        d = n * (-dv1 - R)  # n (R_cr - R)
        x = a1 + d / a1
        lt1 = np.log(0.5 * erfcx(x / _SQRT2)) - d * d / (2.0 * a1 * a1)
        lt2 = log_ndtr(d / a1)
        lp = n * (v1_ + R) + np.logaddexp(lt1, lt2)
        logp = np.where(crit, lp, logp)
        branch = np.where(crit, BRANCH_CRIT, branch)

        neg = eps < 0
        X = np.exp(n * (v + eps * R)) * (0.5 * erfcx(-eps * a / _SQRT2) - 0.5 * erfcx((1.0 - eps) * a / _SQRT2))
        val_neg = 1.0 - X
        branch = np.where(neg, BRANCH_NEG, branch)

        raw = np.where(neg, val_neg, np.exp(logp))
        logp = np.where(neg, np.log(val_neg), logp)

        degenerate = np.broadcast_to(ctx.degenerate, shape) & np.isfinite(np.broadcast_to(ctx.B, shape))
        raw = np.where(degenerate, 1.0, raw)
        logp = np.where(degenerate, 0.0, logp)
        branch = np.where(degenerate, BRANCH_DEGENERATE, branch)

    nan = ~np.isfinite(raw)
    clipped = (raw < 0) | (raw > 1)
    n_bad = 0
    if check:
        I_s = np.broadcast_to(ctx.mutual_information, shape)
        with np.errstate(all="ignore"):
            R_cr = np.broadcast_to(ctx.critical_rate, shape)
        tol = rel_tol * max(1.0, abs(R))
        live = ~nan & ~degenerate
        bad = live & (
            (branch == BRANCH_MID) & ((R < R_cr - tol) | (R > I_s + tol))
            | (branch == BRANCH_CRIT) & (R > R_cr + tol)
            | (branch == BRANCH_NEG) & (R < I_s - tol)
        )
        n_bad = int(bad.sum())
        if n_bad:
            raise BranchConsistencyError(f"{n_bad} instances with tilt/rate branch disagreement")
    if nan.any():
        log.debug("saddlepoint: %d non-finite instances skipped", int(nan.sum()))
    return SaddlepointResult(
        eps=np.clip(raw, 0.0, 1.0),
        log_eps=logp,
        tilt=np.asarray(eps),
        branch=branch,
        n_clipped=int((clipped & ~nan).sum()),
        n_nan=int(nan.sum()),
        n_inconsistent=n_bad,
    )


# --- Monte Carlo oracle ------------------------------------------------------


def log_m_minus_1(n_d: int, R: float) -> float:
    """ln(e^{n_d R} - 1) without overflow."""
    x = n_d * R
    return x + np.log(-np.expm1(-x))


def rcus_oracle(
    g, g_hat, rho, sigma2, s, n_d, R, num_samples, rng, method="spectral", batch=1_000_000
) -> tuple[float, float]:
    """Monte Carlo estimate of P[sum_n i_s <= ln((m - 1)/r)] and its standard error.

    ``direct`` samples q, z and r per channel use. ``spectral`` uses that the
    summed density is n ln(1+c) + l1 G1 + l2 G2 with G ~ Gamma(n_d, 1) and
    (l1, l2) the eigenvalues of the 2x2 quadratic form, which is exact and
    much cheaper.
    """
    thr = log_m_minus_1(n_d, R)
    c = s * rho * abs(g_hat) ** 2
    hits = 0
    left = int(num_samples)
    if method == "spectral":
        ctx = SaddlepointContext(g, g_hat, rho, sigma2, s, n_d, R)
        B, C = float(ctx.B), float(ctx.C)
        root = np.sqrt(B * B + 4.0 * C)
        l1, l2 = 0.5 * (B + root), 0.5 * (B - root)
        while left > 0:
            m = min(batch, left)
            G = rng.standard_gamma(n_d, size=(2, m))
            tot = n_d * np.log1p(c) + l1 * G[0] + l2 * G[1]
            hits += int(np.count_nonzero(tot <= thr - np.log(rng.random(m))))
            left -= m
    elif method == "direct":
        per = max(1, batch // n_d)
        while left > 0:
            m = min(per, left)
            q = np.sqrt(rho / 2) * (rng.standard_normal((m, n_d)) + 1j * rng.standard_normal((m, n_d)))
            z = np.sqrt(sigma2 / 2) * (rng.standard_normal((m, n_d)) + 1j * rng.standard_normal((m, n_d)))
            y = g * q + z
            tot = info_density(s, q, y, g_hat, rho).sum(axis=-1)
            hits += int(np.count_nonzero(tot <= thr - np.log(rng.random(m))))
            left -= m
    else:
        raise ValueError(f"unknown method {method!r}")
    p = hits / num_samples
    return p, np.sqrt(max(p * (1 - p), 0.0) / num_samples)


# --- s optimization and ensemble error probability -----------------------------

_GOLD = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SOptResult:
    s_tilde: np.ndarray  # optimal s in units of 1/sigma2_ref
    flat: np.ndarray  # flat objective, midpoint returned
    n_eval: int


def optimize_s(objective, n: int, lo: float = 1e-2, hi: float = 1e2, rel_tol: float = 1e-3, flat_tol: float = 1e-9) -> SOptResult:
    """Vectorized golden-section search on log s over [lo, hi].

    ``objective(s_tilde)`` maps an (n,) array of candidates to an (n,) array
    of log error probabilities. Flat objectives return the geometric midpoint
    and are flagged.
    """
    a = np.full(n, np.log(lo))
    b = np.full(n, np.log(hi))
    x1 = b - _GOLD * (b - a)
    x2 = a + _GOLD * (b - a)
    f1 = objective(np.exp(x1))
    f2 = objective(np.exp(x2))
    fmin, fmax = np.minimum(f1, f2), np.maximum(f1, f2)
    n_eval = 2
    width = np.log1p(rel_tol)
    while np.any(b - a > width):
        left = f1 <= f2  # minimum in [a, x2]
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x2n = np.where(left, x1, a + _GOLD * (b - a))
        x1n = np.where(left, b - _GOLD * (b - a), x2)
        f2n = np.where(left, f1, np.nan)
        f1n = np.where(left, np.nan, f2)
        probe = np.where(left, x1n, x2n)
        fp = objective(np.exp(probe))
        n_eval += 1
        f1 = np.where(left, fp, f1n)
        f2 = np.where(left, f2n, fp)
        x1, x2 = x1n, x2n
        fmin = np.minimum(fmin, fp)
        fmax = np.maximum(fmax, fp)
    best = np.where(f1 <= f2, x1, x2)
    spread = fmax - fmin
    flat = ~(spread > flat_tol) | ~np.isfinite(spread)
    mid = 0.5 * (np.log(lo) + np.log(hi))
    return SOptResult(np.exp(np.where(flat, mid, best)), flat, n_eval)


@dataclass
class UrllcMetrics:
    """Per-URLLC-user error probabilities for one snapshot and configuration.

    ``eps``: (U,) mean over active slots and realizations, NaN for users never
    active; ``eps_slot``: (T, U) per-slot means, NaN where inactive.
    """

    eps: np.ndarray
    eps_slot: np.ndarray
    active_slots: np.ndarray
    s: np.ndarray
    s_flat: np.ndarray
    n_realizations: int
    n_evaluations: int
    n_clipped: int
    n_nan: int


def conditional_noise(abs2: np.ndarray, varrho: np.ndarray, ids: np.ndarray, sigma2_d: float) -> np.ndarray:
    """Effective noise variance per (realization, URLLC user, slot).

    ``abs2``: (n, U, LK) realizations of |g|^2 towards each URLLC user;
    ``varrho``: (T, LK) effective transmit powers. The own term is removed.
    """
    tot = np.einsum("nui,ti->nut", abs2, varrho)
    own = abs2[:, np.arange(len(ids)), ids][:, :, None] * varrho[:, ids].T[None]
    return np.maximum(tot - own, 0.0) + sigma2_d


def error_probability(
    g: np.ndarray,
    g_hat: np.ndarray,
    sigma2: np.ndarray,
    rho: np.ndarray,
    active: np.ndarray,
    n_d: int,
    R: float,
    s_subsample: int | None = 128,
    optimize: bool = True,
    check: bool = True,
) -> UrllcMetrics:
    """Error probabilities of every URLLC user of one snapshot.

    ``g``: (n, U) own effective channels; ``g_hat``: (U,); ``sigma2``:
    (n, U, T); ``rho``: (T, U) own powers; ``active``: (T, U) boolean. One s
    per user, chosen on (a subsample of) the ensemble and reused for all of it.
    """
    n, U = g.shape
    T = active.shape[0]
    active = np.asarray(active, dtype=bool)
    n_active = active.sum(axis=0)
    users = np.nonzero(n_active)[0]
    eps_slot = np.full((T, U), np.nan)
    eps_user = np.full(U, np.nan)
    s_user = np.full(U, np.nan)
    s_flat = np.zeros(U, dtype=bool)
    n_eval = n_clip = n_nan = 0
    if users.size == 0:
        return UrllcMetrics(eps_user, eps_slot, n_active, s_user, s_flat, n, 0, 0, 0)

    # gather the (realization, active slot) instances of each user into a padded block
    S = int(n_active.max())
    slot_idx = np.zeros((U, S), dtype=np.int64)
    valid = np.zeros((U, S), dtype=bool)
    for u in users:
        ts = np.nonzero(active[:, u])[0]
        slot_idx[u, : ts.size] = ts
        valid[u, : ts.size] = True
    uu = users
    sig = sigma2[:, uu][:, :, None, :]  # (n, Uu, 1, T)
    sig = np.take_along_axis(sig, slot_idx[uu][None, :, :, None], axis=-1)[..., 0]  # (n, Uu, S)
    rh = rho[slot_idx[uu], uu[:, None]]  # (Uu, S)
    vmask = valid[uu]
    gu = g[:, uu][:, :, None]
    ghu = g_hat[uu][None, :, None]
    sig = np.where(vmask[None], sig, 1.0)
    # s is searched relative to the mean effective noise, mismatch term included,
    # so that s_tilde = 1 is the decoder matched to the average residual
    resid = sig + rh[None] * np.abs(gu - ghu) ** 2
    sig_ref = (resid * vmask[None]).sum(axis=(0, 2)) / (vmask.sum(axis=1) * n)  # (Uu,)

    def log_mean_eps(s_tilde, rows):
        s = (s_tilde / sig_ref)[None, :, None]
        ctx = SaddlepointContext(gu[rows], ghu, rh[None], sig[rows], s, n_d, R)
        res = saddlepoint_epsilon(ctx, check=check)
        lp = np.where(vmask[None] & np.isfinite(res.log_eps), res.log_eps, -np.inf)
        cnt = (vmask[None] & np.isfinite(res.log_eps)).sum(axis=(0, 2))
        with np.errstate(divide="ignore"):
            return logsumexp(lp, axis=(0, 2)) - np.log(np.maximum(cnt, 1)), res

    if optimize:
        rows = slice(0, min(n, s_subsample) if s_subsample else n)
        opt = optimize_s(lambda st: log_mean_eps(st, rows)[0], uu.size)
        s_tilde, flat, n_eval = opt.s_tilde, opt.flat, opt.n_eval
    else:
        s_tilde, flat = np.ones(uu.size), np.zeros(uu.size, dtype=bool)
    _, res = log_mean_eps(s_tilde, slice(None))
    ok = vmask[None] & np.isfinite(res.eps)  # (n, Uu, S)
    cnt = ok.sum(axis=0)
    with np.errstate(invalid="ignore"):
        per_slot = np.where(ok, res.eps, 0.0).sum(axis=0) / cnt  # (Uu, S), NaN when nothing usable
    for k, u in enumerate(uu):
        m = vmask[k] & (cnt[k] > 0)
        eps_slot[slot_idx[u, m], u] = per_slot[k, m]
        if m.any():
            eps_user[u] = float(np.mean(per_slot[k, m]))
    s_user[uu] = s_tilde / sig_ref
    s_flat[uu] = flat
    n_clip = res.n_clipped
    n_nan = int((~np.isfinite(res.eps) & vmask[None]).sum())
    return UrllcMetrics(eps_user, eps_slot, n_active, s_user, s_flat, n, n_eval, n_clip, n_nan)


def network_availability(eps, target: float = 1e-5) -> float:
    """Fraction of (snapshot, user) error probabilities meeting ``target``; NaNs are excluded."""
    if not 0.0 < target < 1.0:
        raise ValueError(f"target must lie in (0, 1) (got {target})")
    e = np.asarray(eps, dtype=float).ravel()
    e = e[np.isfinite(e)]
    if e.size == 0:
        raise ValueError("no error-probability samples")
    return float(np.mean(e <= target))
