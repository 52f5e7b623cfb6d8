"""Per-slot downlink power allocation: EPA, weighted FPA and max-product-SINR OPA.

Powers are laid out per slot as ``rho_u`` (T, L, K_u) and ``rho_e`` (T, L, K_e);
URLLC users occupy the first K_u indices of each cell.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

EPA = "epa"
FPA = "fpa"
OPA = "opa"
SCHEMES = (EPA, FPA, OPA)
BUDGET_EQUAL, BUDGET_AT_MOST = "equal", "at_most"
BUDGETS = (BUDGET_EQUAL, BUDGET_AT_MOST)


class OPAConvergenceError(RuntimeError):
    pass


@dataclass
class PowerAllocation:
    rho_u: np.ndarray
    rho_e: np.ndarray
    A: np.ndarray
    A_tilde: np.ndarray
    scheme: str
    idle: np.ndarray  # (T, L) slots with no user to serve
    diagnostics: dict = field(default_factory=dict)

    def varrho(self) -> np.ndarray:
        """Effective transmit powers A rho_u and A_tilde rho_e: (T, L, K)."""
        return np.concatenate([self.A * self.rho_u, self.A_tilde[..., None] * self.rho_e], axis=-1)

    def budget_used(self) -> np.ndarray:
        return self.varrho().sum(axis=-1)

    def powers(self) -> np.ndarray:
        """Raw powers (T, L, K) before the activation factors."""
        return np.concatenate([self.rho_u, self.rho_e], axis=-1)


def _idle(A, A_tilde, K_e):
    return (A_tilde * K_e + A.sum(axis=-1)) == 0


def epa(A: np.ndarray, A_tilde: np.ndarray, K_e: int, rho_max: float) -> PowerAllocation:
    """Equal split of rho_max over the users served in each slot."""
    A = np.asarray(A, dtype=float)
    den = A_tilde * K_e + A.sum(axis=-1)
    idle = den == 0
    den = np.where(idle, 1.0, den)
    rho_u = rho_max * A / den[..., None]
    rho_e = np.broadcast_to((rho_max * A_tilde / den)[..., None], A.shape[:2] + (K_e,)).copy()
    return PowerAllocation(rho_u, rho_e, A, A_tilde, EPA, idle)


def fpa(A: np.ndarray, A_tilde: np.ndarray, beta_u: np.ndarray, beta_e: np.ndarray, nu: float, omega: float, rho_max: float) -> PowerAllocation:
    """Shares proportional to beta^nu, with weight omega on the URLLC users.

    ``beta_u``: (L, K_u) and ``beta_e``: (L, K_e) gains to the serving BS.
    """
    if not 0.0 < omega < 1.0:
        raise ValueError(f"omega must lie in (0, 1) (got {omega})")
    A = np.asarray(A, dtype=float)
    wu = np.power(beta_u, nu)
    we = np.power(beta_e, nu)
    den = (1.0 - omega) * A_tilde * we.sum(axis=-1) + omega * (A * wu).sum(axis=-1)
    idle = den == 0
    den = np.where(idle, 1.0, den)
    rho_u = omega * rho_max * A * wu / den[..., None]
    rho_e = (1.0 - omega) * rho_max * A_tilde[..., None] * we / den[..., None]
    return PowerAllocation(rho_u, rho_e, A, A_tilde, FPA, idle, {"nu": nu, "omega": omega})


# --- OPA ----------------------------------------------------------------------


def _w_exp(z: np.ndarray) -> np.ndarray:
    """Principal Lambert W of e^z for real z, without forming e^z.

    Works on v = ln W, the root of g(v) = e^v + v - z. The start comes from the
    approximation W(x) ~ l (1 - ln(1 + l) / (2 + l)) with l = ln(1 + x), and
    three Halley steps take it to machine precision.
    """
    z = np.asarray(z, dtype=float)
    lx = np.logaddexp(0.0, z)
    with np.errstate(divide="ignore"):
        v = np.where(z < -20.0, z - np.exp(np.minimum(z, -20.0)), np.log(lx * (1.0 - np.log1p(lx) / (2.0 + lx))))
    for _ in range(3):
        ev = np.exp(v)
        g = ev + v - z
        d1 = ev + 1.0
        v = v - g / (d1 - 0.5 * g * ev / d1)
    return np.exp(v)


def _multiplier(theta0, groups, G, lb, active, mu0=None):
    """Root mu = ln lam of phi(mu) = ln sum_group W(exp(mu + theta0)) - mu - lb.

    phi decreases from a positive value (W(x) ~ x for tiny x) to -inf; Newton
    steps are safeguarded by a bracket that is grown until it closes.
    """
    tmax = np.full(G, -np.inf)
    np.maximum.at(tmax, groups, theta0)

    def phi(m):
        w = _w_exp(m[groups] + theta0)
        sw = np.bincount(groups, weights=w, minlength=G)
        dw = np.bincount(groups, weights=w / (1.0 + w), minlength=G)
        return np.log(sw) - m - lb, dw / sw - 1.0

    lo = -tmax - 40.0
    hi = np.full(G, np.inf)
    mu = np.maximum(-tmax, 0.0) + 1.0 if mu0 is None else np.clip(mu0, lo, None)
    for _ in range(200):
        f, df = phi(mu)
        lo = np.where(f > 0, mu, lo)
        hi = np.where(f > 0, hi, mu)
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = mu - f / df
        fallback = np.where(np.isfinite(hi), 0.5 * (lo + hi), mu + 2.0 * (np.abs(mu) + 1.0))
        nxt = np.where((nxt > lo) & (nxt < hi), nxt, fallback)
        done = (np.abs(f) <= 1e-13) | (hi - lo <= 1e-14 * np.maximum(1.0, np.abs(mu)))
        if np.all(done | ~active):
            break
        mu = np.where(done, mu, nxt)
    return mu


def project_log_simplex(theta0: np.ndarray, budget: float = 1.0, groups: np.ndarray | None = None, mu0=None, return_mu=False):
    """Euclidean projection of theta0 onto {theta : sum_group exp(theta) <= budget}.

    Stationarity gives theta = theta0 - W(lam exp(theta0)), so exp(theta) =
    W(.)/lam and the multiplier solves sum W(lam exp(theta0)) / lam = budget.
    With ``groups`` (integer labels 0..G-1) every group is projected on its own.
    ``mu0`` warm-starts ln lam; ``return_mu`` also returns the solved value.
    """
    theta0 = np.asarray(theta0, dtype=float)
    if groups is None:
        groups = np.zeros(theta0.shape, dtype=np.int64)
    G = int(groups.max()) + 1
    lse = np.full(G, -np.inf)
    np.logaddexp.at(lse, groups, theta0)
    lb = np.log(budget)
    active = lse > lb
    if not active.any():
        return (theta0.copy(), mu0) if return_mu else theta0.copy()
    mu = _multiplier(theta0, groups, G, lb, active, mu0)
    out = np.where(active[groups], theta0 - _w_exp(mu[groups] + theta0), theta0)
    return (out, mu) if return_mu else out


@dataclass
class OPAProblem:
    """Max-product-SINR instance over the active users of one slot.

    SINR_k = rho_k a_k / (sum_i Bm_ki rho_i + noise), with a_k = |E g_kk|^2 and
    Bm = E|g|^2 - diag(a) (receiver on rows, transmitter on columns).
    ``cell`` maps each active user to its BS.
    """

    a: np.ndarray
    Bm: np.ndarray
    noise: float
    cell: np.ndarray
    rho_max: float

    def log_objective(self, rho: np.ndarray) -> float:
        D = self.Bm @ rho + self.noise
        return float(np.sum(np.log(rho * self.a) - np.log(D)))


def opa_solve(
    prob: OPAProblem,
    rho0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    raise_on_fail: bool = False,
    budget: str = BUDGET_EQUAL,
):
    """Gradient ascent on theta = ln rho with Barzilai-Borwein steps and Armijo
    backtracking. Returns (rho, info).

    ``budget="equal"`` spends exactly rho_max per BS: each cell's powers are a
    softmax of free variables, so the ascent is unconstrained. ``"at_most"``
    solves the convex program with sum rho <= rho_max by projected ascent.
    """
    if budget not in BUDGETS:
        raise ValueError(f"budget must be one of {BUDGETS} (got {budget!r})")
    cells = np.unique(prob.cell)
    members = [np.nonzero(prob.cell == j)[0] for j in cells]
    groups = np.searchsorted(cells, prob.cell)
    G = cells.size
    # normalized units: powers in rho_max, gains scaled so the largest a is 1
    scale = np.max(prob.a)
    a = prob.a / scale
    Bm = prob.Bm / scale
    noise = prob.noise / (scale * prob.rho_max)

    def F(th):
        D = Bm @ np.exp(th) + noise
        return np.sum(th + np.log(a) - np.log(D))

    def grad_theta(th):
        r = np.exp(th)
        D = Bm @ r + noise
        return 1.0 - r * (Bm.T @ (1.0 / D))

    if budget == BUDGET_EQUAL:

        def normalize(th):
            m = np.full(G, -np.inf)
            np.maximum.at(m, groups, th)
            lse = m + np.log(np.bincount(groups, weights=np.exp(th - m[groups]), minlength=G))
            return th - lse[groups]

        def grad(th):
            # chain rule through the softmax; sums to zero in every cell
            g = grad_theta(th)
            return g - np.exp(th) * np.bincount(groups, weights=g, minlength=G)[groups]

        def ascent(th, cand, t, gr):
            return t * (gr @ gr)

    else:
        warm = [None]

        def normalize(th):
            out, warm[0] = project_log_simplex(th, 1.0, groups, mu0=warm[0], return_mu=True)
            return out

        grad = grad_theta

        def ascent(th, cand, t, gr):
            return gr @ (cand - th)

    if rho0 is None:
        th = np.empty(a.size)
        for m in members:
            th[m] = -np.log(m.size)
    else:
        th = normalize(np.log(np.asarray(rho0, dtype=float) / prob.rho_max))
    f = F(th)
    gr = grad(th)
    step = 1.0
    converged = False
    change = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        t = step
        while True:
            cand = normalize(th + t * gr)
            fc = F(cand)
            if fc >= f + 1e-4 * ascent(th, cand, t, gr) or t < 1e-14:
                break
            t *= 0.5
        g_new = grad(cand)
        s_vec, y_vec = cand - th, g_new - gr
        sy = s_vec @ y_vec
        step = float(np.clip(-(s_vec @ s_vec) / sy, 1e-10, 1e10)) if sy < 0 else 1.0
        change = abs(fc - f) / max(1.0, abs(f))
        th, f, gr = cand, fc, g_new
        if change <= tol and np.max(np.abs(s_vec)) < 1e-6:
            converged = True
            break
    info = {"iterations": it, "converged": converged, "objective": f}
    if not converged:
        msg = f"OPA did not converge in {max_iter} iterations (last relative change {change:.2e})"
        if raise_on_fail:
            raise OPAConvergenceError(msg)
        log.warning(msg)
    return np.exp(th) * prob.rho_max, info


def opa_max_prod_sinr(
    A: np.ndarray,
    A_tilde: np.ndarray,
    g_hat: np.ndarray,
    mean_abs2: np.ndarray,
    sigma2_d: float,
    rho_max: float,
    K_u: int,
    **kw,
) -> PowerAllocation:
    """OPA for every slot. ``g_hat``: (L*K,) mean own channels; ``mean_abs2``:
    (L*K, L*K) E|g|^2 with receivers on rows. Inactive users are left out of
    the product (their SINR counts as 1) and get zero power."""
    T, L, _ = A.shape
    LK = g_hat.size
    K = LK // L
    K_e = K - K_u
    a_all = np.abs(g_hat) ** 2
    Bm_all = mean_abs2 - np.diag(a_all)
    cell_all = np.repeat(np.arange(L), K)
    rho = np.zeros((T, L, K))
    idle = _idle(A, A_tilde, K_e)
    iters, conv = [], []
    for t in range(T):
        act = np.concatenate([A[t].astype(bool), np.broadcast_to(A_tilde[t][:, None] > 0, (L, K_e))], axis=1).reshape(-1)
        if not act.any():
            continue
        ids = np.nonzero(act)[0]
        prob = OPAProblem(a_all[ids], Bm_all[np.ix_(ids, ids)], sigma2_d, cell_all[ids], rho_max)
        r, info = opa_solve(prob, **kw)
        flat = np.zeros(LK)
        flat[ids] = r
        rho[t] = flat.reshape(L, K)
        iters.append(info["iterations"])
        conv.append(info["converged"])
    return PowerAllocation(
        rho[..., :K_u],
        rho[..., K_u:],
        np.asarray(A, dtype=float),
        A_tilde,
        OPA,
        idle,
        {"iterations": iters, "converged": conv},
    )


def product_sinr_log_objective(varrho: np.ndarray, g_hat: np.ndarray, mean_abs2: np.ndarray, sigma2_d: float) -> float:
    """sum_k ln SINR_k over users with positive effective power (others count as SINR 1)."""
    from .embb import sinr_all

    s = sinr_all(varrho, g_hat, mean_abs2, sigma2_d)
    on = varrho > 0
    return float(np.sum(np.log(s[on])))
