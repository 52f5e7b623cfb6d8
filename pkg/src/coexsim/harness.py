"""Monte Carlo campaigns: sweep expansion, the per-snapshot pipeline, result
tables and plot-ready figure data."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import os
import time
import traceback
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .embb import embb_metrics
from .estimation import ChannelEstimator, draw_channels
from .frame import MODES, PUNC, FrameConfig, assign_pilots, coexistence_coefficients, draw_activations, punc_outage_probability
from .power import BUDGETS, EPA, FPA, OPA, SCHEMES as POWER_SCHEMES, epa, fpa, opa_max_prod_sinr
from .precoding import MMMSE, SCHEMES as PRECODERS, StatsAccumulator, effective_channels, precode
from .rng import ACTIVATIONS, CHANNELS, GEOMETRY, PILOTS, stream
from .scenario import NetworkConfig, draw_snapshot
from .urllc import conditional_noise, error_probability, network_availability

log = logging.getLogger(__name__)

NETWORK_AXES = {"K", "alpha", "M", "L"}
FRAME_AXES = {"a_u", "tau_p", "T", "n_d", "tau_c", "f", "b"}
SWEEP_AXES = NETWORK_AXES | FRAME_AXES | {"T_nd"}


@dataclass
class CampaignConfig:
    """Everything a campaign needs. ``sweep`` maps axis names to value lists;
    the sweep points are their Cartesian product, and ``T_nd`` is a zipped
    axis of ``[T, n_d]`` pairs. With ``frame.f`` set, ``tau_p = f*K`` at every
    point; ``n_d`` is re-derived from the frame unless swept explicitly.
    ``fpa_omega`` may be the string ``"alpha"`` to track the URLLC fraction.
    ``opa_budget`` is ``"equal"`` (every busy BS spends rho_max) or
    ``"at_most"`` (the convex relaxation, which may leave power unused).
    """

    network: NetworkConfig = field(default_factory=NetworkConfig)
    frame: FrameConfig = field(default_factory=FrameConfig)
    precoders: list = field(default_factory=lambda: list(PRECODERS))
    powers: list = field(default_factory=lambda: list(POWER_SCHEMES))
    modes: list = field(default_factory=lambda: list(MODES))
    fpa_nu: float = 0.5
    fpa_omega: object = 0.6
    opa_budget: str = "equal"
    sweep: dict = field(default_factory=dict)
    n_snapshots: int = 200
    n_realizations: int = 500
    batch_size: int = 25
    seed: int = 0
    output_dir: str = "results"
    eps_target: float = 1e-5
    urllc: bool = True
    embb: bool = True
    urllc_priority: bool = True
    s_subsample: int = 128
    strict: bool = True

    def points(self) -> list[tuple[NetworkConfig, FrameConfig, dict]]:
        """Expanded sweep: (network, frame, coordinates) per point."""
        axes = list(self.sweep.items())
        if not axes:
            combos = [()]
        else:
            combos = list(itertools.product(*[v for _, v in axes]))
        out = []
        for combo in combos:
            coords = dict(zip([k for k, _ in axes], combo))
            net_kw = {k: v for k, v in coords.items() if k in NETWORK_AXES}
            fr_kw = {k: v for k, v in coords.items() if k in FRAME_AXES}
            if "T_nd" in coords:
                fr_kw["T"], fr_kw["n_d"] = coords["T_nd"]
            net = replace(self.network, **net_kw)
            fr = asdict(self.frame)
            fr.update(fr_kw)
            if fr.get("f") is not None and "tau_p" not in fr_kw:
                fr["tau_p"] = int(fr["f"]) * net.K
            reshaped = fr["tau_p"] != self.frame.tau_p or set(fr_kw) & {"tau_c", "T", "f"}
            if "n_d" not in fr_kw and reshaped:
                fr["n_d"] = None
            out.append((net, FrameConfig(**fr), coords))
        return out

    def omega_for(self, net: NetworkConfig) -> float:
        return net.alpha if self.fpa_omega == "alpha" else float(self.fpa_omega)

    def errors(self) -> list[str]:
        errs = []
        for name, allowed, got in (("precoders", PRECODERS, self.precoders), ("powers", POWER_SCHEMES, self.powers), ("modes", MODES, self.modes)):
            if not got:
                errs.append(f"{name} must be non-empty")
            for x in got:
                if x not in allowed:
                    errs.append(f"unknown {name[:-1]} {x!r}; choose from {list(allowed)}")
        for k, v in self.sweep.items():
            if k not in SWEEP_AXES:
                errs.append(f"unknown sweep axis {k!r}; choose from {sorted(SWEEP_AXES)}")
            elif not isinstance(v, (list, tuple)) or len(v) == 0:
                errs.append(f"sweep axis {k!r} must be a non-empty list")
        if self.opa_budget not in BUDGETS:
            errs.append(f"opa_budget must be one of {list(BUDGETS)} (got {self.opa_budget!r})")
        if self.n_snapshots < 1:
            errs.append(f"n_snapshots must be >= 1 (got {self.n_snapshots})")
        if self.n_realizations < 1:
            errs.append(f"n_realizations must be >= 1 (got {self.n_realizations})")
        if self.batch_size < 1:
            errs.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if not 0.0 < self.eps_target < 1.0:
            errs.append(f"eps_target must lie in (0, 1) (got {self.eps_target})")
        if self.fpa_omega != "alpha":
            try:
                w = float(self.fpa_omega)
                if not 0.0 < w < 1.0:
                    errs.append(f"fpa_omega must lie in (0, 1) or be 'alpha' (got {self.fpa_omega})")
            except (TypeError, ValueError):
                errs.append(f"fpa_omega must be a number or 'alpha' (got {self.fpa_omega!r})")
        if errs:
            # the sweep cannot be expanded; still report the base point
            return errs + self.network.errors() + self.frame.errors()
        seen = set()
        for i, (net, fr, coords) in enumerate(self.points()):
            for e in net.errors() + fr.errors():
                tag = f"{e}" if not coords else f"sweep point {coords}: {e}"
                if tag not in seen:
                    seen.add(tag)
                    errs.append(tag)
        return errs

    def validate(self) -> None:
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))


# --- tables ---------------------------------------------------------------------


class Table:
    """Column-oriented rows with a fixed header; CSV round-trip."""

    def __init__(self, header: list[str]):
        self.header = list(header)
        self.rows: list[tuple] = []

    def add(self, *row) -> None:
        self.rows.append(tuple(row))

    def extend(self, other: "Table") -> None:
        self.rows.extend(other.rows)

    def column(self, name: str) -> np.ndarray:
        i = self.header.index(name)
        return np.array([r[i] for r in self.rows])

    def select(self, **eq) -> "Table":
        idx = [self.header.index(k) for k in eq]
        out = Table(self.header)
        out.rows = [r for r in self.rows if all(r[i] == v for i, v in zip(idx, eq.values()))]
        return out

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for r in self.rows:
                w.writerow([repr(x) if isinstance(x, float) else x for x in r])

    @classmethod
    def from_csv(cls, path) -> "Table":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            t = cls(next(rd))
            for r in rd:
                t.rows.append(tuple(_parse_cell(x) for x in r))
        return t


def _parse_cell(x: str):
    for conv in (int, float):
        try:
            return conv(x)
        except ValueError:
            pass
    return x


SE_HEADER = ["point", "snapshot", "mode", "precoder", "power", "cell", "user", "se"]
CELL_HEADER = ["point", "snapshot", "mode", "precoder", "power", "cell", "sum_se", "outage"]
EPS_HEADER = ["point", "snapshot", "mode", "precoder", "power", "cell", "user", "active_slots", "eps", "s"]
CHECK_HEADER = [
    "point", "snapshot", "mode", "precoder", "power", "max_budget_rel_dev", "n_slots", "n_idle",
    "opa_unconverged", "n_eps_evaluations", "n_clipped", "n_nan", "n_s_flat",
]


# --- pipeline -------------------------------------------------------------------


@dataclass
class SnapshotResult:
    se: Table
    cells: Table
    eps: Table
    checks: Table
    realizations: int


def _allocate(power, A, At, snap, net, K_u, camp, stats=None):
    if power == EPA:
        return epa(A, At, net.K_e, net.rho_max)
    if power == FPA:
        sb = snap.serving_beta
        return fpa(A, At, sb[:, :K_u], sb[:, K_u:], camp.fpa_nu, camp.omega_for(net), net.rho_max)
    if power == OPA:
        return opa_max_prod_sinr(A, At, stats.g_hat, stats.mean_abs2, net.sigma2_dl, net.rho_max, K_u, budget=camp.opa_budget)
    raise ValueError(power)


def collect_statistics(snap, plan, net: NetworkConfig, precoders, n_real: int, batch: int, rng) -> dict:
    """Effective-channel statistics per precoder from one shared realization ensemble."""
    L, K = net.L, net.K
    ids = np.nonzero(snap.urllc_mask.reshape(-1))[0]
    need_all = MMMSE in precoders
    est = ChannelEstimator(snap, plan, net.p_ul, net.sigma2_ul, all_links=need_all)
    ups = est.upsilon() if need_all else None
    accs = {pc: StatsAccumulator(L * K, ids) for pc in precoders}
    done = 0
    while done < n_real:
        nb = min(batch, n_real - done)
        h = draw_channels(snap, rng, nb)
        e = est.estimate(h, rng)
        own = est.own_estimates(e)
        for pc in precoders:
            W = precode(pc, own, net.p_ul, net.sigma2_ul, e.h_hat if need_all else None, ups)
            accs[pc].add(effective_channels(h, W))
        done += nb
    return {pc: a.finalize() for pc, a in accs.items()}


def simulate_snapshot(camp: CampaignConfig, net: NetworkConfig, fr: FrameConfig, point: int, snap_idx: int) -> SnapshotResult:
    seed = camp.seed
    snap = draw_snapshot(net, stream(seed, point, snap_idx, GEOMETRY))
    plan = assign_pilots(fr.tau_p, snap.urllc_mask, stream(seed, point, snap_idx, PILOTS), camp.urllc_priority)
    acts = draw_activations(fr, net.K_u, net.L, stream(seed, point, snap_idx, ACTIVATIONS))
    stats = collect_statistics(
        snap, plan, net, camp.precoders, camp.n_realizations, camp.batch_size, stream(seed, point, snap_idx, CHANNELS)
    )
    L, K, K_u, T = net.L, net.K, net.K_u, fr.T
    ids = np.nonzero(snap.urllc_mask.reshape(-1))[0]
    se_t, cell_t, eps_t, chk_t = Table(SE_HEADER), Table(CELL_HEADER), Table(EPS_HEADER), Table(CHECK_HEADER)
    A = acts.A.astype(float)
    for mode in camp.modes:
        At = coexistence_coefficients(A, mode)
        shared = {p: _allocate(p, A, At, snap, net, K_u, camp) for p in camp.powers if p != OPA}
        for pc in camp.precoders:
            st = stats[pc]
            for pw in camp.powers:
                alloc = shared[pw] if pw != OPA else _allocate(pw, A, At, snap, net, K_u, camp, st)
                varrho = alloc.varrho()
                used = varrho.sum(axis=-1)
                busy = ~alloc.idle
                dev = float(np.max(np.abs(used[busy] - net.rho_max)) / net.rho_max) if busy.any() else 0.0
                unconv = int(np.sum(~np.asarray(alloc.diagnostics.get("converged", []), dtype=bool)))
                tag = (point, snap_idx, mode, pc, pw)
                if camp.embb:
                    em = embb_metrics(varrho, st.g_hat, st.mean_abs2, net.sigma2_dl, K_u, fr.tau_d, fr.tau_c, camp.strict)
                    for l in range(L):
                        cell_t.add(*tag, l, float(em.cell_sum[l]), int(em.cell_sum[l] == 0.0))
                        for k in range(K - K_u):
                            se_t.add(*tag, l, K_u + k, float(em.se[l, k]))
                n_eval = n_clip = n_nan = n_flat = 0
                if camp.urllc:
                    vf = varrho.reshape(T, L * K)
                    sig = conditional_noise(st.urllc_abs2, vf, ids, net.sigma2_dl)
                    um = error_probability(
                        st.urllc_g, st.g_hat[ids], sig, vf[:, ids], A.reshape(T, -1) > 0, fr.n_d, fr.rate_nats,
                        s_subsample=camp.s_subsample,
                    )
                    n_eval, n_clip, n_nan, n_flat = um.n_evaluations, um.n_clipped, um.n_nan, int(um.s_flat.sum())
                    for u, fid in enumerate(ids):
                        if um.active_slots[u] > 0:
                            eps_t.add(*tag, int(fid // K), int(fid % K), int(um.active_slots[u]), float(um.eps[u]), float(um.s[u]))
                chk_t.add(*tag, dev, int(busy.size), int(alloc.idle.sum()), unconv, n_eval, n_clip, n_nan, n_flat)
    return SnapshotResult(se_t, cell_t, eps_t, chk_t, camp.n_realizations)


# --- bundles --------------------------------------------------------------------


def build_id() -> str:
    """Content hash of the package sources."""
    h = hashlib.sha1()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


@dataclass
class PointResult:
    index: int
    coords: dict
    network: dict
    frame: dict
    se: Table
    cells: Table
    eps: Table
    checks: Table
    n_snapshots: int = 0
    n_realizations: int = 0
    error: str | None = None
    wall_time_s: float = 0.0

    def availability(self, mode, precoder, power, target) -> float:
        e = self.eps.select(mode=mode, precoder=precoder, power=power).column("eps")
        return network_availability(e, target) if e.size else float("nan")

    def outage(self, mode, precoder, power) -> float:
        c = self.cells.select(mode=mode, precoder=precoder, power=power)
        return float(np.mean(c.column("outage"))) if len(c) else float("nan")

    def mean_cell_sum(self, mode, precoder, power) -> float:
        c = self.cells.select(mode=mode, precoder=precoder, power=power)
        return float(np.mean(c.column("sum_se"))) if len(c) else float("nan")


@dataclass
class ResultBundle:
    config: dict
    points: list
    metadata: dict

    def save(self, root) -> Path:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        index = {"config": self.config, "metadata": self.metadata, "points": []}
        for p in self.points:
            d = root / f"point_{p.index:03d}"
            d.mkdir(exist_ok=True)
            p.se.to_csv(d / "se.csv")
            p.cells.to_csv(d / "cells.csv")
            p.eps.to_csv(d / "eps.csv")
            p.checks.to_csv(d / "checks.csv")
            meta = {
                "index": p.index, "coords": p.coords, "network": p.network, "frame": p.frame,
                "n_snapshots": p.n_snapshots, "n_realizations": p.n_realizations, "error": p.error,
            }
            (d / "point.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
            index["points"].append({**meta, "dir": d.name, "wall_time_s": p.wall_time_s})
        (root / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True, default=str))
        return root

    @classmethod
    def load(cls, root) -> "ResultBundle":
        root = Path(root)
        index = json.loads((root / "index.json").read_text())
        pts = []
        for e in index["points"]:
            d = root / e["dir"]
            pts.append(
                PointResult(
                    e["index"], e["coords"], e["network"], e["frame"],
                    Table.from_csv(d / "se.csv"), Table.from_csv(d / "cells.csv"),
                    Table.from_csv(d / "eps.csv"), Table.from_csv(d / "checks.csv"),
                    e["n_snapshots"], e["n_realizations"], e["error"], e.get("wall_time_s", 0.0),
                )
            )
        return cls(index["config"], pts, index["metadata"])


def _jsonable_config(camp: CampaignConfig) -> dict:
    d = asdict(camp)
    d["sweep"] = {k: list(v) for k, v in camp.sweep.items()}
    return d


def run_campaign(camp: CampaignConfig, progress=None) -> ResultBundle:
    """Run every sweep point. A failing point is recorded with its diagnostic and skipped."""
    camp.validate()
    t_all = time.perf_counter()
    points = []
    for pi, (net, fr, coords) in enumerate(camp.points()):
        t0 = time.perf_counter()
        pr = PointResult(pi, coords, asdict(net), asdict(fr), Table(SE_HEADER), Table(CELL_HEADER), Table(EPS_HEADER), Table(CHECK_HEADER))
        try:
            for si in range(camp.n_snapshots):
                r = simulate_snapshot(camp, net, fr, pi, si)
                pr.se.extend(r.se)
                pr.cells.extend(r.cells)
                pr.eps.extend(r.eps)
                pr.checks.extend(r.checks)
                pr.n_snapshots += 1
                pr.n_realizations += r.realizations
                if progress:
                    progress(pi, si)
        except Exception as exc:  # one bad point must not sink the sweep
            pr.error = f"{type(exc).__name__}: {exc}"
            log.error("sweep point %d %s failed: %s\n%s", pi, coords, pr.error, traceback.format_exc())
        pr.wall_time_s = time.perf_counter() - t0
        points.append(pr)
    meta = {
        "build_id": build_id(),
        "version": __version__,
        "seed": camp.seed,
        "n_snapshots": camp.n_snapshots,
        "n_realizations": camp.n_realizations,
        "wall_time_s": time.perf_counter() - t_all,
    }
    return ResultBundle(_jsonable_config(camp), points, meta)


# --- figure data ------------------------------------------------------------------

FIGURES = ("se_cdf", "cell_sum_cdf", "eps_cdf", "availability", "outage_vs_au", "avg_se")


class MissingAxisError(KeyError):
    pass


def empirical_cdf(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.sort(np.asarray(x, dtype=float))
    return x, np.arange(1, x.size + 1) / x.size


def _combos(bundle: ResultBundle):
    c = bundle.config
    return list(itertools.product(c["modes"], c["precoders"], c["powers"]))


def emit_figure_data(bundle: ResultBundle, figure_id: str, out_dir) -> list[Path]:
    """Write plot-ready CSV series for one figure family and update the manifest."""
    if figure_id not in FIGURES:
        raise ValueError(f"unknown figure {figure_id!r}; choose from {FIGURES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    live = [p for p in bundle.points if p.error is None]
    files = []
    if figure_id in ("se_cdf", "cell_sum_cdf", "eps_cdf"):
        col = {"se_cdf": ("se", "se"), "cell_sum_cdf": ("cells", "sum_se"), "eps_cdf": ("eps", "eps")}[figure_id]
        t = Table(["point", "mode", "precoder", "power", "value", "cdf"])
        for p in live:
            src = getattr(p, col[0])
            for m, pc, pw in _combos(bundle):
                x = src.select(mode=m, precoder=pc, power=pw).column(col[1])
                if figure_id == "se_cdf":
                    x = x[x > 0]  # active eMBB users only
                if x.size == 0:
                    continue
                xs, F = empirical_cdf(x)
                for a, b in zip(xs, F):
                    t.add(p.index, m, pc, pw, float(a), float(b))
        files.append(out_dir / f"{figure_id}.csv")
        t.to_csv(files[-1])
    elif figure_id == "availability":
        target = bundle.config["eps_target"]
        t = Table(["point", "coords", "mode", "precoder", "power", "availability", "n_users", "target"])
        for p in live:
            for m, pc, pw in _combos(bundle):
                n = len(p.eps.select(mode=m, precoder=pc, power=pw))
                t.add(p.index, json.dumps(p.coords, sort_keys=True), m, pc, pw, p.availability(m, pc, pw, target), n, target)
        files.append(out_dir / "availability.csv")
        t.to_csv(files[-1])
    elif figure_id == "outage_vs_au":
        if PUNC not in bundle.config["modes"]:
            raise MissingAxisError("outage curves need the punc mode")
        t = Table(["point", "a_u", "K_u", "T", "precoder", "power", "outage", "analytic", "n_samples"])
        for p in live:
            a_u, T = p.frame["a_u"], p.frame["T"]
            K_u = int(round(p.network["alpha"] * p.network["K"]))
            ana = punc_outage_probability(K_u, a_u, T)
            for pc in bundle.config["precoders"]:
                for pw in bundle.config["powers"]:
                    n = len(p.cells.select(mode=PUNC, precoder=pc, power=pw))
                    t.add(p.index, float(a_u), K_u, T, pc, pw, p.outage(PUNC, pc, pw), ana, n)
        files.append(out_dir / "outage_vs_au.csv")
        t.to_csv(files[-1])
    elif figure_id == "avg_se":
        t = Table(["point", "coords", "mode", "precoder", "power", "mean_cell_sum_se", "ci95", "n_cells"])
        for p in live:
            for m, pc, pw in _combos(bundle):
                x = p.cells.select(mode=m, precoder=pc, power=pw).column("sum_se")
                if x.size == 0:
                    continue
                ci = 1.96 * np.std(x, ddof=1) / np.sqrt(x.size) if x.size > 1 else float("nan")
                t.add(p.index, json.dumps(p.coords, sort_keys=True), m, pc, pw, float(np.mean(x)), float(ci), int(x.size))
        files.append(out_dir / "avg_se.csv")
        t.to_csv(files[-1])
    _update_manifest(out_dir, figure_id, files, bundle)
    return files


def _update_manifest(out_dir: Path, figure_id: str, files, bundle: ResultBundle) -> None:
    path = out_dir / "manifest.json"
    man = json.loads(path.read_text()) if path.exists() else {"figures": {}}
    man["metadata"] = bundle.metadata
    man["figures"][figure_id] = [f.name for f in files]
    path.write_text(json.dumps(man, indent=2, sort_keys=True))


def output_root(default: str = "results") -> str:
    return os.environ.get("COEXSIM_OUTPUT_ROOT", default)
