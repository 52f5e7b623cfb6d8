import json

import numpy as np
import pytest

import coexsim.harness as H
from coexsim.frame import FrameConfig, punc_outage_probability
from coexsim.harness import (
    CampaignConfig,
    MissingAxisError,
    ResultBundle,
    Table,
    emit_figure_data,
    empirical_cdf,
    run_campaign,
)
from coexsim.scenario import NetworkConfig


def tiny(**kw):
    base = dict(
        network=NetworkConfig(L=4, M=16, K=5, alpha=0.2),
        frame=FrameConfig(tau_c=200, tau_p=10, T=4, n_d=40),
        n_snapshots=2,
        n_realizations=20,
        batch_size=10,
        seed=3,
    )
    base.update(kw)
    return CampaignConfig(**base)


@pytest.fixture(scope="module")
def bundle():
    return run_campaign(tiny())


def test_sweep_expansion():
    c = tiny(sweep={"K": [5, 10], "a_u": [0.1, 0.2, 0.3]})
    pts = c.points()
    assert len(pts) == 6
    assert {(n.K, f.a_u) for n, f, _ in pts} == {(k, a) for k in (5, 10) for a in (0.1, 0.2, 0.3)}
    z = tiny(sweep={"T_nd": [[4, 40], [8, 20]]}).points()
    assert [(f.T, f.n_d) for _, f, _ in z] == [(4, 40), (8, 20)]
    r = tiny(frame=FrameConfig(tau_c=580, tau_p=30, f=3), sweep={"K": [10, 60]}).points()
    assert [(f.tau_p, f.n_d) for _, f, _ in r] == [(30, 110), (180, 80)]


def test_campaign_errors_are_collected():
    c = tiny(precoders=["mr", "zf"], powers=[], sweep={"Q": [1]}, n_snapshots=0)
    errs = c.errors()
    assert len(errs) >= 4
    with pytest.raises(ValueError):
        c.validate()


def test_every_combination_is_reported(bundle):
    p = bundle.points[0]
    assert p.error is None
    combos = {(r[2], r[3], r[4]) for r in p.checks.rows}
    assert len(combos) == 2 * 3 * 3
    assert p.n_snapshots == 2 and p.n_realizations == 2 * 20
    assert bundle.metadata["n_snapshots"] == 2 and bundle.metadata["n_realizations"] == 20
    assert np.all(p.se.column("se") >= 0)
    eps = p.eps.column("eps")
    assert np.all((eps >= 0) & (eps <= 1))


def test_budget_checks(bundle):
    chk = bundle.points[0].checks
    for pw in ("epa", "fpa"):
        assert np.all(chk.select(power=pw).column("max_budget_rel_dev") <= 1e-9)


def test_determinism_and_roundtrip(tmp_path, bundle):
    again = run_campaign(tiny())
    a, b = bundle.save(tmp_path / "a"), again.save(tmp_path / "b")
    for name in ("se.csv", "cells.csv", "eps.csv", "checks.csv"):
        assert (a / "point_000" / name).read_bytes() == (b / "point_000" / name).read_bytes()
    back = ResultBundle.load(a)
    assert np.array_equal(back.points[0].se.column("se"), bundle.points[0].se.column("se"))
    assert json.loads((a / "index.json").read_text())["metadata"]["build_id"] == bundle.metadata["build_id"]


def test_modes_agree_without_urllc_traffic():
    r = run_campaign(tiny(frame=FrameConfig(tau_c=200, tau_p=10, T=4, n_d=40, a_u=0.0), n_snapshots=1, urllc=False))
    se = r.points[0].se
    for pc in ("mr", "rzf", "mmmse"):
        for pw in ("epa", "fpa", "opa"):
            a = se.select(mode="punc", precoder=pc, power=pw).column("se")
            b = se.select(mode="spc", precoder=pc, power=pw).column("se")
            assert np.array_equal(a, b)


def test_failing_point_does_not_sink_the_sweep(monkeypatch):
    real = H.simulate_snapshot

    def flaky(camp, net, fr, point, snap):
        if point == 1:
            raise FloatingPointError("boom")
        return real(camp, net, fr, point, snap)

    monkeypatch.setattr(H, "simulate_snapshot", flaky)
    r = run_campaign(tiny(sweep={"a_u": [0.1, 0.2]}, n_snapshots=1, precoders=["mr"], powers=["epa"], modes=["spc"]))
    assert r.points[0].error is None
    assert "FloatingPointError" in r.points[1].error


def test_figure_exports(tmp_path, bundle):
    out = tmp_path / "fig"
    for fid in H.FIGURES:
        emit_figure_data(bundle, fid, out)
    cdf = Table.from_csv(out / "se_cdf.csv")
    for combo in {(r[1], r[2], r[3]) for r in cdf.rows}:
        sub = cdf.select(mode=combo[0], precoder=combo[1], power=combo[2])
        F, x = sub.column("cdf"), sub.column("value")
        assert np.all(np.diff(F) >= 0) and np.all(np.diff(x) >= 0)
        assert F[0] > 0 and F[-1] == 1.0
    av = Table.from_csv(out / "availability.csv")
    assert len(av) == 18
    assert len({(r[2], r[3], r[4]) for r in av.rows}) == 18
    oc = Table.from_csv(out / "outage_vs_au.csv")
    assert np.allclose(oc.column("analytic"), punc_outage_probability(1, FrameConfig().a_u, 4))
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["figures"]) == set(H.FIGURES)
    with pytest.raises(ValueError):
        emit_figure_data(bundle, "heatmap", out)


def test_outage_curve_needs_punc(tmp_path):
    r = run_campaign(tiny(modes=["spc"], precoders=["mr"], powers=["epa"], n_snapshots=1, urllc=False))
    with pytest.raises(MissingAxisError):
        emit_figure_data(r, "outage_vs_au", tmp_path)


def test_empirical_cdf():
    x, F = empirical_cdf([3.0, 1.0, 2.0])
    assert list(x) == [1.0, 2.0, 3.0] and list(F) == pytest.approx([1 / 3, 2 / 3, 1.0])
