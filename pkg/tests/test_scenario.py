import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from coexsim.rng import stream
from coexsim.scenario import (
    NetworkConfig,
    ScenarioSnapshot,
    bs_positions,
    dbm_to_watt,
    draw_snapshot,
    grid_shape,
    local_scattering_correlation,
    path_loss_db,
    repair_psd,
    steering_vector,
    wrapped_distance,
)

from conftest import herm


def test_dbm_conversion():
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert dbm_to_watt(46.0) == pytest.approx(39.8107, rel=1e-5)
    assert dbm_to_watt(-94.0) == pytest.approx(3.981e-13, rel=1e-3)


def test_path_loss_reference_values():
    assert path_loss_db(100.0) == pytest.approx(-110.5, abs=1e-9)
    assert path_loss_db(25.0, 4.0) == pytest.approx(-35.3 - 37.6 * np.log10(25.0) + 4.0)
    with pytest.raises(ValueError):
        path_loss_db(0.0)


@given(
    M=st.integers(1, 24),
    angle=st.floats(-np.pi, np.pi),
    spread=st.floats(0.5, 60.0),
    beta=st.floats(1e-14, 1e-6),
)
def test_correlation_is_hermitian_psd_with_trace_beta(M, angle, spread, beta):
    R = local_scattering_correlation(M, angle, spread, beta)
    assert np.allclose(R, herm(R), atol=1e-12 * beta)
    lam = np.linalg.eigvalsh(R)
    assert lam[0] >= -1e-9 * lam[-1]
    assert np.real(np.trace(R)) / M == pytest.approx(beta, rel=1e-9)


def test_correlation_off_diagonal_matches_quadrature():
    half = np.deg2rad(20.0) / 2
    beta = 3e-9
    re = quad(lambda w: np.cos(-np.pi * np.sin(w)), -half, half)[0] / (2 * half)
    im = quad(lambda w: np.sin(-np.pi * np.sin(w)), -half, half)[0] / (2 * half)
    R = local_scattering_correlation(2, 0.0, 20.0, beta)
    assert R[0, 1] == pytest.approx(beta * (re + 1j * im), rel=1e-10)


def test_vanishing_spread_gives_rank_one():
    M, theta, beta = 16, 0.4, 2e-10
    R = local_scattering_correlation(M, theta, 1e-6, beta)
    a = steering_vector(M, theta)
    assert np.allclose(R, beta * np.outer(a, np.conj(a)), atol=1e-9 * beta)


def test_repair_psd_clips_and_renormalises():
    rng = np.random.default_rng(0)
    U, _ = np.linalg.qr(rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)))
    lam = np.array([-1e-3, 0.1, 0.5, 1.0, 2.0, 2.401])
    R = (U * lam) @ herm(U)
    beta = 1.0
    out = repair_psd(R, beta)
    assert np.linalg.eigvalsh(out)[0] >= -1e-12
    assert np.real(np.trace(out)) / 6 == pytest.approx(beta, rel=1e-12)
    # an already valid matrix passes unchanged
    good = (U * np.abs(lam)) @ herm(U)
    assert np.allclose(repair_psd(good, np.trace(good).real / 6), good)


def test_grid_and_bs_positions():
    assert grid_shape(4) == (2, 2)
    assert grid_shape(6) == (2, 3)
    assert grid_shape(7) == (1, 7)
    bs = bs_positions(4, 500.0)
    assert np.allclose(sorted(map(tuple, bs)), [(250, 250), (250, 750), (750, 250), (750, 750)])


@given(st.lists(st.floats(0, 1000), min_size=4, max_size=4))
def test_wrapped_distance_bounded_by_half_torus(xy):
    a, b = np.array(xy[:2]), np.array(xy[2:])
    d = wrapped_distance(a, b, (1000.0, 1000.0))
    assert d <= np.hypot(500, 500) + 1e-9
    assert d == pytest.approx(wrapped_distance(b, a, (1000.0, 1000.0)))


def test_snapshot_geometry_invariants(small_net):
    cfg = NetworkConfig(L=4, M=8, K=10, alpha=0.2)
    for s in range(5):
        snap = draw_snapshot(cfg, stream(11, 0, s, 0))
        L, K = cfg.L, cfg.K
        own = snap.distance_m[np.arange(L), np.arange(L)]
        assert np.all(own >= cfg.min_bs_dist_m)
        off = snap.user_positions[:, : cfg.K_u] - snap.bs_positions[:, None]
        assert np.all(np.abs(off) <= cfg.urllc_box_m / 2 + 1e-9)
        assert snap.urllc_mask.sum() == L * cfg.K_u
        assert np.all(snap.urllc_mask[:, : cfg.K_u])
        tr = np.real(np.trace(snap.R, axis1=-2, axis2=-1)) / cfg.M
        assert np.allclose(tr, snap.beta, rtol=1e-9)
        S = snap.sqrt_R
        assert np.allclose(S @ S, snap.R, atol=1e-12 * snap.beta.max())


def test_snapshot_is_deterministic_and_roundtrips(small_net):
    a = draw_snapshot(small_net, stream(5, 1, 2, 0))
    b = draw_snapshot(small_net, stream(5, 1, 2, 0))
    assert np.array_equal(a.R, b.R)
    c = ScenarioSnapshot.from_json(a.to_json())
    assert np.array_equal(c.beta, a.beta)
    assert np.allclose(c.R, a.R)
    assert json.loads(a.to_json())["cfg"]["K"] == small_net.K


def test_config_errors_name_fields():
    errs = NetworkConfig(K=20, alpha=0.23).errors()
    assert any("alpha" in e and "K" in e for e in errs)
    with pytest.raises(ValueError):
        NetworkConfig(rho_max=-1.0).validate()
