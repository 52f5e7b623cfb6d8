import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coexsim.frame import (
    PUNC,
    SPC,
    ActivationMatrix,
    FrameConfig,
    assign_pilots,
    coexistence_coefficients,
    draw_activations,
    punc_outage_probability,
)
from coexsim.rng import stream


def test_defaults_and_derived_quantities():
    fr = FrameConfig()
    assert (fr.tau_c, fr.tau_p, fr.T, fr.n_d, fr.b) == (580, 80, 5, 100, 160)
    assert fr.tau_d == 500
    assert fr.rate_nats == pytest.approx(1.6 * math.log(2))
    assert FrameConfig(tau_c=300, tau_p=180, T=5).n_d == 24
    assert FrameConfig.from_reuse(3, 10).tau_p == 30


def test_frame_overflow_error_quotes_all_values():
    errs = FrameConfig(tau_c=580, tau_p=80, T=5, n_d=120).errors()
    assert len(errs) == 1
    for token in ("tau_p=80", "T=5", "n_d=120", "tau_c=580"):
        assert token in errs[0]


@given(st.integers(1, 6), st.integers(1, 8), st.integers(1, 5))
def test_coexistence_coefficients(T, L, K_u):
    A = (np.random.default_rng(T * 100 + L * 10 + K_u).random((T, L, K_u)) < 0.4).astype(np.int8)
    assert np.array_equal(coexistence_coefficients(A, SPC), np.ones((T, L)))
    punc = coexistence_coefficients(A, PUNC)
    assert np.array_equal(punc, (A.sum(axis=-1) == 0).astype(float))
    with pytest.raises(ValueError):
        coexistence_coefficients(A, "tdma")


def test_activation_frequency_matches_a_u():
    fr = FrameConfig(a_u=0.3)
    A = np.concatenate([draw_activations(fr, 4, 4, stream(2, 0, s, 2)).A for s in range(500)])
    p = A.mean()
    assert abs(p - 0.3) <= 3 * math.sqrt(0.3 * 0.7 / A.size)


def test_activation_json_roundtrip():
    act = draw_activations(FrameConfig(), 4, 4, stream(0, 0, 0, 2))
    back = ActivationMatrix.from_json(act.to_json())
    assert np.array_equal(back.A, act.A) and np.array_equal(back.A_tilde, act.A_tilde)
    assert np.array_equal(act.with_mode(PUNC).A_tilde, coexistence_coefficients(act.A, PUNC))


def _outage_by_enumeration(K_u, a_u, T):
    # sum over the 2^K_u activation patterns of one slot, slots independent
    p_slot = 0.0
    for pattern in itertools.product((0, 1), repeat=K_u):
        n = sum(pattern)
        if n:
            p_slot += a_u**n * (1 - a_u) ** (K_u - n)
    return p_slot**T


@pytest.mark.parametrize("K_u,a_u,T", [(4, 10**-0.5, 5), (6, 0.1, 5), (10, 0.1, 5), (2, 0.5, 8)])
def test_punc_outage_formula(K_u, a_u, T):
    assert punc_outage_probability(K_u, a_u, T) == pytest.approx(_outage_by_enumeration(K_u, a_u, T), rel=1e-12)


def test_punc_outage_edge_cases():
    assert punc_outage_probability(3, 0.0, 5) == 0.0
    assert punc_outage_probability(3, 1.0, 5) == 1.0


def _mask(L, K, K_u):
    m = np.zeros((L, K), dtype=bool)
    m[:, :K_u] = True
    return m


@given(
    L=st.integers(1, 5),
    K=st.integers(2, 12),
    frac=st.floats(0.05, 0.95),
    tau_p=st.integers(1, 80),
    seed=st.integers(0, 1000),
)
def test_pilot_plan_partition_properties(L, K, frac, tau_p, seed):
    K_u = min(max(1, int(frac * K)), K - 1)
    mask = _mask(L, K, K_u)
    plan = assign_pilots(tau_p, mask, stream(seed, 0, 0, 1))
    idx = plan.pilot_index
    assert idx.shape == (L, K)
    assert idx.min() >= 0 and idx.max() < tau_p
    groups = plan.groups()
    members = [u for g in groups.values() for u in g]
    assert sorted(members) == [(l, k) for l in range(L) for k in range(K)]
    for l in range(L):
        for k in range(K):
            cp = plan.copilots(l, k)
            assert (l, k) in cp
            for other in cp:
                assert (l, k) in plan.copilots(*other)
                assert plan.inner_product((l, k), other) == tau_p
    n_u = L * K_u
    if tau_p >= L * K:
        assert len(groups) == L * K
    elif tau_p > n_u:
        # URLLC users never share a pilot with anyone
        for l, k in zip(*np.nonzero(mask)):
            assert plan.copilots(l, k) == {(l, k)}
        if tau_p - n_u >= K - K_u:
            for l in range(L):
                e = idx[l, ~mask[l]]
                assert len(set(e.tolist())) == e.size


def test_pilot_plan_without_priority_is_cyclic():
    plan = assign_pilots(20, _mask(4, 20, 4), stream(0, 0, 0, 1), urllc_priority=False)
    assert np.array_equal(plan.pilot_index, np.tile(np.arange(20), (4, 1)))
    assert plan.copilots(0, 3) == {(l, 3) for l in range(4)}


def test_pilot_assignment_rejects_empty_pool():
    with pytest.raises(ValueError):
        assign_pilots(0, _mask(2, 4, 1), stream(0))
