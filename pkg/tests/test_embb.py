import numpy as np
import pytest
from hypothesis import given, strategies as st

from coexsim.embb import (
    NegativeDenominatorError,
    embb_metrics,
    embb_se,
    outage_tolerance,
    service_outage,
    sinr_all,
)
from coexsim.frame import PUNC, SPC, coexistence_coefficients
from coexsim.power import epa


def _stats(rng, LK):
    g_hat = (10 ** rng.uniform(-6, -5, LK)) * np.exp(1j * rng.uniform(0, 2 * np.pi, LK))
    mean_abs2 = 10 ** rng.uniform(-14, -12, (LK, LK))
    mean_abs2[np.arange(LK), np.arange(LK)] = np.abs(g_hat) ** 2 * (1 + rng.uniform(0.01, 0.2, LK))
    return g_hat, mean_abs2


@given(st.integers(0, 10_000))
def test_sinr_matches_explicit_sum(seed):
    rng = np.random.default_rng(seed)
    LK = 6
    g_hat, m2 = _stats(rng, LK)
    varrho = rng.uniform(0, 5, LK)
    s = sinr_all(varrho, g_hat, m2, 1e-13)
    for k in range(LK):
        num = varrho[k] * abs(g_hat[k]) ** 2
        den = sum(varrho[i] * m2[k, i] for i in range(LK)) - num + 1e-13
        assert s[k] == pytest.approx(num / den, rel=1e-10)


def test_negative_denominator_is_reported():
    g_hat = np.array([1.0 + 0j, 1.0])
    m2 = np.array([[0.5, 0.0], [0.0, 1.0]])  # E|g|^2 below |E g|^2: impossible ensemble
    with pytest.raises(NegativeDenominatorError):
        sinr_all(np.array([1.0, 1.0]), g_hat, m2, 1e-3)
    s = sinr_all(np.array([1.0, 1.0]), g_hat, m2, 1e-3, strict=False)
    assert np.all(np.isfinite(s))


def test_se_prelog_and_average():
    sinr = np.array([[1.0, 3.0], [3.0, 7.0]])
    se = embb_se(sinr, 500, 580)
    assert np.allclose(se, (500 / 580) * np.array([1.5, 2.5]))


def test_modes_agree_without_urllc_traffic():
    rng = np.random.default_rng(1)
    T, L, K, K_u = 5, 2, 4, 1
    g_hat, m2 = _stats(rng, L * K)
    A = np.zeros((T, L, K_u))
    out = []
    for mode in (PUNC, SPC):
        v = epa(A, coexistence_coefficients(A, mode), K - K_u, 40.0).varrho()
        out.append(embb_metrics(v, g_hat, m2, 1e-13, K_u, 500, 580).se)
    assert np.array_equal(out[0], out[1])


def test_fully_punctured_frame_is_an_outage():
    rng = np.random.default_rng(2)
    T, L, K, K_u = 3, 2, 4, 1
    g_hat, m2 = _stats(rng, L * K)
    A = np.zeros((T, L, K_u))
    A[:, 0, 0] = 1  # cell 0 punctured in every slot
    v = epa(A, coexistence_coefficients(A, PUNC), K - K_u, 40.0).varrho()
    em = embb_metrics(v, g_hat, m2, 1e-13, K_u, 500, 580)
    assert em.cell_sum[0] == 0.0 and em.cell_sum[1] > 0
    assert list(em.outage) == [True, False]
    assert service_outage(em.cell_sum) == 0.5
    assert em.active_se.size == K - K_u


@given(st.floats(0.001, 0.999), st.integers(10, 10**6))
def test_outage_tolerance_is_three_sigma(p, n):
    assert outage_tolerance(p, n) == pytest.approx(3 * np.sqrt(p * (1 - p) / n))


@given(st.integers(0, 1000), st.floats(1.01, 10.0))
def test_sinr_increases_with_own_power(seed, factor):
    rng = np.random.default_rng(seed)
    g_hat, m2 = _stats(rng, 4)
    v = rng.uniform(0.5, 5, 4)
    w = v.copy()
    w[2] *= factor
    assert sinr_all(w, g_hat, m2, 1e-13)[2] > sinr_all(v, g_hat, m2, 1e-13)[2]
