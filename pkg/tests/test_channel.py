import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfurllc.channel import (
    draw_estimated, estimate_channels, estimation_variance, sample_channel,
)
from cfurllc.exceptions import DomainError

DRAWS = 100_000


def test_lambda_zero_pilot():
    beta = np.array([[2.0, 3.0]])
    st_ = estimation_variance(beta, [0.0, 0.0], 10)
    np.testing.assert_array_equal(st_.lam, 0.0)
    np.testing.assert_array_equal(st_.error_var, beta)


def test_lambda_plugged_value():
    assert estimation_variance(np.array([[1.0]]), [1.0], 10).lam[0, 0] == pytest.approx(10 / 11, rel=1e-15)


def test_lambda_high_snr_limit():
    # K p beta = 1e3
    lam = estimation_variance(np.array([[1.0]]), [100.0], 10).lam[0, 0]
    assert lam > 0.999


def test_negative_pilot_rejected():
    with pytest.raises(DomainError):
        estimation_variance(np.ones((1, 2)), [1.0, -1.0], 2)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_lambda_invariants(seed):
    rng = np.random.default_rng(seed)
    beta = rng.lognormal(2.0, 3.0, (4, 3))
    pp = rng.uniform(0.0, 1.0, 3)
    s = estimation_variance(beta, pp, 3)
    np.testing.assert_array_max_ulp(s.lam + s.error_var, beta, maxulp=1)
    assert np.all((s.lam >= 0) & (s.lam < beta))


def test_lambda_increasing_in_pilot_power():
    beta = np.array([[0.01, 1.0, 100.0]])
    grid = np.linspace(0.0, 1.0, 201)
    lam = np.array([estimation_variance(beta, [p] * 3, 3).lam[0] for p in grid])
    assert np.all(np.diff(lam, axis=0) > 0)


def test_zero_gain_gives_zero_channel():
    g = sample_channel(np.array([[0.0, 1.0]]), 4, seed=0).g
    np.testing.assert_array_equal(g[..., 0], 0)


def test_channel_second_moments():
    beta = np.array([[0.5, 2.0]])
    g = sample_channel(beta, 2, seed=1, n_draws=DRAWS).g
    power = (np.abs(g) ** 2).mean(axis=(0, 2))
    np.testing.assert_allclose(power, beta, rtol=0.02)
    np.testing.assert_allclose(g.real.var(axis=(0, 2)), beta / 2, rtol=0.02)
    np.testing.assert_allclose(g.imag.var(axis=(0, 2)), beta / 2, rtol=0.02)


def test_channel_deterministic():
    beta = np.ones((2, 3))
    np.testing.assert_array_equal(sample_channel(beta, 4, 5).g, sample_channel(beta, 4, 5).g)


def test_estimate_noiseless_limit():
    beta = np.array([[1.0]])
    d = draw_estimated(beta, 8, [1e3], 10, seed=2, n_draws=100)   # K p beta = 1e4
    rel = np.abs(d.g_hat - d.g) / np.abs(d.g)
    assert np.median(rel) < 0.01


def test_estimate_moments_match_stats():
    beta = np.array([[1.0, 3.0], [0.2, 0.05]])
    pp = [0.1, 0.3]
    stats = estimation_variance(beta, pp, 2)
    d = draw_estimated(beta, 1, pp, 2, seed=4, n_draws=DRAWS)
    gh, ge = d.g_hat[:, :, 0, :], d.g_err[:, :, 0, :]
    var_hat = (np.abs(gh) ** 2).mean(axis=0)
    var_err = (np.abs(ge) ** 2).mean(axis=0)
    np.testing.assert_allclose(var_hat, stats.lam, rtol=0.02)
    np.testing.assert_allclose(var_err, stats.error_var, rtol=0.02)
    # within three standard errors too
    se = (np.abs(gh) ** 2).std(axis=0) / np.sqrt(DRAWS)
    assert np.all(np.abs(var_hat - stats.lam) < 3.5 * se)
    cross = np.abs((gh * np.conj(ge)).mean(axis=0))
    assert np.all(cross < 0.02 * beta)


def test_zero_pilot_gives_zero_estimate():
    beta = np.ones((1, 2))
    draw = sample_channel(beta, 3, seed=0)
    est = estimate_channels(draw, beta, [0.0, 1.0], 2, seed=1)
    np.testing.assert_array_equal(est.g_hat[..., 0], 0)
    assert np.all(est.g_hat[..., 1] != 0)


def test_g_err_needs_estimate():
    with pytest.raises(ValueError):
        sample_channel(np.ones((1, 1)), 1, 0).g_err
