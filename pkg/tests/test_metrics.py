import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stsir.metrics import (batch_means_var, dic, geweke_report, geweke_windows, geweke_z,
                           mse_profile, mspe_profile, rhat)

from conftest import make_panel

finite = st.floats(-1e4, 1e4)


class TestDic:
    def test_constant(self):
        r = dic([10, 10, 10])
        assert (r.dic, r.p_d, r.mean_deviance) == (10, 0, 10)

    def test_two_point(self):
        r = dic([8, 12])
        assert (r.mean_deviance, r.p_d, r.dic) == (10, 4, 14)

    @pytest.mark.parametrize("bad", [[1.0], [], [1.0, float("inf")], [[1.0, 2.0]]])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            dic(bad)

    @given(arrays(float, st.integers(2, 50), elements=finite), st.floats(-1e4, 1e4))
    def test_translation(self, d, c):
        a, b = dic(d), dic(d + c)
        assert b.dic == pytest.approx(a.dic + c, rel=1e-9, abs=1e-6)
        assert b.p_d == pytest.approx(a.p_d, rel=1e-6, abs=1e-6)
        assert a.p_d >= 0
        assert a.dic == pytest.approx(a.mean_deviance + a.p_d)


class TestGeweke:
    def test_constant_is_degenerate(self):
        rep = geweke_report(["a"], np.full((200, 1), 3.0))
        assert rep.z == {"a": 0.0} and rep.degenerate == ["a"]
        assert geweke_z(np.full(200, 3.0)) == 0.0

    def test_separated_windows(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(1000)
        x[:100] += 10.0
        assert abs(geweke_z(x)) > 5

    @given(st.integers(0, 2 ** 31))
    def test_antisymmetric(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(0, 1, 100), rng.normal(0.3, 2, 400)
        assert geweke_windows(b, a)[0] == -geweke_windows(a, b)[0]

    def test_window_checks(self):
        x = np.arange(200.0)
        with pytest.raises(ValueError, match="overlap"):
            geweke_z(x, 0.6, 0.5)
        with pytest.raises(ValueError):
            geweke_z(x[:50])
        with pytest.raises(ValueError):
            geweke_z(x, 0.0, 0.5)

    def test_batch_means_white_noise(self):
        x = np.random.default_rng(1).standard_normal(40000)
        assert batch_means_var(x) == pytest.approx(1.0, abs=0.1)

    def test_batch_means_autocorrelated(self):
        # AR(1) with rho = 0.9 has long-run variance 1 / (1 - rho)^2 for unit innovations
        rng = np.random.default_rng(2)
        e = rng.standard_normal(200000)
        x = np.empty_like(e)
        x[0] = e[0]
        for t in range(1, e.size):
            x[t] = 0.9 * x[t - 1] + e[t]
        assert batch_means_var(x) == pytest.approx(100.0, rel=0.2)


class TestProfiles:
    def test_perfect_fit(self):
        panel = make_panel([[1, 2, 3], [0, 5, 1]])
        mu = np.stack([panel.sym.astype(float)] * 3)
        np.testing.assert_array_equal(mse_profile(mu, panel), np.zeros((2, 3)))
        np.testing.assert_array_equal(mspe_profile(mu, panel), np.zeros((2, 3)))

    def test_two_draws(self):
        y = np.array([[2.0, 2.0]])
        mu = np.array([[[1.0, 2.0]], [[3.0, 2.0]]])
        np.testing.assert_array_equal(mse_profile(mu, y), [[1.0, 0.0]])

    @given(arrays(float, (6, 2, 3), elements=st.floats(0, 100)), st.permutations(range(6)))
    def test_draw_order(self, mu, perm):
        y = np.arange(6.0).reshape(2, 3)
        np.testing.assert_allclose(mse_profile(mu[list(perm)], y), mse_profile(mu, y), rtol=1e-12)
        np.testing.assert_allclose(mspe_profile(mu[list(perm)], y), mspe_profile(mu, y), rtol=1e-12)

    def test_poisson_second_moment(self):
        rep = np.random.default_rng(3).poisson(1.0, (20000, 1, 1)).astype(float)
        got = mspe_profile(rep, np.zeros((1, 1)))[0, 0]
        # E[X^2] = 2 and Var[X^2] = E[X^4] - 4 = 11 for X ~ Pois(1)
        assert abs(got - 2.0) < 3 * math.sqrt(11 / 20000)

    def test_mse_needs_two(self):
        with pytest.raises(ValueError):
            mse_profile(np.zeros((1, 1, 2)), np.zeros((1, 2)))


class TestRhat:
    def test_mixed_chains_near_one(self):
        x = np.random.default_rng(4).standard_normal((4, 5000))
        assert rhat(x) == pytest.approx(1.0, abs=0.01)

    def test_separated_chains(self):
        x = np.random.default_rng(5).standard_normal((2, 1000))
        x[1] += 5
        assert rhat(x) > 2

    def test_hand_value(self):
        # W = mean(2, 2) = 2, B = n * var([0, 2]) = 4, V = (1/2) * 2 + 4/2 = 3
        assert rhat([[-1.0, 1.0], [1.0, 3.0]]) == pytest.approx(math.sqrt(1.5))

    def test_constant(self):
        assert rhat(np.ones((3, 10))) == 1.0
        with pytest.raises(ValueError):
            rhat(np.ones((1, 10)))
