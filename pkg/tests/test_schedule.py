"""Tests for the OU noise schedule and terminal-time thresholds."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdps import schedule
from pdps.schedule import (
    DualityWindow,
    bar_t,
    duality_window,
    mu,
    sigma2,
    suggest_terminal_time,
    underline_t,
)


class TestForwardSchedule:
    """mu_t = exp(-t), sigma_t^2 = 1 - exp(-2t)."""

    def test_reference_values(self):
        np.testing.assert_allclose(mu(0.05), 0.951229, atol=1e-6)
        np.testing.assert_allclose(sigma2(0.05), 0.0951626, atol=1e-6)

    def test_endpoints(self):
        assert mu(0.0) == 1.0
        assert sigma2(0.0) == 0.0

    def test_variance_preservation_on_grid(self):
        t = np.linspace(0.0, 10.0, 2001)
        gap = mu(t) ** 2 + sigma2(t) - 1.0
        assert np.max(np.abs(gap)) <= 1e-12

    def test_array_input_matches_scalar(self):
        t = np.array([0.0, 0.05, 1.0, 3.0])
        np.testing.assert_array_equal(mu(t), [mu(float(ti)) for ti in t])
        np.testing.assert_array_equal(sigma2(t), [sigma2(float(ti)) for ti in t])

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            mu(-0.1)
        with pytest.raises(ValueError):
            sigma2(-1e-9)
        with pytest.raises(ValueError):
            mu(np.array([0.1, -0.1]))

    def test_small_time_precision(self):
        # sigma2 must not lose precision to cancellation near t = 0.
        t = 1e-12
        np.testing.assert_allclose(sigma2(t), 2.0 * t, rtol=1e-9)

    @given(st.floats(min_value=0.0, max_value=50.0))
    def test_variance_preservation(self, t):
        assert abs(mu(t) ** 2 + sigma2(t) - 1.0) <= 1e-12

    @given(
        st.floats(min_value=0.0, max_value=7.0),
        st.floats(min_value=1e-6, max_value=7.0),
    )
    def test_monotone(self, t, dt):
        # Domain capped where sigma2 has not yet saturated to 1.0 in doubles.
        assert mu(t + dt) < mu(t)
        assert sigma2(t + dt) > sigma2(t)


class TestThresholds:
    """bar_t(alpha) = 0.5*ln(1 + 1/alpha), underline_t(V2) = 0.5*ln(1 + 2*V2)."""

    def test_bar_t_values(self):
        np.testing.assert_allclose(bar_t(1.0), 0.346574, atol=1e-6)
        np.testing.assert_allclose(bar_t(1.0 / 3.0), 0.693147, atol=1e-6)

    def test_underline_t_values(self):
        np.testing.assert_allclose(underline_t(0.5), 0.346574, atol=1e-6)
        np.testing.assert_allclose(underline_t(1.5), 0.693147, atol=1e-6)

    def test_positivity_required(self):
        with pytest.raises(ValueError):
            bar_t(0.0)
        with pytest.raises(ValueError):
            bar_t(-1.0)
        with pytest.raises(ValueError):
            underline_t(0.0)

    @given(
        st.floats(min_value=1e-3, max_value=1e3),
        st.floats(min_value=1e-3, max_value=1e3),
    )
    def test_monotone(self, a, b):
        # bar_t decreases in alpha, underline_t increases in V^2.
        lo, hi = sorted((a, b))
        if lo < hi:
            assert bar_t(hi) <= bar_t(lo)
            assert underline_t(lo) <= underline_t(hi)


class TestDualityWindow:
    """Window (underline_t, bar_t) is nonempty iff 2*alpha*V^2 < 1."""

    def test_open_window(self):
        w = duality_window(alpha=0.5, v_sg2=0.5)
        assert isinstance(w, DualityWindow)
        np.testing.assert_allclose(w.lower, 0.346574, atol=1e-6)
        np.testing.assert_allclose(w.upper, 0.549306, atol=1e-6)
        assert w.nonempty
        assert w.contains(0.4)
        assert not w.contains(0.3)

    def test_boundary_is_empty(self):
        # 2*alpha*V^2 = 1 exactly: thresholds coincide, window empty.
        w = duality_window(alpha=1.0, v_sg2=0.5)
        assert w.lower == w.upper
        assert not w.nonempty
        assert not w.contains(w.lower)

    def test_empty_window(self):
        w = duality_window(alpha=60.0, v_sg2=0.55)
        assert not w.nonempty
        assert w.lower > w.upper

    @given(
        st.floats(min_value=1e-3, max_value=1e3),
        st.floats(min_value=1e-3, max_value=1e3),
    )
    def test_nonempty_criterion(self, alpha, v_sg2):
        w = duality_window(alpha, v_sg2)
        assert w.nonempty == (2.0 * alpha * v_sg2 < 1.0)

    def test_suggest_terminal_time_is_midpoint(self):
        for alpha, v in [(0.5, 0.5), (60.0, 0.55), (1.0, 0.5)]:
            w = duality_window(alpha, v)
            t = suggest_terminal_time(alpha, v)
            np.testing.assert_allclose(t, 0.5 * (w.lower + w.upper), rtol=1e-15)
        w = duality_window(0.5, 0.5)
        assert w.contains(suggest_terminal_time(0.5, 0.5))


class TestScheduleObject:
    def test_static_view_matches_functions(self):
        s = schedule.OUSchedule()
        assert s.mu(0.3) == mu(0.3)
        assert s.sigma2(0.3) == sigma2(0.3)
        assert s.bar_t(2.0) == bar_t(2.0)
        assert s.duality_window(0.5, 0.5) == duality_window(0.5, 0.5)
