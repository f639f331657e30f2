#!/usr/bin/env python3
"""
Tests for the period estimator and the chaos classification.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from utils.strouhal_utils import (
    NoPeriodDetected,
    StrouhalAnalyzer,
    TraceError,
    TraceSeries,
    chaos_indicator,
    classify_spread,
    estimate_period,
)

T0 = 11.34


def vortex_shedding_trace(period=T0, dt=0.01, t_end=500.0, modulation=0.0):
    """Lift at the shedding frequency, drag at twice that frequency."""
    t = np.arange(0.0, t_end + 0.5 * dt, dt)
    phase = 2.0 * math.pi * t / period + modulation * np.sin(2.0 * math.pi * t / 97.0)
    # the weak first harmonic in drag keeps half-period lags from closing the orbit
    drag = 3.2 + 0.05 * np.sin(2.0 * phase) + 0.01 * np.cos(phase)
    lift = np.sin(phase + 0.3)
    return TraceSeries(t, drag, lift)


def test_periodic_signal():
    estimate = estimate_period(vortex_shedding_trace(), (280.0, 480.0), 11.3)
    assert estimate.mean_period == pytest.approx(T0, abs=1e-3)
    assert chaos_indicator(estimate) == "periodic"
    assert estimate.strouhal == pytest.approx(2.0 / T0, rel=1e-4)
    assert estimate.edge_fraction == 0.0
    assert sum(estimate.histogram.counts) == len(estimate.samples)
    summary = estimate.summary()
    assert summary["classification"] == "periodic"
    assert summary["window"] == [280.0, 480.0]


def test_raw_scaling_finds_same_period():
    estimate = StrouhalAnalyzer(scaling="raw").estimate(vortex_shedding_trace(), (280.0, 480.0), 11.3)
    assert estimate.mean_period == pytest.approx(T0, abs=1e-3)


def test_sub_step_refinement_beats_grid_minimum():
    # about 50 samples per period, with the period between two grid lags
    dt = T0 / 50.37
    trace = vortex_shedding_trace(dt=dt)
    grid = StrouhalAnalyzer(refine=False).estimate(trace, (280.0, 480.0), 11.3)
    refined = StrouhalAnalyzer().estimate(trace, (280.0, 480.0), 11.3)
    grid_error = abs(grid.mean_period - T0)
    assert grid_error > 0.3 * dt
    assert abs(refined.mean_period - T0) <= 0.1 * grid_error


@settings(max_examples=5, deadline=None)
@given(period=st.floats(5.0, 15.0), guess_error=st.floats(-0.05, 0.05))
def test_period_recovered_from_nearby_guess(period, guess_error):
    trace = vortex_shedding_trace(period=period, dt=0.02, t_end=32.0 * period)
    estimate = estimate_period(trace, (10.0 * period, 30.0 * period), period * (1.0 + guess_error))
    assert estimate.mean_period == pytest.approx(period, rel=1e-4)


def test_modulated_period_is_not_periodic():
    estimate = estimate_period(vortex_shedding_trace(modulation=0.5), (100.0, 480.0), 11.3)
    assert chaos_indicator(estimate) != "periodic"
    assert estimate.relative_spread > 1e-3


def test_noise_has_no_period():
    rng = np.random.default_rng(3)
    t = np.arange(0.0, 500.0, 0.01)
    trace = TraceSeries(t, rng.normal(size=len(t)), rng.normal(size=len(t)))
    with pytest.raises(NoPeriodDetected):
        estimate_period(trace, (280.0, 480.0), 11.3)


def test_constant_trace_has_no_period():
    t = np.arange(0.0, 100.0, 0.1)
    trace = TraceSeries(t, np.full_like(t, 3.0), np.zeros_like(t))
    with pytest.raises(NoPeriodDetected):
        estimate_period(trace, (10.0, 90.0), 10.0)


def test_invalid_windows_and_guesses():
    trace = vortex_shedding_trace(t_end=320.0)
    with pytest.raises(TraceError):
        estimate_period(trace, (280.0, 300.0), 11.3)
    with pytest.raises(TraceError):
        estimate_period(trace, (280.0, 320.0), 0.0)
    with pytest.raises(TraceError):
        estimate_period(trace, (400.0, 480.0), 11.3)
    with pytest.raises(TraceError):
        trace.window(300.0, 280.0)


def test_trace_series_validation():
    with pytest.raises(TraceError):
        TraceSeries([0.0, 1.0, 1.0], [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    with pytest.raises(TraceError):
        TraceSeries([0.0, 1.0], [1.0], [0.0, 0.0])
    nan_trace = TraceSeries([0.0, 1.0, 2.0], [1.0, np.nan, 1.0], [0.0, 0.0, 0.0])
    with pytest.raises(TraceError):
        nan_trace.window(0.0, 2.0)


def test_unknown_scaling():
    with pytest.raises(ValueError):
        StrouhalAnalyzer(scaling="minmax")


@pytest.mark.parametrize(
    "std, expected",
    [(0.0, "periodic"), (0.0005, "periodic"), (0.01, "transitional"), (0.05, "chaotic")],
)
def test_classify_spread(std, expected):
    assert classify_spread(1.0, std) == expected


def test_classify_spread_needs_positive_mean():
    with pytest.raises(ValueError):
        classify_spread(0.0, 0.1)


if __name__ == "__main__":
    pytest.main([__file__])
