"""
Period estimation from the drag-lift phase trajectory.

For sample points t0 spread over the analysis window, the closest return of
the trajectory x(t) = (drag, lift) to x(t0) is searched for lags between half
and one-and-a-half reference periods. The argmin is refined to a fraction of
the sampling step by a parabola through the squared distances, the reference
period is replaced by the mean of the estimates and the scan repeats until it
settles.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel

logger = logging.getLogger(__name__)

Classification = Literal["periodic", "transitional", "chaotic"]


class NoPeriodDetected(ValueError):
    """The trace shows no recurrent behaviour in the scan range."""


class TraceError(ValueError):
    """Unusable trace or analysis window."""


@dataclass
class TraceSeries:
    """Uniformly sampled drag and lift."""

    t: np.ndarray
    drag: np.ndarray
    lift: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.drag = np.asarray(self.drag, dtype=float)
        self.lift = np.asarray(self.lift, dtype=float)
        if not (self.t.shape == self.drag.shape == self.lift.shape) or self.t.ndim != 1:
            raise TraceError("t, drag and lift must be 1-d arrays of equal length")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise TraceError("Trace times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt_sample(self) -> float:
        if len(self.t) < 2:
            raise TraceError("Trace has fewer than two samples")
        return float((self.t[-1] - self.t[0]) / (len(self.t) - 1))

    def window(self, t_start: float, t_end: float) -> "TraceSeries":
        if not t_start < t_end:
            raise TraceError(f"Empty analysis window [{t_start}, {t_end}]")
        tol = 1e-9 * max(1.0, abs(t_end))
        mask = (self.t >= t_start - tol) & (self.t <= t_end + tol)
        if mask.sum() < 2:
            raise TraceError(f"Analysis window [{t_start}, {t_end}] holds fewer than two samples")
        out = TraceSeries(self.t[mask], self.drag[mask], self.lift[mask])
        if np.any(~np.isfinite(out.drag)) or np.any(~np.isfinite(out.lift)):
            raise TraceError(f"Non-finite drag or lift in the analysis window [{t_start}, {t_end}]")
        return out


class Histogram(BaseModel):
    edges: List[float]
    counts: List[int]


class PeriodEstimate(BaseModel):
    mean_period: float
    std_period: float
    samples: List[float]
    histogram: Histogram
    iterations_used: int
    window: Tuple[float, float]
    edge_fraction: float

    @property
    def strouhal(self) -> float:
        """St = D f / U with D = 2, U = 1."""
        return 2.0 / self.mean_period

    @property
    def relative_spread(self) -> float:
        return self.std_period / self.mean_period

    def summary(self) -> dict:
        return {
            "mean_period": self.mean_period,
            "std_period": self.std_period,
            "strouhal": self.strouhal,
            "classification": chaos_indicator(self),
            "iterations_used": self.iterations_used,
            "window": list(self.window),
            "n_samples": len(self.samples),
            "edge_fraction": self.edge_fraction,
        }


def histogram(samples: np.ndarray, bins: int = 30) -> Histogram:
    counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bins)
    return Histogram(edges=edges.tolist(), counts=counts.astype(int).tolist())


class StrouhalAnalyzer:
    SAMPLES_PER_PERIOD = 100
    REL_TOL = 1e-4
    MAX_ITERATIONS = 10
    EDGE_FRACTION_LIMIT = 0.5
    # uniformly scattered returns have std/mean = 1/sqrt(12) ~ 0.29
    NOISE_SPREAD = 0.2
    CHUNK = 256

    def __init__(self, scaling: Literal["standardize", "raw"] = "standardize", refine: bool = True, bins: int = 30):
        if scaling not in ("standardize", "raw"):
            raise ValueError(f"Unknown axis scaling '{scaling}'")
        self.scaling = scaling
        self.refine = refine
        self.bins = bins

    def _phase_points(self, trace: TraceSeries) -> np.ndarray:
        x = np.stack([trace.drag, trace.lift], axis=1)
        if self.scaling == "raw":
            return x
        std = x.std(axis=0)
        if np.all(std == 0):
            raise NoPeriodDetected("Drag and lift are constant over the window")
        weight = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 0.0)
        return (x - x.mean(axis=0)) * weight

    def _scan(self, x: np.ndarray, dt: float, period: float):
        """Per-sample return times for reference `period`; returns (taus, on_edge)."""
        lo = max(1, int(math.ceil(0.5 * period / dt)))
        hi = int(math.floor(1.5 * period / dt))
        if hi - lo < 2:
            raise TraceError(f"Sampling step {dt} too coarse for period {period}")
        stride = max(1, int(round(period / self.SAMPLES_PER_PERIOD / dt)))
        starts = np.arange(0, len(x) - hi, stride)
        if len(starts) == 0:
            raise TraceError(f"Window too short for reference period {period}")
        lags = np.arange(lo, hi + 1)
        taus = np.empty(len(starts))
        edge = np.zeros(len(starts), dtype=bool)
        for c in range(0, len(starts), self.CHUNK):
            s = starts[c:c + self.CHUNK]
            diff = x[s[:, None] + lags[None, :]] - x[s][:, None, :]
            d2 = np.einsum("slk,slk->sl", diff, diff)
            m = np.argmin(d2, axis=1)
            on_edge = (m == 0) | (m == len(lags) - 1)
            offset = np.zeros(len(s))
            if self.refine:
                inner = np.flatnonzero(~on_edge)
                mi = m[inner]
                left, mid, right = d2[inner, mi - 1], d2[inner, mi], d2[inner, mi + 1]
                curvature = left - 2.0 * mid + right
                ok = curvature > 0
                safe = np.where(ok, curvature, 1.0)
                offset[inner] = np.where(ok, np.clip(0.5 * (left - right) / safe, -0.5, 0.5), 0.0)
            taus[c:c + len(s)] = (lags[m] + offset) * dt
            edge[c:c + len(s)] = on_edge
        return taus, edge

    def estimate(self, trace: TraceSeries, window: Tuple[float, float], initial_guess: float) -> PeriodEstimate:
        if initial_guess <= 0:
            raise TraceError(f"initial_guess must be positive, got {initial_guess}")
        sub = trace.window(*window)
        length = sub.t[-1] - sub.t[0]
        if length < 3.0 * initial_guess:
            raise TraceError(f"Window length {length:.6g} is shorter than three initial periods ({initial_guess})")
        dt = sub.dt_sample
        x = self._phase_points(sub)
        period = float(initial_guess)
        iterations = 0
        taus = np.zeros(0)
        edge_fraction = 0.0
        for iterations in range(1, self.MAX_ITERATIONS + 1):
            all_taus, edge = self._scan(x, dt, period)
            edge_fraction = float(edge.mean())
            if edge_fraction > self.EDGE_FRACTION_LIMIT:
                raise NoPeriodDetected(
                    f"Closest return on the scan edge for {edge_fraction:.0%} of the samples (reference {period:.6g})"
                )
            taus = all_taus[~edge]
            new_period = float(taus.mean())
            change = abs(new_period - period)
            logger.debug(f"Period iteration {iterations}: {new_period:.9g} (change {change:.3e})")
            period = new_period
            if change < self.REL_TOL * period:
                break
        std = float(taus.std(ddof=1)) if len(taus) > 1 else 0.0
        if std / period > self.NOISE_SPREAD:
            raise NoPeriodDetected(f"Return times scatter over the whole scan range (std/mean {std / period:.3f})")
        logger.info(f"Period {period:.6g} +- {std:.3g} from {len(taus)} samples in {iterations} iterations")
        return PeriodEstimate(
            mean_period=period,
            std_period=std,
            samples=taus.tolist(),
            histogram=histogram(taus, self.bins),
            iterations_used=iterations,
            window=(float(window[0]), float(window[1])),
            edge_fraction=edge_fraction,
        )


PERIODIC_SPREAD = 1e-3
TRANSITIONAL_SPREAD = 2e-2


def chaos_indicator(estimate: PeriodEstimate) -> Classification:
    return classify_spread(estimate.mean_period, estimate.std_period)


def classify_spread(mean_period: float, std_period: float) -> Classification:
    if mean_period <= 0:
        raise ValueError(f"mean period must be positive, got {mean_period}")
    ratio = std_period / mean_period
    if ratio < PERIODIC_SPREAD:
        return "periodic"
    if ratio < TRANSITIONAL_SPREAD:
        return "transitional"
    return "chaotic"


def estimate_period(
    trace: TraceSeries,
    window: Tuple[float, float],
    initial_guess: float,
    analyzer: Optional[StrouhalAnalyzer] = None,
) -> PeriodEstimate:
    return (analyzer or StrouhalAnalyzer()).estimate(trace, window, initial_guess)
