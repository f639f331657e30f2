import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

logger = logging.getLogger(__name__)

MARKERS: Dict[str, int] = {"inflow": 1, "outflow": 2, "walls": 3, "cylinder": 4}
MARKER_NAMES: Dict[int, str] = {code: name for name, code in MARKERS.items()}


class GeometryError(ValueError):
    """Inconsistent domain description."""


class DomainSpec(BaseModel):
    """Channel minus disk: x_min < x < x_max, |y| < y_half, |x - c| > r."""

    x_min: float = -30.0
    x_max: float = 300.0
    y_half: float = 30.0
    cylinder_radius: float = 1.0
    cylinder_center: Tuple[float, float] = (0.0, 0.0)


class MeshParams(BaseModel):
    h_max: float = Field(gt=0)
    grading_ratio: float = Field(default=250.0, ge=1.0)
    geometry_order: int = Field(default=4, ge=1)
    grading_law: str = "log-linear"
    grading_slope: float = Field(default=0.3, gt=0)
    grading_distance: float = Field(default=30.0, gt=0)

    @model_validator(mode="after")
    def _check_law(self):
        if self.grading_law not in ("linear", "log-linear"):
            raise ValueError(f"grading_law must be 'linear' or 'log-linear', got '{self.grading_law}'")
        return self

    @property
    def h_min(self) -> float:
        return self.h_max / self.grading_ratio


@dataclass(frozen=True)
class Segment:
    start: Tuple[float, float]
    end: Tuple[float, float]
    marker: str


@dataclass(frozen=True)
class Circle:
    center: Tuple[float, float]
    radius: float
    marker: str = "cylinder"

    def point(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.stack(
            [self.center[0] + self.radius * np.cos(theta), self.center[1] + self.radius * np.sin(theta)],
            axis=-1,
        )

    def angle(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points)
        return np.arctan2(points[..., 1] - self.center[1], points[..., 0] - self.center[0])

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the circle, positive outside the disk."""
        points = np.asarray(points)
        return np.hypot(points[..., 0] - self.center[0], points[..., 1] - self.center[1]) - self.radius


@dataclass(frozen=True)
class Geometry:
    """Boundary-curve description: straight segments plus an optional hole."""

    segments: Tuple[Segment, ...]
    circle: Optional[Circle] = None
    bbox: Tuple[float, float, float, float] = field(default=(0.0, 1.0, 0.0, 1.0))

    @classmethod
    def rectangle(cls, x_min: float, x_max: float, y_min: float, y_max: float, marker: str = "walls") -> "Geometry":
        if not (x_min < x_max and y_min < y_max):
            raise GeometryError(f"Degenerate rectangle [{x_min}, {x_max}] x [{y_min}, {y_max}]")
        corners = [(x_min, y_min), (x_max, y_min), (x_max, y_max), (x_min, y_max)]
        segments = tuple(Segment(corners[i], corners[(i + 1) % 4], marker) for i in range(4))
        return cls(segments=segments, circle=None, bbox=(x_min, x_max, y_min, y_max))

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.bbox
        hole = math.pi * self.circle.radius**2 if self.circle else 0.0
        return (x1 - x0) * (y1 - y0) - hole

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Negative inside the fluid domain (exact inside the rectangle)."""
        points = np.asarray(points)
        x0, x1, y0, y1 = self.bbox
        x, y = points[..., 0], points[..., 1]
        d = -np.minimum(np.minimum(x - x0, x1 - x), np.minimum(y - y0, y1 - y))
        if self.circle is not None:
            d = np.maximum(d, -self.circle.distance(points))
        return d

    def distance_to_hole(self, points: np.ndarray) -> np.ndarray:
        if self.circle is None:
            return np.full(np.asarray(points).shape[:-1], np.inf)
        return np.maximum(self.circle.distance(points), 0.0)

    def segment_marker(self, a: np.ndarray, b: np.ndarray, tol: float) -> Optional[str]:
        """Marker of the straight side containing both points, if any."""
        for seg in self.segments:
            s = np.asarray(seg.start)
            t = np.asarray(seg.end) - s
            length = np.linalg.norm(t)
            normal = np.array([t[1], -t[0]]) / length
            if abs(np.dot(a - s, normal)) <= tol and abs(np.dot(b - s, normal)) <= tol:
                pa = np.dot(a - s, t) / length
                pb = np.dot(b - s, t) / length
                if -tol <= min(pa, pb) and max(pa, pb) <= length + tol:
                    return seg.marker
        return None


def build_domain(spec: DomainSpec) -> Geometry:
    """Benchmark channel with inflow, outflow, walls and the cylinder hole."""
    cx, cy = spec.cylinder_center
    r = spec.cylinder_radius
    if not spec.x_min < spec.x_max:
        raise GeometryError(f"x_min ({spec.x_min}) must be smaller than x_max ({spec.x_max})")
    if spec.y_half <= 0:
        raise GeometryError(f"y_half must be positive, got {spec.y_half}")
    if r <= 0:
        raise GeometryError(f"cylinder_radius must be positive, got {r}")
    if not (spec.x_min < cx - r and cx + r < spec.x_max and -spec.y_half < cy - r and cy + r < spec.y_half):
        raise GeometryError(
            f"Cylinder (center {spec.cylinder_center}, radius {r}) is not strictly inside "
            f"[{spec.x_min}, {spec.x_max}] x [{-spec.y_half}, {spec.y_half}]"
        )
    x0, x1, y = spec.x_min, spec.x_max, spec.y_half
    segments = (
        Segment((x0, -y), (x1, -y), "walls"),
        Segment((x1, -y), (x1, y), "outflow"),
        Segment((x1, y), (x0, y), "walls"),
        Segment((x0, y), (x0, -y), "inflow"),
    )
    geometry = Geometry(segments=segments, circle=Circle((cx, cy), r), bbox=(x0, x1, -y, y))
    logger.info(f"Built domain [{x0}, {x1}] x [{-y}, {y}] minus disk r={r} at {spec.cylinder_center}")
    return geometry


class SizeField:
    """Target edge length as a function of the distance to the hole."""

    def __init__(self, geometry: Geometry, params: MeshParams):
        self.geometry = geometry
        self.params = params
        self.h_max = params.h_max
        self.h_min = params.h_min if geometry.circle is not None else params.h_max

    def __call__(self, points: np.ndarray) -> np.ndarray:
        d = self.geometry.distance_to_hole(points)
        if self.geometry.circle is None or self.h_min >= self.h_max:
            return np.full(d.shape, self.h_max)
        if self.params.grading_law == "log-linear":
            frac = np.clip(d / self.params.grading_distance, 0.0, 1.0)
            return self.h_min * (self.h_max / self.h_min) ** frac
        return np.minimum(self.h_max, self.h_min + self.params.grading_slope * d)

    def distance_for_size(self, h: float) -> float:
        """Smallest distance at which the target size reaches `h`."""
        if self.geometry.circle is None or h <= self.h_min:
            return 0.0
        if h >= self.h_max:
            return math.inf
        if self.params.grading_law == "log-linear":
            return self.params.grading_distance * math.log(h / self.h_min) / math.log(self.h_max / self.h_min)
        return (h - self.h_min) / self.params.grading_slope


def sample_segment(seg: Segment, size: SizeField, n_samples: int = 4000) -> np.ndarray:
    """Points along a segment spaced by the size field, end points included."""
    s = np.linspace(0.0, 1.0, n_samples)
    a, b = np.asarray(seg.start), np.asarray(seg.end)
    pts = a[None, :] + s[:, None] * (b - a)[None, :]
    length = float(np.linalg.norm(b - a))
    density = 1.0 / size(pts)
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(s) * length)])
    n = max(1, int(round(cumulative[-1])))
    targets = np.linspace(0.0, cumulative[-1], n + 1)
    params = np.interp(targets, cumulative, s)
    params[0], params[-1] = 0.0, 1.0
    return a[None, :] + params[:, None] * (b - a)[None, :]


def circle_points(circle: Circle, h_min: float) -> np.ndarray:
    n = max(8, int(math.ceil(2.0 * math.pi * circle.radius / h_min)))
    theta = 2.0 * math.pi * np.arange(n) / n
    return circle.point(theta)


def boundary_points(geometry: Geometry, size: SizeField) -> Tuple[np.ndarray, int]:
    """Fixed boundary points (straight sides first, then the circle) and the circle offset."""
    chunks: List[np.ndarray] = []
    for seg in geometry.segments:
        chunks.append(sample_segment(seg, size)[:-1])
    straight = np.vstack(chunks)
    if geometry.circle is None:
        return straight, len(straight)
    return np.vstack([straight, circle_points(geometry.circle, size.h_min)]), len(straight)
