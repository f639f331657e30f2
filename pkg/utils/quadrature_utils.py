import math
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

logger = logging.getLogger(__name__)


class QuadratureError(ValueError):
    """Raised when no rule of the requested exactness can be provided."""


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference triangle (0,0), (1,0), (0,1).

    `points` are reference (x, y) coordinates, `weights` sum to the reference
    area 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points[:, 0], self.points[:, 1]
        return np.stack([1.0 - x - y, x, y], axis=1)

    @property
    def size(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class IntervalRule:
    """Gauss-Legendre rule on [0, 1]; weights sum to 1."""

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int


class QuadratureFactory:
    """Collapsed (Duffy) Gauss-Legendre rules of arbitrary exactness."""

    MAX_DEGREE = 60

    @staticmethod
    @lru_cache(maxsize=None)
    def interval(degree: int) -> IntervalRule:
        if degree < 0 or degree > QuadratureFactory.MAX_DEGREE:
            raise QuadratureError(f"No interval rule for degree {degree}")
        n = degree // 2 + 1
        xi, wi = np.polynomial.legendre.leggauss(n)
        points = 0.5 * (xi + 1.0)
        weights = 0.5 * wi
        points.setflags(write=False)
        weights.setflags(write=False)
        return IntervalRule(points, weights, 2 * n - 1)

    @staticmethod
    @lru_cache(maxsize=None)
    def triangle(degree: int) -> QuadratureRule:
        """Rule exact for all polynomials of total degree <= `degree`.

        The map x = s (1 - t), y = t has Jacobian (1 - t); the integrand
        is of degree `degree` in s and `degree + 1` in t.
        """
        if degree < 0 or degree > QuadratureFactory.MAX_DEGREE:
            raise QuadratureError(f"No triangle rule for degree {degree}")
        ns = degree // 2 + 1
        nt = (degree + 1) // 2 + 1
        s, ws = np.polynomial.legendre.leggauss(ns)
        t, wt = np.polynomial.legendre.leggauss(nt)
        s = 0.5 * (s + 1.0)
        t = 0.5 * (t + 1.0)
        ws = 0.5 * ws
        wt = 0.5 * wt
        S, T = np.meshgrid(s, t, indexing="ij")
        WS, WT = np.meshgrid(ws, wt, indexing="ij")
        x = (S * (1.0 - T)).ravel()
        y = T.ravel()
        w = (WS * WT * (1.0 - T)).ravel()
        points = np.stack([x, y], axis=1)
        points.setflags(write=False)
        w.setflags(write=False)
        return QuadratureRule(points, w, degree)


def monomial_integral(a: int, b: int) -> float:
    """Exact integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def check_rule(rule: QuadratureRule) -> Tuple[float, Tuple[int, int]]:
    """Largest relative monomial error of `rule` up to its exactness degree."""
    worst, where = 0.0, (0, 0)
    x, y = rule.points[:, 0], rule.points[:, 1]
    for total in range(rule.exactness_degree + 1):
        for a in range(total + 1):
            b = total - a
            exact = monomial_integral(a, b)
            approx = float(np.dot(rule.weights, x**a * y**b))
            err = abs(approx - exact) / exact
            if err > worst:
                worst, where = err, (a, b)
    return worst, where
