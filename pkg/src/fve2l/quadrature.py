"""Gauss rules on the reference triangle, on the dual regions and on segments.

Triangle rules are collapsed (Duffy) products of Gauss-Jacobi and
Gauss-Legendre points, so every weight is positive and every point lies
strictly inside the triangle.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .refelem import REGION_VERTICES

MAX_TRIANGLE_DEGREE = 40
MAX_SEGMENT_DEGREE = 60


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


def _npts(degree):
    return max(1, (degree + 2) // 2)


@lru_cache(maxsize=None)
def triangle_rule(degree) -> QuadratureRule:
    """Rule on the unit triangle exact for total degree ``degree``."""
    if not 0 <= degree <= MAX_TRIANGLE_DEGREE:
        raise QuadratureError(f"unsupported triangle degree {degree}")
    n = _npts(degree)
    # weight (1-u) on [0,1] <-> Jacobi alpha=1 on [-1,1]
    tj, wj = roots_jacobi(n, 1.0, 0.0)
    u, wu = (tj + 1) / 2, wj / 4
    tl, wl = roots_legendre(n)
    v, wv = (tl + 1) / 2, wl / 2
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([uu.ravel(), (vv * (1 - uu)).ravel()], axis=1)
    w = np.outer(wu, wv).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


def map_triangle(rule, a, b, c):
    """Push a unit-triangle rule onto triangle (a, b, c)."""
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))
    jac = np.column_stack([b - a, c - a])
    pts = a + rule.points @ jac.T
    return QuadratureRule(pts, rule.weights * abs(np.linalg.det(jac)), rule.degree)


@lru_cache(maxsize=None)
def region_rule(region, degree) -> QuadratureRule:
    """Composite rule on Q1..Q4 (reference coordinates).

    The quadrilaterals are split along the diagonal from the primary-vertex
    corner to the barycenter.
    """
    if region not in REGION_VERTICES:
        raise QuadratureError(f"unknown region {region!r}")
    base = triangle_rule(degree)
    verts = [tuple(float(c) for c in v) for v in REGION_VERTICES[region]]
    if region == 4:
        return base
    v0, v1, v2, v3 = verts  # v0 primary vertex, v2 barycenter
    r1 = map_triangle(base, v0, v1, v2)
    r2 = map_triangle(base, v0, v2, v3)
    pts = np.vstack([r1.points, r2.points])
    w = np.concatenate([r1.weights, r2.weights])
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


@lru_cache(maxsize=None)
def segment_rule(degree) -> QuadratureRule:
    """Gauss-Legendre on [0, 1]; points have shape (n,)."""
    if not 0 <= degree <= MAX_SEGMENT_DEGREE:
        raise QuadratureError(f"unsupported segment degree {degree}")
    t, w = roots_legendre(_npts(degree))
    pts, wts = (t + 1) / 2, w / 2
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, degree)


def on_segment(rule, a, b):
    """Points and arc-length weights of a [0,1] rule mapped onto segment a->b."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    pts = a + np.outer(rule.points, b - a)
    return QuadratureRule(pts, rule.weights * np.linalg.norm(b - a), rule.degree)
