"""Reference triangle, interpolation nodes, dual regions and basis functions.

The reference triangle is ``K = {x >= 0, y >= 0, x + y <= 1}``.  Nodes are
numbered counterclockwise along the boundary starting at ``(0, 0)``, followed
by the interior nodes:

====  ==========================  ==============================
k     boundary nodes (3k)         interior nodes
====  ==========================  ==============================
2     vertices + edge midpoints   barycenter (bubble DOF)
3     vertices + edge thirds      barycenter
4     vertices + edge quarters    (1/4,1/4), (1/2,1/4), (1/4,1/2)
====  ==========================  ==============================

Boundary nodes carry first-layer test functions (piecewise on Q1, Q2, Q3),
interior nodes carry second-layer test functions (on Q4 = K).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

SUPPORTED_ORDERS = (2, 3, 4)

# Q1..Q3 as counterclockwise vertex lists; Q4 is the whole triangle.
_F = Fraction
_BARY = (_F(1, 3), _F(1, 3))
REGION_VERTICES = {
    1: ((_F(0), _F(0)), (_F(1, 2), _F(0)), _BARY, (_F(0), _F(1, 2))),
    2: ((_F(1), _F(0)), (_F(1, 2), _F(1, 2)), _BARY, (_F(1, 2), _F(0))),
    3: ((_F(0), _F(1)), (_F(0), _F(1, 2)), _BARY, (_F(1, 2), _F(1, 2))),
    4: ((_F(0), _F(0)), (_F(1), _F(0)), (_F(0), _F(1))),
}

# Interior segments of dQ_i, oriented counterclockwise with respect to Q_i.
REGION_SEGMENTS = {
    1: (((0.5, 0.0), (1 / 3, 1 / 3)), ((1 / 3, 1 / 3), (0.0, 0.5))),
    2: (((0.5, 0.5), (1 / 3, 1 / 3)), ((1 / 3, 1 / 3), (0.5, 0.0))),
    3: (((0.0, 0.5), (1 / 3, 1 / 3)), ((1 / 3, 1 / 3), (0.5, 0.5))),
    4: (((0.0, 0.0), (1.0, 0.0)), ((1.0, 0.0), (0.0, 1.0)), ((0.0, 1.0), (0.0, 0.0))),
}

# Monomials x^i y^j, total degree <= 4.
MONOMIALS = tuple((i, d - i) for d in range(5) for i in range(d, -1, -1))
_MON_INDEX = {m: n for n, m in enumerate(MONOMIALS)}
_QUAD_MONS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


class OrderError(ValueError):
    pass


class OutsideElementError(ValueError):
    pass


def check_order(k):
    if k not in SUPPORTED_ORDERS:
        raise OrderError(f"unsupported scheme order {k!r}; expected one of {SUPPORTED_ORDERS}")
    return k


def _q(*c):
    """Coefficients on (1, x, y, x^2, xy, y^2) -> monomial dict."""
    return {m: Fraction(v) for m, v in zip(_QUAD_MONS, c) if v}


# Test basis functions, node index (1-based) -> {region: polynomial}.
# Quartic psi_8 and psi_10 use the sign-corrected expressions that satisfy
# the Kronecker conditions at N_3 (mirror images of psi_6 and psi_4).
TEST_BASIS = {
    2: {
        1: {1: _q(1, -2, -2)},
        2: {1: _q(0, 2, 0), 2: _q(2, -2, -2)},
        3: {2: _q(-1, 2, 0)},
        4: {2: _q(0, 0, 2), 3: _q(0, 2, 0)},
        5: {3: _q(-1, 0, 2)},
        6: {3: _q(2, -2, -2), 1: _q(0, 0, 2)},
        7: {4: _q(1)},
    },
    3: {
        1: {1: _q(1, -3, -3)},
        2: {1: _q(0, 3, 0)},
        9: {1: _q(0, 0, 3)},
        3: {2: _q(3, -3, -3)},
        4: {2: _q(-2, 3, 0)},
        5: {2: _q(0, 0, 3)},
        6: {3: _q(0, 3, 0)},
        7: {3: _q(-2, 0, 3)},
        8: {3: _q(3, -3, -3)},
        10: {4: _q(1)},
    },
    4: {
        1: {1: _q(1, -6, -6, 8, 16, 8)},
        2: {1: _q(0, 8, 0, -16, -16, 0)},
        12: {1: _q(0, 0, 8, 0, -16, -16)},
        4: {2: _q(-8, 24, 8, -16, -16, 0)},
        5: {2: _q(3, -10, 0, 8, 0, 0)},
        6: {2: _q(0, 0, -8, 0, 16, 0)},
        8: {3: _q(0, -8, 0, 0, 16, 0)},
        9: {3: _q(3, 0, -10, 0, 0, 8)},
        10: {3: _q(-8, 8, 24, 0, -16, -16)},
        3: {1: _q(0, -2, 0, 8, 8, 0), 2: _q(6, -14, -6, 8, 8, 0)},
        7: {2: _q(0, 0, 6, 0, -8, 0), 3: _q(0, 6, 0, 0, -8, 0)},
        11: {1: _q(0, 0, -2, 0, 8, 8), 3: _q(6, -6, -14, 0, 8, 8)},
        13: {4: _q(3, -4, -4)},
        14: {4: _q(-1, 4, 0)},
        15: {4: _q(-1, 0, 4)},
    },
}


@dataclass(frozen=True)
class DualRegion:
    id: int
    vertices: tuple

    @property
    def area(self):
        """Exact shoelace area."""
        v = self.vertices
        s = sum(v[i][0] * v[(i + 1) % len(v)][1] - v[(i + 1) % len(v)][0] * v[i][1]
                for i in range(len(v)))
        return s / 2

    def as_array(self):
        return np.array([[float(x), float(y)] for x, y in self.vertices])


def dual_regions():
    return [DualRegion(i, REGION_VERTICES[i]) for i in (1, 2, 3, 4)]


def _boundary_nodes(k):
    pts = []
    corners = [(0, 0), (1, 0), (0, 1)]
    for e in range(3):
        a, b = corners[e], corners[(e + 1) % 3]
        for s in range(k):
            t = Fraction(s, k)
            pts.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
    return [(Fraction(x), Fraction(y)) for x, y in pts]


def _interior_nodes(k):
    if k in (2, 3):
        return [_BARY]
    q = Fraction(1, 4)
    return [(q, q), (2 * q, q), (q, 2 * q)]


@dataclass(frozen=True)
class NodeSet:
    order: int
    nodes: tuple          # exact reference coordinates, 0-based index
    groups: dict          # region id -> tuple of 0-based node indices

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_first_layer(self):
        return 3 * self.order

    def as_array(self):
        return np.array([[float(x), float(y)] for x, y in self.nodes])


@lru_cache(maxsize=None)
def node_coordinates(k) -> NodeSet:
    check_order(k)
    nodes = tuple(_boundary_nodes(k) + _interior_nodes(k))
    groups = {r: [] for r in (1, 2, 3, 4)}
    for j, regs in TEST_BASIS[k].items():
        for r in regs:
            groups[r].append(j - 1)
    return NodeSet(k, nodes, {r: tuple(sorted(v)) for r, v in groups.items()})


def n_local(k):
    return {2: 7, 3: 10, 4: 15}[check_order(k)]


# ---------------------------------------------------------------------------
# polynomial evaluation on the monomial list

def _monomial_table(points, dx=0, dy=0):
    """Rows: points, columns: d^(dx,dy) of every monomial in MONOMIALS."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    out = np.zeros((len(pts), len(MONOMIALS)))
    for n, (i, j) in enumerate(MONOMIALS):
        if i < dx or j < dy:
            continue
        ci = np.prod(np.arange(i - dx + 1, i + 1)) if dx else 1
        cj = np.prod(np.arange(j - dy + 1, j + 1)) if dy else 1
        out[:, n] = ci * cj * x ** (i - dx) * y ** (j - dy)
    return out


def _coeff_vector(poly):
    v = [Fraction(0)] * len(MONOMIALS)
    for m, c in poly.items():
        v[_MON_INDEX[m]] += c
    return v


def _poly_mul(p, q):
    out = {}
    for (a, b), c in p.items():
        for (d, e), f in q.items():
            out[(a + d, b + e)] = out.get((a + d, b + e), 0) + c * f
    return out


def _solve_exact(mat, rhs):
    """Gauss-Jordan over the rationals; mat is n x n, rhs n x m."""
    n = len(mat)
    a = [list(row) + list(r) for row, r in zip(mat, rhs)]
    for col in range(n):
        piv = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        p = a[col][col]
        a[col] = [v / p for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [u - f * v for u, v in zip(a[r], a[col])]
    return [row[n:] for row in a]


@lru_cache(maxsize=None)
def trial_coefficients(k):
    """Exact nodal-basis coefficients, shape (N_K, len(MONOMIALS))."""
    check_order(k)
    nodes = node_coordinates(k).nodes
    span = [{(i, j): Fraction(1)} for i, j in MONOMIALS if i + j <= k]
    if k == 2:
        # 27 * lambda_1 lambda_2 lambda_3, lambda_1 = 1 - x - y
        lam1 = {(0, 0): Fraction(1), (1, 0): Fraction(-1), (0, 1): Fraction(-1)}
        span.append(_poly_mul(lam1, {(1, 1): Fraction(27)}))
    vander = [[sum(c * px ** i * py ** j for (i, j), c in p.items()) for p in span]
              for px, py in nodes]
    # phi_i = sum_j C[i, j] p_j with C V^T = I, i.e. C = V^-T
    vt = [list(col) for col in zip(*vander)]
    eye = [[Fraction(int(r == c)) for c in range(len(nodes))] for r in range(len(nodes))]
    cmat = _solve_exact(vt, eye)
    span_vecs = [_coeff_vector(p) for p in span]
    out = [[sum(cmat[i][j] * span_vecs[j][m] for j in range(len(span)))
            for m in range(len(MONOMIALS))] for i in range(len(nodes))]
    return tuple(tuple(r) for r in out)


@lru_cache(maxsize=None)
def _trial_float(k):
    return np.array([[float(c) for c in row] for row in trial_coefficients(k)])


@lru_cache(maxsize=None)
def test_coefficients(k):
    """Per region r: float array (N_K, len(MONOMIALS)); rows of unsupported functions are 0."""
    check_order(k)
    nk = n_local(k)
    out = {}
    for r in (1, 2, 3, 4):
        c = np.zeros((nk, len(MONOMIALS)))
        for j, regs in TEST_BASIS[k].items():
            if r in regs:
                c[j - 1] = [float(v) for v in _coeff_vector(regs[r])]
        out[r] = c
    return out


def _check_inside(pts, tol=1e-12):
    if np.any(pts[:, 0] < -tol) or np.any(pts[:, 1] < -tol) or np.any(pts.sum(1) > 1 + tol):
        raise OutsideElementError("point outside the reference triangle")


def trial_values(k, points, dx=0, dy=0):
    """d^(dx,dy) phi_i at points; shape (npts, N_K). No bounds check."""
    return _monomial_table(points, dx, dy) @ _trial_float(k).T


def test_values(k, region, points, dx=0, dy=0):
    """Polynomial branch of every psi_j on ``region`` at points; shape (npts, N_K)."""
    return _monomial_table(points, dx, dy) @ test_coefficients(k)[region].T


def eval_trial(k, point):
    """Values and reference gradients of all trial functions at one or more points."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    _check_inside(pts)
    vals = trial_values(k, pts)
    grads = np.stack([trial_values(k, pts, 1, 0), trial_values(k, pts, 0, 1)], axis=-1)
    if np.ndim(point) == 1:
        return vals[0], grads[0]
    return vals, grads


def classify(points):
    """First-layer region id of each point; ties go to the lower index."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lam = np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)
    # argmax returns the first maximum, which gives the lower-index tie-break
    return np.argmax(lam, axis=1) + 1


def eval_test(k, point, layer=None):
    """psi_j at points: first-layer functions per their region, second layer on Q4.

    ``layer`` 1 or 2 keeps only that layer's functions (the others read 0).
    """
    if layer not in (None, 1, 2):
        raise ValueError(f"layer must be 1, 2 or None, got {layer!r}")
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    _check_inside(pts)
    reg = classify(pts)
    vals = np.zeros((len(pts), n_local(k)))
    if layer != 2:
        for r in (1, 2, 3):
            sel = reg == r
            if sel.any():
                vals[sel] = test_values(k, r, pts[sel])
    if layer != 1:
        vals += test_values(k, 4, pts)
    if np.ndim(point) == 1:
        return vals[0]
    return vals
