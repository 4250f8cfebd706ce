"""Minimum-angle stability analysis of the two-layer schemes.

On the reference triangle the local bilinear form splits as

    a_K(u, v) = (|l0|^2 A0 + |l1|^2 A1 + |l2|^2 A2) / (2 det B),

where l0 is the edge opposite the origin and l1, l2 are the edges along the
y and x axes.  With r1 = |l1|^2/|l0|^2 and r2 = |l2|^2/|l0|^2 coercivity of
the scheme reduces to positive definiteness of a parametric family H(r1, r2)
built from A0, A1, A2 and a trial-to-test mapping M_k(a, b).  The family is
traced along the boundary curve of its feasible set, and the smallest
triangle angle on that curve is the lower bound B_N.

Four readings of H are exposed through ``variant``:

``energy`` (default)
    the energy form u^T M^T A u of the scheme itself (cell-boundary flux on
    the second layer included), restricted to the complement of constants;
    H = sym(M^T A0 + r1 M^T A1 + r2 M^T A2) on that subspace, with no
    identity shift.  For k=2 the trial coordinates are hierarchical: the six
    quadratic Lagrange functions plus the bubble 27 l1 l2 l3.
``energy_nodal``
    as ``energy`` but in nodal trial coordinates for every k.
``design``
    H = I + sym(M (A0s + r1 A1s + r2 A2s)) with As = sym(A); the
    generalized-eigenvalue pencils are sym(M A1s + M A2s) and sym(M A2s).
``plain_pencil``
    same H, but the pencils use A1s + A2s and A2s without M.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize

from . import refelem
from .quadrature import on_segment, region_rule, segment_rule

VARIANTS = ("energy", "energy_nodal", "design", "plain_pencil")
DEFAULT_VARIANT = "energy"
PSD_RTOL = 1e-8
PENALTY = 1e6
FAIL_ANGLE = 90.0

# Tabulated optimal parameters, full vectors (dependent entries
# included; they are recomputed from the constraints when realized).
TABLE2 = {
    2: ((-0.1667, 1.3333), (-0.1078, -0.1347, 0.7273)),
    3: ((0.0086, 1.3453, -0.4170, 0.0632), (0.0420, -0.1273, 0.6377)),
    4: (
        (0.0829, 0.6149, 0.0970, 0.1238, 0.0815, 0.0730, 0.0714, 0.7113),
        (-0.0276, 0.0169, -0.1193, 0.0087, -0.0268, -0.0008, -0.0712, 0.0428, 0.1493),
    ),
}
TABLE2_BN = {2: 1.04, 3: 11.19, 4: 28.85}

# Parameters of the nodal trial-to-test map used for mapped systems (G^T A).
# k=3 is the table.  For k=2 the table is only feasible in hierarchical
# coordinates, and for k=4 the table leaves H(1,1) indefinite; these two
# sets were found by ``optimize_parameters`` (variant energy_nodal, started
# from the table) and are feasible with B_N ~ 1.06 and ~ 18.3.
MAPPED_PARAMETERS = {
    2: ((-0.16666668, 1.33333336), (0.080126736, -0.27705282, 0.59077825)),
    3: TABLE2[3],
    4: (
        (0.1615, 0.7602, -0.0701, 0.1398, 0.0086, 0.0798, 0.0159, 0.8086),
        (-0.0077, 0.029, -0.153, 0.0129, -0.0015, -0.0028, -0.0318, 0.2163, 0.027),
    ),
}

# 0-based indices of the free and dependent entries of a and b.
FREE_A = {2: (0,), 3: (0, 2, 3), 4: (0, 2, 3, 4, 5, 6)}
FREE_B = {2: (0, 1), 3: (0, 1), 4: (0, 1, 2, 3, 4, 5, 6, 8)}
N_A = {2: 2, 3: 4, 4: 8}
N_B = {2: 3, 3: 3, 4: 9}


class StabilityError(ValueError):
    pass


class InfeasibleParametersError(StabilityError):
    pass


class SingularPencilError(StabilityError):
    pass


class ThetaDomainError(StabilityError):
    pass


def sym(x):
    return 0.5 * (x + x.T)


# ---------------------------------------------------------------- matrices

@dataclass(frozen=True)
class ReferenceMatrices:
    order: int
    A01: np.ndarray
    A02: np.ndarray
    A12: np.ndarray
    cell_boundary: bool = False

    @property
    def A0(self):
        return self.A01 + self.A02 - self.A12

    @property
    def A1(self):
        return self.A01 - self.A02 + self.A12

    @property
    def A2(self):
        return -self.A01 + self.A02 + self.A12


@lru_cache(maxsize=None)
def reference_matrices(order, cell_boundary=False, degree=None) -> ReferenceMatrices:
    """Matrices of the three reference forms, row = test index, col = trial.

    Segment terms run over the interior midline segments of Q1..Q3 only.
    With ``cell_boundary`` the flux over the edges of the triangle is added
    to the rows of second-layer test functions, which is what the scheme
    itself assembles.
    """
    k = refelem.check_order(order)
    deg = degree or 2 * k
    nk = refelem.n_local(k)
    a01, a02, a12 = (np.zeros((nk, nk)) for _ in range(3))
    srule = segment_rule(deg)
    for r in (1, 2, 3, 4):
        q = region_rule(r, deg)
        px = refelem.trial_values(k, q.points, 1, 0)
        py = refelem.trial_values(k, q.points, 0, 1)
        tx = refelem.test_values(k, r, q.points, 1, 0)
        ty = refelem.test_values(k, r, q.points, 0, 1)
        w = q.weights
        a01 += np.einsum("q,qi,qj->ij", w, tx, px)
        a02 += np.einsum("q,qi,qj->ij", w, ty, py)
        a12 += np.einsum("q,qi,qj->ij", w, tx - ty, px - py)
        if r == 4 and not cell_boundary:
            continue
        for a, b in refelem.REGION_SEGMENTS[r]:
            s = on_segment(srule, a, b)
            dx, dy = np.subtract(b, a)
            # dx, dy carry the segment length, so the unit-interval weights are used
            w = srule.weights
            psi = refelem.test_values(k, r, s.points)
            px = refelem.trial_values(k, s.points, 1, 0)
            py = refelem.trial_values(k, s.points, 0, 1)
            a01 -= np.einsum("q,qi,qj->ij", w, psi, px) * dy
            a02 += np.einsum("q,qi,qj->ij", w, psi, py) * dx
            a12 -= np.einsum("q,qi,qj->ij", w, psi, px - py) * (dx + dy)
    for m in (a01, a02, a12):
        m.setflags(write=False)
    return ReferenceMatrices(k, a01, a02, a12, cell_boundary)


@dataclass(frozen=True)
class TrialToTestMap:
    order: int
    a: tuple
    b: tuple
    matrix: np.ndarray

    def free_vector(self):
        return free_vector(self.order, self.a, self.b)


def free_vector(order, a, b):
    return np.array([a[i] for i in FREE_A[order]] + [b[i] for i in FREE_B[order]], dtype=float)


def from_free(order, x):
    """Full (a, b) vectors from free parameters; dependent entries left 0."""
    x = np.asarray(x, dtype=float)
    na = len(FREE_A[order])
    if x.shape != (na + len(FREE_B[order]),):
        raise StabilityError(f"expected {na + len(FREE_B[order])} free parameters for order {order}")
    a, b = np.zeros(N_A[order]), np.zeros(N_B[order])
    a[list(FREE_A[order])] = x[:na]
    b[list(FREE_B[order])] = x[na:]
    return a, b


def apply_constraints(order, a, b):
    """Recompute the dependent entries so that M_k reproduces constants."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    if order == 2:
        a[1] = 1 - 2 * a[0]
        b[2] = -3 * b[0] - 3 * b[1]
    elif order == 3:
        a[1] = 1 - a[0] - a[2] - a[3]
        b[2] = -3 * b[0] - 6 * b[1]
    else:
        a[1] = 1 - a[0] - a[2] - a[3] - a[4]
        a[7] = 1 - 2 * a[5] - 2 * a[6]
        b[7] = -b[0] - 2 * (b[1] + b[2] + b[3] + b[4] + b[5]) - b[6] - 2 * b[8]
    return tuple(a), tuple(b)


def _rows(order, a, b):
    """Row patterns of M_k as {row: {col: value}}, 0-based."""
    if order == 2:
        a1, a2 = a
        b1, b2, b3 = b
        rows = {
            0: {0: 1.0},
            1: {0: a1, 1: a2, 2: a1},
            2: {2: 1.0},
            3: {2: a1, 3: a2, 4: a1},
            4: {4: 1.0},
            5: {0: a1, 4: a1, 5: a2},
            6: {0: b1, 1: b2, 2: b1, 3: b2, 4: b1, 5: b2, 6: b3},
        }
    elif order == 3:
        a1, a2, a3, a4 = a
        b1, b2, b3 = b
        rows = {}
        for e in range(3):
            v0, v1 = 3 * e, (3 * e + 3) % 9
            e1, e2 = 3 * e + 1, 3 * e + 2
            rows[v0] = {v0: 1.0}
            rows[e1] = {v0: a1, e1: a2, e2: a3, v1: a4}
            rows[e2] = {v0: a4, e1: a3, e2: a2, v1: a1}
        rows[9] = {j: (b1 if j % 3 == 0 else b2) for j in range(9)}
        rows[9][9] = b3
    else:
        pat = ((0, 1, 2, 3, 4), (5, 6, 7, 6, 5), (4, 3, 2, 1, 0))
        rows = {}
        for e in range(3):
            idx = [(4 * e + i) % 12 for i in range(5)]
            rows[4 * e] = {4 * e: 1.0}
            for r, p in zip(range(4 * e + 1, 4 * e + 4), pat):
                rows[r] = dict(zip(idx, (a[i] for i in p)))
        ring = (b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[5], b[4], b[3], b[2], b[1])
        for m, shift in ((12, 0), (13, 4), (14, 8)):
            rows[m] = {(j + shift) % 12: ring[j] for j in range(12)}
            rows[m].update({12: b[8], 13: b[8], 14: b[8]})
            rows[m][m] = b[7]
    return rows


def trial_to_test_matrix(order, a, b) -> TrialToTestMap:
    """Realize M_k(a, b); dependent entries of ``a`` and ``b`` are overwritten."""
    k = refelem.check_order(order)
    if len(a) != N_A[k] or len(b) != N_B[k]:
        raise StabilityError(
            f"order {k} expects len(a)={N_A[k]}, len(b)={N_B[k]}; got {len(a)}, {len(b)}")
    a, b = apply_constraints(k, a, b)
    n = refelem.n_local(k)
    m = np.zeros((n, n))
    for r, cols in _rows(k, a, b).items():
        for c, v in cols.items():
            m[r, c] += v
    m.setflags(write=False)
    return TrialToTestMap(k, a, b, m)


def default_parameters(order):
    """Feasible nodal (a, b) used for mapped systems."""
    k = refelem.check_order(order)
    return apply_constraints(k, *MAPPED_PARAMETERS[k])


def nodal_mapping(order, a, b, variant="energy_nodal"):
    """M_k expressed on nodal trial coefficients for the given reading.

    Under ``energy`` the k=2 matrix acts on hierarchical coefficients, so
    the nodal map is M T^{-1}; only the second-layer row changes.  That map
    does not send constants to constants, so mapped systems use the nodal
    reading.
    """
    m = trial_to_test_matrix(order, a, b).matrix
    if variant == "energy" and order == 2:
        return m @ np.linalg.inv(hierarchical_transform(order))
    return np.array(m)


def global_mapping(dofmap, a=None, b=None, ncomp=1, variant="energy_nodal"):
    """Global trial-to-test matrix G, so that v = G u on every element.

    Entries are copied, not summed: first-layer rows only couple nodes of
    one edge and their patterns are symmetric under edge reversal, so
    neighbouring elements prescribe the same values.
    """
    k = dofmap.order
    if a is None or b is None:
        a, b = default_parameters(k)
    m = nodal_mapping(k, a, b, variant)
    r, c = np.nonzero(m)
    l2g = dofmap.local_to_global
    rows, cols = l2g[:, r].ravel(), l2g[:, c].ravel()
    vals = np.tile(m[r, c], len(l2g))
    n = dofmap.n_nodes
    _, first = np.unique(rows * n + cols, return_index=True)
    g = sp.csr_matrix((vals[first], (rows[first], cols[first])), shape=(n, n))
    if ncomp > 1:
        g = sp.kron(g, sp.identity(ncomp), format="csr")
    return g


def mapped_matrix(system, a=None, b=None, variant="energy_nodal"):
    """Dirichlet-reduced G^T A: the scheme tested with the mapped trial basis.

    G maps interior-supported vectors to interior-supported vectors, so the
    reduced block is G_II^T A_II.
    """
    g = global_mapping(system.dofmap, a, b, system.ncomp, variant)
    i = system.interior
    return (g[i][:, i].T @ system.reduced_matrix()).tocsr()


# -------------------------------------------------------------- H and curve

def hierarchical_transform(order):
    """Nodal coefficients = T @ hierarchical coefficients.

    Only k=2 has a distinct hierarchical basis: the bubble 27 l1 l2 l3 is
    added on top of the quadratic Lagrange functions, which take the values
    -1/9 (vertices) and 4/9 (midpoints) at the barycenter.  Identity otherwise.
    """
    k = refelem.check_order(order)
    n = refelem.n_local(k)
    t = np.eye(n)
    if k == 2:
        t[6, :6] = [-1 / 9, 4 / 9, -1 / 9, 4 / 9, -1 / 9, 4 / 9]
    return t


class StabilityWorkspace:
    """Precomputed pieces of H(r1, r2, a, b) for one order and variant."""

    def __init__(self, order, variant=DEFAULT_VARIANT):
        if variant not in VARIANTS:
            raise StabilityError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.order = refelem.check_order(order)
        self.variant = variant
        self.energy = variant.startswith("energy")
        self.ref = reference_matrices(self.order, cell_boundary=self.energy)
        n = refelem.n_local(self.order)
        self.transform = hierarchical_transform(self.order) if variant == "energy" else np.eye(n)
        if self.energy:
            # constants in trial coordinates: T^{-1} 1
            ones = np.linalg.solve(self.transform, np.ones(n))
            self.basis = sla.null_space(ones[None, :])
        else:
            self.basis = np.eye(n)
        self.shift = 0.0 if self.energy else 1.0

    def parts(self, mapping):
        """(P0, P1, P2, pencil1, pencil2) for a realized mapping."""
        m = mapping.matrix if isinstance(mapping, TrialToTestMap) else np.asarray(mapping)
        mats = (self.ref.A0, self.ref.A1, self.ref.A2)
        q = self.basis
        if self.energy:
            t = self.transform
            p = [q.T @ sym(m.T @ x @ t) @ q for x in mats]
            return p[0], p[1], p[2], p[1] + p[2], p[2]
        ts = [sym(x) for x in mats]
        p = [sym(m @ t) for t in ts]
        if self.variant == "design":
            return p[0], p[1], p[2], p[1] + p[2], p[2]
        return p[0], p[1], p[2], ts[1] + ts[2], ts[2]

    def H(self, r1, r2, mapping):
        p0, p1, p2, _, _ = self.parts(mapping)
        return self.identity(p0.shape[0]) + p0 + r1 * p1 + r2 * p2

    def identity(self, n):
        return self.shift * np.eye(n)


def H_matrix(r1, r2, a, b, order, variant=DEFAULT_VARIANT):
    ws = _workspace(order, variant)
    return ws.H(r1, r2, trial_to_test_matrix(order, a, b))


@lru_cache(maxsize=None)
def _workspace(order, variant):
    return StabilityWorkspace(order, variant)


def lambda_max_gen(B, A, rtol=1e-12):
    """Largest finite root of det(A - lam B) = 0."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    scale = max(np.linalg.norm(A), np.linalg.norm(B), 1.0)
    w = sla.eigvals(A, B, homogeneous_eigvals=True)
    alpha, beta = w
    if np.any((np.abs(alpha) <= rtol * scale) & (np.abs(beta) <= rtol * scale)):
        raise SingularPencilError("det(A - lam B) vanishes identically")
    finite = np.abs(beta) > rtol * scale
    if not finite.any():
        raise SingularPencilError("pencil has no finite eigenvalues")
    lam = alpha[finite] / beta[finite]
    return float(np.max(lam.real))


def min_eig(h):
    return float(np.linalg.eigvalsh(sym(h))[0])


def is_psd(h, rtol=PSD_RTOL):
    return min_eig(h) >= -rtol * max(np.linalg.norm(h, 2), 1.0)


def gamma_curve(order, a, b, N=100, variant=DEFAULT_VARIANT):
    """Sample the boundary curve (r1, r2_lower(r1)); returns (r1_lower, points)."""
    ws = _workspace(order, variant)
    mapping = trial_to_test_matrix(order, a, b)
    p0, p1, p2, pen1, pen2 = ws.parts(mapping)
    eye = ws.identity(p0.shape[0])
    h11 = eye + p0 + p1 + p2
    if not is_psd(h11):
        raise InfeasibleParametersError(f"H(1,1) not positive semidefinite (min eig {min_eig(h11):.3e})")
    return _curve(eye, p0, p1, p2, pen1, pen2, N)


def _curve(eye, p0, p1, p2, pen1, pen2, N):
    h11 = eye + p0 + p1 + p2
    lam = lambda_max_gen(h11, pen1)
    r1_lower = max(1 - 1 / lam, 0.0) if lam > 0 else 0.0
    pts = []
    for i in range(N + 1):
        r1 = r1_lower + i * (1 - r1_lower) / N
        if i == 0:
            # H(r1_lower, r1_lower) is singular by construction of r1_lower
            pts.append((r1, r1))
            continue
        lam2 = lambda_max_gen(eye + p0 + r1 * (p1 + p2), pen2)
        r2 = r1 - 1 / lam2 if lam2 > 0 else 0.0
        pts.append((r1, r2))
    return r1_lower, np.array(pts)


def theta_min(r1, r2):
    """Smallest admissible angle (degrees) for the edge ratios (r1, r2)."""
    if r1 <= 0:
        raise ThetaDomainError(f"r1 must be positive, got {r1}")
    c = (1 + r1 - r2) / (2 * np.sqrt(r1))
    if not -1 <= c <= 1:
        raise ThetaDomainError(f"arccos argument {c} outside [-1, 1]")
    return float(np.degrees(np.arccos(c)))


def _c_st(g, h, r):
    if r <= 0:
        return np.inf
    return (g * r + h) / (2 * np.sqrt(r))


def theta_bar(s1, s2, t1, t2):
    """Largest theta_min along the chord from (s1, s2) to (t1, t2)."""
    if t1 == s1:
        # vertical chord: c decreases in r2
        cands = [_c_st(0.0, 1 + s1 - max(s2, t2), s1)]
    else:
        g = 1 - (t2 - s2) / (t1 - s1)
        h = 1 + s1 - s2 - g * s1
        cands = [_c_st(g, h, s1), _c_st(g, h, t1)]
        if g != 0 and min(s1, t1) <= h / g <= max(s1, t1):
            cands.append(_c_st(g, h, h / g))
    c = min(cands)
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def bound_from_curve(points):
    return max(theta_bar(*points[i], *points[i + 1]) for i in range(len(points) - 1))


def B_N(order, a, b, N=100, variant=DEFAULT_VARIANT):
    """Minimum-angle lower bound in degrees; raises if H(1,1) is not PSD."""
    _, pts = gamma_curve(order, a, b, N, variant)
    return bound_from_curve(pts)


# ------------------------------------------------------------------ report

@dataclass
class StabilityReport:
    order: int
    a: tuple
    b: tuple
    r1_lower: float
    BN_degrees: float
    feasible: bool
    curve: np.ndarray
    min_eigenvalue: float = float("nan")
    variant: str = DEFAULT_VARIANT
    N: int = 100
    trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "order": self.order,
            "a": list(self.a),
            "b": list(self.b),
            "r1_lower": self.r1_lower,
            "BN_degrees": self.BN_degrees,
            "feasible": self.feasible,
            "curve": np.asarray(self.curve).tolist(),
            "min_eigenvalue": self.min_eigenvalue,
            "variant": self.variant,
            "N": self.N,
            "trace": self.trace,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def evaluate(order, a, b, N=100, variant=DEFAULT_VARIANT) -> StabilityReport:
    """Evaluate B_N without raising on infeasible parameters.

    ``BN_degrees`` is still computed when H(1,1) is indefinite (when the
    curve exists) so that infeasible points can be inspected; it is NaN when
    the curve cannot be formed.
    """
    ws = _workspace(order, variant)
    mapping = trial_to_test_matrix(order, a, b)
    p0, p1, p2, pen1, pen2 = ws.parts(mapping)
    eye = ws.identity(p0.shape[0])
    h11 = eye + p0 + p1 + p2
    me = min_eig(h11)
    feasible = is_psd(h11)
    try:
        with np.errstate(all="ignore"):
            r1l, pts = _curve(eye, p0, p1, p2, pen1, pen2, N)
            bn = bound_from_curve(pts)
    except (StabilityError, np.linalg.LinAlgError, ValueError):
        r1l, pts, bn = float("nan"), np.zeros((0, 2)), float("nan")
    return StabilityReport(order, mapping.a, mapping.b, float(r1l), float(bn), bool(feasible),
                           pts, me, variant, N)


def objective(order, x, N=100, variant=DEFAULT_VARIANT):
    """Penalized B_N at free parameters ``x`` (lower is better)."""
    a, b = from_free(order, x)
    rep = evaluate(order, a, b, N, variant)
    bn = rep.BN_degrees if np.isfinite(rep.BN_degrees) else FAIL_ANGLE
    return bn + PENALTY * max(0.0, -rep.min_eigenvalue)


class _Budget(Exception):
    pass


def optimize_parameters(order, initial=None, budget=5000, seed=0, N=100, variant=DEFAULT_VARIANT,
                        restarts=4, spread=0.05) -> StabilityReport:
    """Derivative-free search for (a, b) minimizing B_N subject to H(1,1) >= 0.

    Nelder-Mead from the initial guess, then from random perturbations of
    the incumbent, until ``budget`` objective evaluations are used.  The
    initial guess is evaluated outside the budget and is returned unchanged
    when nothing better is found.
    """
    k = refelem.check_order(order)
    a0, b0 = initial if initial is not None else TABLE2[k]
    a0, b0 = apply_constraints(k, a0, b0)
    x0 = free_vector(k, a0, b0)
    best_x, best_f = x0.copy(), objective(k, x0, N, variant)
    trace = [{"eval": 0, "objective": best_f}]
    used = 0

    def f(x):
        nonlocal used, best_x, best_f
        if used >= budget:
            raise _Budget
        used += 1
        val = objective(k, x, N, variant)
        if val < best_f:
            best_x, best_f = np.array(x, dtype=float), val
            trace.append({"eval": used, "objective": val})
        return val

    rng = np.random.default_rng(seed)
    start = x0
    for attempt in range(restarts + 1):
        if used >= budget:
            break
        try:
            minimize(f, start, method="Nelder-Mead",
                     options={"maxfev": budget - used, "xatol": 1e-7, "fatol": 1e-7})
        except _Budget:
            break
        start = best_x + spread * rng.standard_normal(best_x.shape)
    a, b = from_free(k, best_x)
    rep = evaluate(k, a, b, N, variant)
    rep.trace = trace
    if not rep.feasible:
        raise InfeasibleParametersError(
            f"no feasible parameters found in {used} evaluations (min eig {rep.min_eigenvalue:.3e})")
    return rep
