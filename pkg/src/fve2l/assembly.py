"""Assembly of the two-layer Petrov-Galerkin systems.

Both problem types are written with a coefficient tensor C so that the flux
is ``sigma_bj = C[b, j, a, l] d_l u_a``: for the scalar problem C is the
diffusion tensor with one component, for elasticity it is the isotropic
Lame tensor with two.  Unknowns are interleaved per node, so global index
``m * node + component``.

Rows of first-layer test functions collect, for each region Q_i that
supports them, the volume term over Q_i and minus the flux through the two
midline segments bounding Q_i.  Rows of second-layer test functions collect
the volume term over the whole triangle and minus the flux through its
edges, with traces taken from inside the triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import refelem
from .mesh import DofMap, Mesh
from .quadrature import region_rule, segment_rule

# n ds = R d dt for a counterclockwise boundary traversed with tangent d
ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])
SCHEMES = ("fve2l", "fem")


class AssemblyError(ValueError):
    pass


def _as_tensor(d):
    return np.broadcast_to(np.asarray(d, dtype=float), (2, 2))


@dataclass
class EllipticProblem:
    """-div(D grad u) = f with u = g on the boundary."""

    forcing: Callable
    dirichlet: Optional[Callable] = None
    diffusion: object = field(default_factory=lambda: np.eye(2))
    exact: Optional[Callable] = None
    exact_grad: Optional[Callable] = None
    diffusion_div: Optional[Callable] = None  # column divergence of D, needed for variable D
    gamma: Optional[tuple] = None
    name: str = "elliptic"

    ncomp = 1

    @property
    def constant_coefficient(self):
        return not callable(self.diffusion)

    def coefficient(self, x=None, y=None):
        """C tensor (m, 2, m, 2), or (..., m, 2, m, 2) at points for variable D."""
        if not callable(self.diffusion):
            return _as_tensor(self.diffusion).reshape(1, 2, 1, 2)
        d = np.asarray(self.diffusion(x, y), dtype=float)
        return d.reshape(d.shape[:-2] + (1, 2, 1, 2))

    def div_coefficient(self, x, y):
        """d_j C[b, j, a, l], shape (..., m, m, 2)."""
        if not callable(self.diffusion):
            return np.zeros(np.shape(x) + (1, 1, 2))
        if self.diffusion_div is None:
            raise AssemblyError("variable diffusion needs diffusion_div for equation residuals")
        v = np.asarray(self.diffusion_div(x, y), dtype=float)
        return v.reshape(v.shape[:-1] + (1, 1, 2))

    def force(self, x, y):
        """f at points, shape (m, ...)."""
        return np.asarray(self.forcing(x, y), dtype=float)[None] * np.ones_like(x)[None]

    def boundary_value(self, x, y):
        if self.dirichlet is None:
            return np.zeros((1,) + np.shape(x))
        return np.asarray(self.dirichlet(x, y), dtype=float)[None] * np.ones_like(x)[None]

    def check_ellipticity(self, x, y):
        if self.gamma is None:
            return True
        g1, g2 = self.gamma
        c = self.coefficient(x, y)[..., 0, :, 0, :]
        ev = np.linalg.eigvalsh(0.5 * (c + np.swapaxes(c, -1, -2)))
        return bool(np.all(ev >= g1 - 1e-12) and np.all(ev <= g2 + 1e-12))


def lame_tensor(lam, mu):
    d = np.eye(2)
    return (mu * (np.einsum("ba,jl->bjal", d, d) + np.einsum("ja,bl->bjal", d, d))
            + lam * np.einsum("bj,al->bjal", d, d))


@dataclass
class ElasticityProblem:
    """-div sigma(u) = f, sigma = 2 mu eps(u) + lam tr(eps(u)) I."""

    lam: float
    mu: float
    forcing: Callable
    dirichlet: Optional[Callable] = None
    exact: Optional[Callable] = None
    exact_grad: Optional[Callable] = None  # returns (2, 2, ...) with [a, l] = d_l u_a
    name: str = "elasticity"

    ncomp = 2
    constant_coefficient = True

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0:
            raise AssemblyError("need mu > 0 and lam >= 0")

    def coefficient(self, x=None, y=None):
        return lame_tensor(self.lam, self.mu)

    def div_coefficient(self, x, y):
        return np.zeros(np.shape(x) + (2, 2, 2))

    def force(self, x, y):
        return _vector_field(self.forcing(x, y), x)

    def boundary_value(self, x, y):
        if self.dirichlet is None:
            return np.zeros((2,) + np.shape(x))
        return _vector_field(self.dirichlet(x, y), x)


def _vector_field(v, x):
    """Broadcast a 2-component field value to shape (2,) + x.shape."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v.reshape((2,) + (1,) * np.ndim(x))
    return v * np.ones((1,) + np.shape(x))


@dataclass
class SparseSystem:
    """Assembled system; row m*i+c is the equation of test function i, component c."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    mesh: Mesh
    dofmap: DofMap
    problem: object
    scheme: str = "fve2l"
    full_matrix: Optional[sp.csr_matrix] = None
    full_rhs: Optional[np.ndarray] = None
    boundary: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    boundary_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def order(self):
        return self.dofmap.order

    @property
    def ncomp(self):
        return self.problem.ncomp

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def interior(self):
        mask = np.ones(self.n, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)

    def reduced_matrix(self):
        """Interior-interior block of the unreduced matrix."""
        a = self.full_matrix if self.full_matrix is not None else self.matrix
        i = self.interior
        return a[i][:, i].tocsr()

    def dof_coordinates(self):
        return np.repeat(self.dofmap.coordinates, self.ncomp, axis=0)


# ------------------------------------------------------------- kernels

@dataclass(frozen=True)
class _Piece:
    """Reference data for one integration region of the test space."""

    points: np.ndarray
    weights: np.ndarray
    test: np.ndarray  # (q, N)
    test_grad: np.ndarray  # (q, N, 2)
    trial_grad: np.ndarray  # (q, N, 2)
    segments: tuple  # of (points (s, 2), weights (s,), direction (2,), test (s, N), trial_grad (s, N, 2))


def _trial_grad(k, pts):
    return np.stack([refelem.trial_values(k, pts, 1, 0), refelem.trial_values(k, pts, 0, 1)], axis=-1)


@lru_cache(maxsize=None)
def _pieces(order, scheme, degree):
    k = order
    out = []
    srule = segment_rule(degree)
    regions = (1, 2, 3, 4) if scheme == "fve2l" else (4,)
    for r in regions:
        q = region_rule(r, degree)
        if scheme == "fve2l":
            test = refelem.test_values(k, r, q.points)
            tgrad = np.stack([refelem.test_values(k, r, q.points, 1, 0),
                              refelem.test_values(k, r, q.points, 0, 1)], axis=-1)
        else:
            test = refelem.trial_values(k, q.points)
            tgrad = _trial_grad(k, q.points)
        segs = []
        if scheme == "fve2l":
            for a, b in refelem.REGION_SEGMENTS[r]:
                a, b = np.asarray(a), np.asarray(b)
                pts = a + np.outer(srule.points, b - a)
                segs.append((pts, srule.weights, b - a, refelem.test_values(k, r, pts), _trial_grad(k, pts)))
        out.append(_Piece(q.points, q.weights, test, tgrad, _trial_grad(k, q.points), tuple(segs)))
    return tuple(out)


def _coeff_at(problem, mesh, pts):
    """C at mapped points (T, q, m, 2, m, 2), or the constant tensor."""
    if problem.constant_coefficient:
        return problem.coefficient()
    xy = mesh.affine(pts)
    return problem.coefficient(xy[..., 0], xy[..., 1])


def element_matrices(mesh: Mesh, order, problem, scheme="fve2l", degree=None):
    """Local matrices (T, N*m, N*m) and loads (T, N*m)."""
    k = refelem.check_order(order)
    if scheme not in SCHEMES:
        raise AssemblyError(f"unknown scheme {scheme!r}")
    aff = mesh.affine
    if np.any(aff.det <= 0):
        raise AssemblyError("inverted triangle (det <= 0)")
    deg = degree or 2 * k
    nk, m = refelem.n_local(k), problem.ncomp
    T = mesh.n_triangles
    K = np.zeros((T, nk, m, nk, m))
    binv, det = aff.inv, aff.det
    for pc in _pieces(k, scheme, deg):
        gphi = np.einsum("qna,tai->tqni", pc.trial_grad, binv)
        gpsi = np.einsum("qna,tai->tqni", pc.test_grad, binv)
        C = _coeff_at(problem, mesh, pc.points)
        wd = pc.weights[None, :] * det[:, None]
        if C.ndim == 4:
            K += np.einsum("tq,bjal,tqij,tqnl->tibna", wd, C, gpsi, gphi, optimize=True)
        else:
            K += np.einsum("tq,tqbjal,tqij,tqnl->tibna", wd, C, gpsi, gphi, optimize=True)
        for pts, w, d, psi, tg in pc.segments:
            gphi = np.einsum("qna,tai->tqni", tg, binv)
            nvec = np.einsum("ij,tjk,k->ti", ROT, aff.B, d)  # n ds / dt
            C = _coeff_at(problem, mesh, pts)
            if C.ndim == 4:
                K -= np.einsum("q,qi,bjal,tqnl,tj->tibna", w, psi, C, gphi, nvec, optimize=True)
            else:
                K -= np.einsum("q,qi,tqbjal,tqnl,tj->tibna", w, psi, C, gphi, nvec, optimize=True)
    return K.reshape(T, nk * m, nk * m), element_loads(mesh, k, problem, scheme)


def element_loads(mesh: Mesh, order, problem, scheme="fve2l", degree=None):
    """Local load vectors (T, N*m): integral of f psi_i over the supports."""
    k = order
    deg = degree or 2 * k + 4
    nk, m = refelem.n_local(k), problem.ncomp
    F = np.zeros((mesh.n_triangles, nk, m))
    regions = (1, 2, 3, 4) if scheme == "fve2l" else (4,)
    for r in regions:
        q = region_rule(r, deg)
        psi = refelem.test_values(k, r, q.points) if scheme == "fve2l" else refelem.trial_values(k, q.points)
        xy = mesh.affine(q.points)
        f = problem.force(xy[..., 0], xy[..., 1])  # (m, T, q)
        F += np.einsum("q,t,btq,qi->tib", q.weights, mesh.affine.det, f, psi)
    return F.reshape(mesh.n_triangles, nk * m)


def element_matrix(vertices, order, problem, scheme="fve2l"):
    """Dense local matrix and load for a single triangle given by its vertices."""
    mesh = Mesh(np.asarray(vertices, dtype=float), [[0, 1, 2]])
    K, F = element_matrices(mesh, order, problem, scheme)
    return K[0], F[0]


def _global_index(dofmap, m):
    l2g = dofmap.local_to_global
    return (m * l2g[:, :, None] + np.arange(m)).reshape(l2g.shape[0], -1)


def assemble(mesh: Mesh, order, problem, scheme="fve2l") -> SparseSystem:
    """Unreduced global system, one row per (test function, component)."""
    dofmap = DofMap(mesh, order)
    K, F = element_matrices(mesh, order, problem, scheme)
    m = problem.ncomp
    gi = _global_index(dofmap, m)
    n = dofmap.n_nodes * m
    rows = np.repeat(gi, gi.shape[1], axis=1).ravel()
    cols = np.tile(gi, (1, gi.shape[1])).ravel()
    A = sp.csr_matrix((K.ravel(), (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    b = np.zeros(n)
    np.add.at(b, gi.ravel(), F.ravel())
    return SparseSystem(A, b, mesh, dofmap, problem, scheme, A, b.copy())


def assemble_scalar(mesh, order, problem: EllipticProblem, scheme="fve2l") -> SparseSystem:
    if problem.ncomp != 1:
        raise AssemblyError("assemble_scalar needs a scalar problem")
    return assemble(mesh, order, problem, scheme)


def assemble_elasticity(mesh, order, problem: ElasticityProblem, scheme="fve2l") -> SparseSystem:
    if problem.ncomp != 2:
        raise AssemblyError("assemble_elasticity needs an elasticity problem")
    return assemble(mesh, order, problem, scheme)


def boundary_dofs(dofmap, m):
    return (m * dofmap.boundary_nodes[:, None] + np.arange(m)).ravel()


def interpolate(dofmap, func, m=1):
    """Nodal interpolant coefficients of ``func`` (returning (m, ...) for m > 1)."""
    xy = dofmap.coordinates
    v = np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float)
    v = v.reshape(m, -1) if m > 1 else v.reshape(1, -1) * np.ones((1, len(xy)))
    return v.T.ravel()


def apply_dirichlet(system: SparseSystem, values=None, dofs=None) -> SparseSystem:
    """Pin boundary DOFs by row/column elimination with lifting.

    ``values`` defaults to the problem's Dirichlet datum interpolated at the
    boundary nodes.  Pinned rows become identity rows.
    """
    m = system.ncomp
    bnd = boundary_dofs(system.dofmap, m)
    if dofs is not None:
        dofs = np.asarray(dofs, dtype=np.int64)
        bad = np.setdiff1d(dofs, bnd)
        if bad.size:
            raise AssemblyError(f"boundary values requested at interior DOFs {bad[:10].tolist()}")
        bnd = dofs
    if values is None:
        xy = system.dofmap.coordinates[bnd // m]
        g = system.problem.boundary_value(xy[:, 0], xy[:, 1])  # (m, nb)
        values = g[bnd % m, np.arange(len(bnd))]
    values = np.broadcast_to(np.asarray(values, dtype=float), bnd.shape).copy()
    A = system.full_matrix.tocsr()
    n = A.shape[0]
    lift = np.zeros(n)
    lift[bnd] = values
    rhs = system.full_rhs - A @ lift
    keep = np.ones(n)
    keep[bnd] = 0.0
    D = sp.diags(keep)
    red = (D @ A @ D).tocsr()
    red = red + sp.diags(1.0 - keep)
    red.eliminate_zeros()
    rhs[bnd] = values
    return replace(system, matrix=red.tocsr(), rhs=rhs, boundary=bnd, boundary_values=values)


def build_system(mesh, order, problem, scheme="fve2l") -> SparseSystem:
    return apply_dirichlet(assemble(mesh, order, problem, scheme))


def write_matrix_market(system: SparseSystem, path, reduced=True):
    a = system.matrix if reduced else system.full_matrix
    scipy.io.mmwrite(str(path), a, comment=f"fve2l order={system.order} scheme={system.scheme}")
