"""Local and global conservation residuals on both dual layers.

For a dual element K* with forcing f

    flux form      C_flux = -int_{dK*} sigma(u_h) n ds - int_{K*} f
    equation form  C_equa = -int_{K*} div sigma(u_h)   - int_{K*} f

where sigma(u) = D grad u (scalar) or the Lame stress (elasticity).  First
layer elements are the barycentric dual cells around each vertex, second
layer elements are the triangles.  Traces of sigma(u_h) on the midline
segments are taken from the triangle that contains the segment; the
equation form is integrated piece by piece since u_h is only piecewise
smooth inside a first-layer cell.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import refelem
from .assembly import ROT, SparseSystem
from .mesh import mesh_size
from .quadrature import region_rule, segment_rule

_REF_V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@lru_cache(maxsize=None)
def _trial_derivs(k, pts_key):
    pts = np.array(pts_key).reshape(-1, 2)
    g = np.stack([refelem.trial_values(k, pts, 1, 0), refelem.trial_values(k, pts, 0, 1)], axis=-1)
    h = np.empty(g.shape + (2,))
    h[..., 0, 0] = refelem.trial_values(k, pts, 2, 0)
    h[..., 0, 1] = h[..., 1, 0] = refelem.trial_values(k, pts, 1, 1)
    h[..., 1, 1] = refelem.trial_values(k, pts, 0, 2)
    return g, h


def _derivs(k, pts):
    return _trial_derivs(k, tuple(np.asarray(pts, dtype=float).ravel()))


class _Evaluator:
    """Vectorized integrals of sigma(u_h) over reference pieces of every triangle."""

    def __init__(self, system: SparseSystem, u, degree=None):
        self.system = system
        self.mesh = system.mesh
        self.problem = system.problem
        self.k = system.order
        self.m = system.ncomp
        self.deg = degree or 2 * self.k + 4
        l2g = system.dofmap.local_to_global
        self.U = np.asarray(u, dtype=float).reshape(-1, self.m)[l2g]  # (T, N, m)
        self.aff = self.mesh.affine

    def _coeff(self, pts):
        p = self.problem
        if p.constant_coefficient:
            return p.coefficient()
        xy = self.aff(pts)
        return p.coefficient(xy[..., 0], xy[..., 1])

    def _stress(self, pts):
        """sigma[t, q, b, j] at reference points."""
        g, _ = _derivs(self.k, pts)
        gp = np.einsum("qna,tai->tqni", g, self.aff.inv)
        du = np.einsum("tna,tqnl->tqal", self.U, gp)
        C = self._coeff(pts)
        if C.ndim == 4:
            return np.einsum("bjal,tqal->tqbj", C, du)
        return np.einsum("tqbjal,tqal->tqbj", C, du)

    def segment_flux(self, a, b):
        """int over the image of a->b of sigma n ds, n = right normal of the direction; (T, m)."""
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        rule = segment_rule(self.deg)
        pts = a + np.outer(rule.points, b - a)
        sig = self._stress(pts)
        nvec = np.einsum("ij,tjk,k->ti", ROT, self.aff.B, b - a)
        return np.einsum("q,tqbj,tj->tb", rule.weights, sig, nvec)

    def region_integrals(self, region):
        """(int div sigma, int f) over the image of a region; each (T, m)."""
        q = region_rule(region, self.deg)
        g, h = _derivs(self.k, q.points)
        binv = self.aff.inv
        hp = np.einsum("qnab,tal,tbj->tqnlj", h, binv, binv)
        d2u = np.einsum("tna,tqnlj->tqalj", self.U, hp)
        C = self._coeff(q.points)
        if C.ndim == 4:
            div = np.einsum("bjal,tqalj->tqb", C, d2u)
        else:
            div = np.einsum("tqbjal,tqalj->tqb", C, d2u)
        if not self.problem.constant_coefficient:
            xy = self.aff(q.points)
            dc = self.problem.div_coefficient(xy[..., 0], xy[..., 1])  # (T, q, m, m, 2)
            gp = np.einsum("qna,tai->tqni", g, binv)
            du = np.einsum("tna,tqnl->tqal", self.U, gp)
            div = div + np.einsum("tqbal,tqal->tqb", dc, du)
        xy = self.aff(q.points)
        f = self.problem.force(xy[..., 0], xy[..., 1])  # (m, T, q)
        wd = q.weights[None, :] * self.aff.det[:, None]
        return np.einsum("tq,tqb->tb", wd, div), np.einsum("tq,btq->tb", wd, f)


@dataclass
class ConservationReport:
    order: int
    h: float
    layer1_flux: np.ndarray  # (V, m)
    layer1_equa: np.ndarray
    layer2_flux: np.ndarray  # (T, m)
    layer2_equa: np.ndarray
    layer1_centroids: np.ndarray
    layer2_centroids: np.ndarray
    layer1_interior: np.ndarray  # bool (V,)
    forcing_scale: float

    def global_residuals(self, layer):
        """(flux sum, equation sum), each of length m, summed in element order."""
        if layer == 1:
            return _ordered_sum(self.layer1_flux), _ordered_sum(self.layer1_equa)
        if layer == 2:
            return _ordered_sum(self.layer2_flux), _ordered_sum(self.layer2_equa)
        raise ValueError(f"layer must be 1 or 2, got {layer!r}")

    def max_abs(self, layer, form, interior_only=False):
        arr = {(1, "flux"): self.layer1_flux, (1, "equa"): self.layer1_equa,
               (2, "flux"): self.layer2_flux, (2, "equa"): self.layer2_equa}[(layer, form)]
        if interior_only and layer == 1:
            arr = arr[self.layer1_interior]
        return float(np.abs(arr).max()) if arr.size else 0.0

    def normalized(self, values):
        return np.asarray(values) / self.forcing_scale if self.forcing_scale > 0 else np.asarray(values)

    def rows(self):
        m = self.layer1_flux.shape[1]
        for layer, fl, eq, cen in ((1, self.layer1_flux, self.layer1_equa, self.layer1_centroids),
                                   (2, self.layer2_flux, self.layer2_equa, self.layer2_centroids)):
            for i in range(len(fl)):
                yield (layer, i, cen[i, 0], cen[i, 1], *fl[i][:m], *eq[i][:m])

    def header(self):
        if self.layer1_flux.shape[1] == 1:
            return ["layer", "element", "centroid_x", "centroid_y", "flux_residual", "equation_residual"]
        return ["layer", "element", "centroid_x", "centroid_y", "flux_residual_1", "flux_residual_2",
                "equation_residual_1", "equation_residual_2"]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for r in self.rows():
                w.writerow([r[0], r[1]] + [f"{v:.17g}" for v in r[2:]])


def _ordered_sum(arr):
    out = np.zeros(arr.shape[1])
    for row in arr:
        out += row
    return out


def _edge_halves(i):
    """Half edges of the triangle boundary inside region Q_{i+1}, counterclockwise."""
    v, vn, vp = _REF_V[i], _REF_V[(i + 1) % 3], _REF_V[(i - 1) % 3]
    # (local edge id, start, end)
    return ((i, v, 0.5 * (v + vn)), ((i - 1) % 3, 0.5 * (vp + v), v))


def conservation_report(system: SparseSystem, u, degree=None) -> ConservationReport:
    """Residuals of the solution ``u`` (full DOF vector) on every dual element."""
    ev = _Evaluator(system, u, degree)
    mesh = system.mesh
    T, V, m = mesh.n_triangles, mesh.n_vertices, system.ncomp
    tris = mesh.triangles

    # second layer: triangle edges, counterclockwise
    edge_flux = np.stack([ev.segment_flux(_REF_V[e], _REF_V[(e + 1) % 3]) for e in range(3)], axis=1)
    div4, f4 = ev.region_integrals(4)
    l2_flux = -edge_flux.sum(axis=1) - f4
    l2_equa = -div4 - f4

    # first layer: pieces Q_{i+1} of every triangle
    on_bnd = mesh.edge_triangle_count[mesh.triangle_edges] == 1  # (T, 3)
    l1_flux = np.zeros((V, m))
    l1_equa = np.zeros((V, m))
    cen_acc = np.zeros((V, 2))
    area_acc = np.zeros(V)
    for i in range(3):
        r = i + 1
        flux = sum(ev.segment_flux(a, b) for a, b in refelem.REGION_SEGMENTS[r])
        for e, a, b in _edge_halves(i):
            flux = flux + on_bnd[:, e:e + 1] * ev.segment_flux(a, b)
        div, f = ev.region_integrals(r)
        np.add.at(l1_flux, tris[:, i], -flux - f)
        np.add.at(l1_equa, tris[:, i], -div - f)
        poly = np.array([[float(c) for c in p] for p in refelem.REGION_VERTICES[r]])
        a_ref = 1.0 / 6.0
        c_ref = _polygon_centroid(poly)
        c_phys = ev.aff(c_ref[None])[:, 0]
        w = a_ref * mesh.affine.det
        np.add.at(cen_acc, tris[:, i], c_phys * w[:, None])
        np.add.at(area_acc, tris[:, i], w)
    interior = np.ones(V, dtype=bool)
    interior[mesh.boundary_vertices] = False
    fscale = float(np.abs(_abs_forcing(ev)).sum())
    return ConservationReport(system.order, mesh_size(mesh), l1_flux, l1_equa, l2_flux, l2_equa,
                              cen_acc / area_acc[:, None], mesh.centroids.copy(), interior, fscale)


def _abs_forcing(ev):
    q = region_rule(4, ev.deg)
    xy = ev.aff(q.points)
    f = ev.problem.force(xy[..., 0], xy[..., 1])
    return np.einsum("q,t,btq->b", q.weights, ev.aff.det, np.abs(f))


def _polygon_centroid(p):
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = cr.sum() / 2
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6 * a)


def local_flux_residual(system, u, layer, element, degree=None):
    rep = conservation_report(system, u, degree)
    arr = rep.layer1_flux if layer == 1 else rep.layer2_flux
    return arr[element]


def local_equation_residual(system, u, layer, element, degree=None):
    rep = conservation_report(system, u, degree)
    arr = rep.layer1_equa if layer == 1 else rep.layer2_equa
    return arr[element]


def global_residuals(system, u, layer, degree=None):
    return conservation_report(system, u, degree).global_residuals(layer)


def boundary_flux(system, u, degree=None):
    """int over the domain boundary of sigma(u_h) n ds, shape (m,)."""
    ev = _Evaluator(system, u, degree)
    mesh = system.mesh
    out = np.zeros(system.ncomp)
    for e in range(3):
        sel = mesh.edge_triangle_count[mesh.triangle_edges[:, e]] == 1
        if sel.any():
            out += ev.segment_flux(_REF_V[e], _REF_V[(e + 1) % 3])[sel].sum(axis=0)
    return out


def total_forcing(system, degree=None):
    ev = _Evaluator(system, np.zeros(system.dofmap.n_nodes * system.ncomp), degree)
    return ev.region_integrals(4)[1].sum(axis=0)
