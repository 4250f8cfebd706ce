"""Primary triangulations, affine maps, global DOF numbering and dual topology.

Text format (read_mesh / write_mesh)::

    V T
    x y marker        (V lines, marker 1 on the boundary, 0 inside)
    i j k             (T lines, 0-based, counterclockwise)

Floats are written with ``repr`` (shortest round-trip form) so that a
write/read cycle reproduces every coordinate bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import refelem


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class AffineMap:
    """x = B xhat + c, vectorized over triangles (leading axis)."""

    B: np.ndarray  # (T, 2, 2)
    c: np.ndarray  # (T, 2)

    @cached_property
    def det(self):
        return np.linalg.det(self.B)

    @cached_property
    def inv(self):
        return np.linalg.inv(self.B)

    @cached_property
    def inv_T(self):
        return np.swapaxes(self.inv, -1, -2)

    def __call__(self, ref_points):
        """Map reference points (n, 2) to (T, n, 2)."""
        return np.einsum("tij,nj->tni", self.B, np.asarray(ref_points)) + self.c[:, None, :]


class Mesh:
    def __init__(self, vertices, triangles, markers=None, check=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (V, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (T, 3)")
        t = self.triangles
        if t.size and (t.min() < 0 or t.max() >= len(self.vertices)):
            raise MeshError("triangle references a missing vertex")
        if markers is None:
            markers = np.zeros(len(self.vertices), dtype=np.int64)
            markers[self.boundary_vertices] = 1
        self.markers = np.asarray(markers, dtype=np.int64)
        if check:
            self.validate()

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def validate(self):
        t = self.triangles
        if t.size and (t.min() < 0 or t.max() >= self.n_vertices):
            raise MeshError("triangle references a missing vertex")
        if np.any(self.affine.det <= 0):
            bad = np.flatnonzero(self.affine.det <= 0)
            raise MeshError(f"triangles not positively oriented: {bad[:10].tolist()}")
        counts = np.bincount(self._edge_inverse, minlength=len(self.edges))
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: edge shared by more than two triangles")
        if len(self.markers) != self.n_vertices:
            raise MeshError("one marker per vertex required")
        if np.any(self.markers[self.boundary_vertices] == 0):
            raise MeshError("unmarked boundary vertex")

    # -- geometry -------------------------------------------------------
    @cached_property
    def affine(self):
        v = self.vertices[self.triangles]
        B = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
        return AffineMap(B, v[:, 0].copy())

    @property
    def areas(self):
        return 0.5 * self.affine.det

    @cached_property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def angles(self):
        """Interior angles in degrees, shape (T, 3), angle at local vertex i."""
        v = self.vertices[self.triangles]
        out = np.empty((self.n_triangles, 3))
        for i in range(3):
            a = v[:, (i + 1) % 3] - v[:, i]
            b = v[:, (i + 2) % 3] - v[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, i] = np.degrees(np.arccos(np.clip(cos, -1, 1)))
        return out

    def circumdiameters(self):
        v = self.vertices[self.triangles]
        la = np.linalg.norm(v[:, 1] - v[:, 2], axis=1)
        lb = np.linalg.norm(v[:, 2] - v[:, 0], axis=1)
        lc = np.linalg.norm(v[:, 0] - v[:, 1], axis=1)
        return la * lb * lc / (2 * self.areas)

    # -- edges ----------------------------------------------------------
    @cached_property
    def _edge_data(self):
        t = self.triangles
        # local edge e runs from local vertex e to e+1
        loc = np.stack([t, np.roll(t, -1, axis=1)], axis=-1).reshape(-1, 2)
        key = np.sort(loc, axis=1)
        edges, inverse = np.unique(key, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1)

    @property
    def edges(self):
        """Unique edges (E, 2) with lower vertex index first."""
        return self._edge_data[0]

    @property
    def _edge_inverse(self):
        return self._edge_data[1]

    @cached_property
    def triangle_edges(self):
        """(T, 3) edge ids; local edge e joins local vertices e and e+1."""
        return self._edge_inverse.reshape(-1, 3)

    @cached_property
    def edge_triangle_count(self):
        return np.bincount(self._edge_inverse, minlength=len(self.edges))

    @cached_property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_triangle_count == 1)

    @cached_property
    def boundary_vertices(self):
        return np.unique(self.edges[self.boundary_edges])

    @cached_property
    def boundary_local_edges(self):
        """(triangle, local edge) pairs lying on the boundary."""
        on = self.edge_triangle_count[self.triangle_edges] == 1
        return np.argwhere(on)


def build_structured(n, domain=((0.0, 1.0), (0.0, 1.0))) -> Mesh:
    """n x n rectangles, each cut along its lower-left to upper-right diagonal."""
    n = int(n)
    if n < 1:
        raise MeshError("n must be at least 1")
    (x0, x1), (y0, y1) = domain
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {domain!r}")
    xs, ys = np.linspace(x0, x1, n + 1), np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # idx[j, i] at (x_i, y_j)
    v00, v10 = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    v01, v11 = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2], tris[1::2] = lower, upper
    return Mesh(verts, tris)


def min_angle(mesh) -> float:
    return float(mesh.angles().min())


def mesh_size(mesh) -> float:
    """h: the largest circumdiameter."""
    return float(mesh.circumdiameters().max())


def average_size(mesh) -> float:
    """h-bar = 1/sqrt(number of triangles)."""
    return 1.0 / np.sqrt(mesh.n_triangles)


# ------------------------------------------------------------- DOF map

class DofMap:
    """Global numbering of the Lagrange nodes of order k.

    Vertices first, then k-1 nodes per edge ordered from the lower to the
    higher global vertex index, then the interior nodes of each triangle.
    ``local_to_global[t, i]`` is the global node of reference node P_{i+1}.
    """

    def __init__(self, mesh: Mesh, order: int):
        k = refelem.check_order(order)
        self.mesh, self.order = mesh, k
        nv, ne, nt = mesh.n_vertices, len(mesh.edges), mesh.n_triangles
        ni = refelem.n_local(k) - 3 * k
        self.n_edge_nodes = k - 1
        self.n_interior = ni
        self.n_nodes = nv + ne * (k - 1) + nt * ni
        l2g = np.empty((nt, refelem.n_local(k)), dtype=np.int64)
        t = mesh.triangles
        te = mesh.triangle_edges
        for e in range(3):
            va, vb = t[:, e], t[:, (e + 1) % 3]
            l2g[:, e * k] = va
            forward = va < vb
            for j in range(k - 1):
                pos = np.where(forward, j, k - 2 - j)
                l2g[:, e * k + 1 + j] = nv + te[:, e] * (k - 1) + pos
        base = nv + ne * (k - 1)
        for i in range(ni):
            l2g[:, 3 * k + i] = base + np.arange(nt) * ni + i
        self.local_to_global = l2g

    @cached_property
    def coordinates(self):
        ref = refelem.node_coordinates(self.order).as_array()
        pts = self.mesh.affine(ref)
        xy = np.empty((self.n_nodes, 2))
        xy[self.local_to_global.ravel()] = pts.reshape(-1, 2)
        return xy

    @cached_property
    def boundary_nodes(self):
        m, k = self.mesh, self.order
        nodes = [m.boundary_vertices]
        nv = m.n_vertices
        for e in m.boundary_edges:
            nodes.append(nv + e * (k - 1) + np.arange(k - 1))
        return np.unique(np.concatenate(nodes)).astype(np.int64)

    @cached_property
    def is_boundary(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask


# --------------------------------------------------------- dual topology

@dataclass(frozen=True)
class DualTopology:
    """Both dual layers of a mesh.

    ``region_polygons[t, i]`` is the image of Q_{i+1} in triangle t (4
    corners, counterclockwise); Q4 is the triangle itself.  The first-layer
    element of vertex v is the union of ``vertex_pieces[v]`` (triangle,
    local vertex) pieces.  ``segments[t, s]`` is the midpoint-to-barycenter
    segment ending at the midpoint of local edge s, with ``segment_normals``
    the unit normal pointing from region s+1 into region s+2 (mod 3).
    """

    mesh: Mesh
    region_polygons: np.ndarray  # (T, 3, 4, 2)
    vertex_pieces: tuple
    segments: np.ndarray  # (T, 3, 2, 2)
    segment_normals: np.ndarray  # (T, 3, 2)

    @property
    def n_first_layer(self):
        return self.mesh.n_vertices

    @property
    def n_second_layer(self):
        return self.mesh.n_triangles

    def piece_areas(self):
        p = self.region_polygons
        x, y = p[..., 0], p[..., 1]
        return 0.5 * (x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y).sum(-1)

    def first_layer_areas(self):
        out = np.zeros(self.mesh.n_vertices)
        np.add.at(out, self.mesh.triangles.ravel(), self.piece_areas().ravel())
        return out


def dual_topology(mesh: Mesh) -> DualTopology:
    ref = {i: np.array([[float(c) for c in v] for v in refelem.REGION_VERTICES[i]]) for i in (1, 2, 3)}
    polys = np.stack([mesh.affine(ref[i]) for i in (1, 2, 3)], axis=1)
    v = mesh.vertices[mesh.triangles]
    bary = v.mean(axis=1)
    mids = 0.5 * (v + np.roll(v, -1, axis=1))
    segs = np.stack([mids, np.broadcast_to(bary[:, None, :], mids.shape)], axis=2)
    d = segs[:, :, 1] - segs[:, :, 0]
    # region s+1 lies left of midpoint -> barycenter, so the right normal
    # points into region s+2
    normals = np.stack([d[..., 1], -d[..., 0]], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    pieces = [[] for _ in range(mesh.n_vertices)]
    for t, tri in enumerate(mesh.triangles):
        for i, vi in enumerate(tri):
            pieces[vi].append((t, i))
    return DualTopology(mesh, polys, tuple(tuple(p) for p in pieces), segs, normals)


# ---------------------------------------------------------------- text IO

def write_mesh(mesh: Mesh, path):
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for (x, y), m in zip(mesh.vertices, mesh.markers):
            fh.write(f"{float(x)!r} {float(y)!r} {int(m)}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    try:
        nv, nt = int(lines[0][0]), int(lines[0][1])
        vl, tl = lines[1:1 + nv], lines[1 + nv:1 + nv + nt]
        if len(vl) != nv or len(tl) != nt:
            raise MeshError(f"expected {nv} vertices and {nt} triangles")
        verts = np.array([[float(r[0]), float(r[1])] for r in vl])
        markers = np.array([int(r[2]) for r in vl], dtype=np.int64)
        tris = np.array([[int(c) for c in r[:3]] for r in tl], dtype=np.int64).reshape(-1, 3)
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    return Mesh(verts, tris, markers)
