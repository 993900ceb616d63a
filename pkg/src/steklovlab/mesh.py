"""Tetrahedral meshes of the unit cube and unit ball.

Provides the connectivity needed by vertex- and edge-based finite elements:
a deterministic global edge numbering (sorted vertex pairs, lexicographic
order), signed per-tetrahedron edge references, and an oriented boundary
surface with per-triangle tangent frames.

Conventions
-----------
* Every tetrahedron is stored with positive signed volume.
* A global edge is the sorted pair (lo, hi); its intrinsic direction is
  lo -> hi.  ``tet_edge_signs`` records whether the local traversal of a
  tetrahedron agrees with that direction.
* Boundary triangles are oriented so that (b-a) x (c-a) points out of the
  domain.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError, MalformedMeshError

# Local edge k connects local vertices LOCAL_EDGES[k]; local face k is
# opposite local vertex k and is oriented outward for a positive tet.
LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]], dtype=np.int64)
LOCAL_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]], dtype=np.int64)

MESH_FORMAT_VERSION = 1


def _signed_volumes(vertices, tets):
    e = vertices[tets[:, 1:]] - vertices[tets[:, :1]]
    return np.linalg.det(e) / 6.0


class Mesh:
    """Immutable tetrahedral mesh with derived connectivity.

    Parameters
    ----------
    vertices : (V, 3) float array
    tets : (T, 4) int array, positively oriented
    region : (T,) int array, material region tag per element (default 1)
    kind : "cube" | "ball" | "generic"; ball meshes re-project boundary
        vertices to the unit sphere on refinement.
    """

    def __init__(self, vertices, tets, region=None, kind="generic"):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        tets = np.ascontiguousarray(tets, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MalformedMeshError(f"vertices must be (V, 3), got {vertices.shape}")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MalformedMeshError(f"tets must be (T, 4), got {tets.shape}")
        if tets.size and (tets.min() < 0 or tets.max() >= len(vertices)):
            raise MalformedMeshError("tet vertex index out of range")
        if region is None:
            region = np.ones(len(tets), dtype=np.int64)
        else:
            region = np.ascontiguousarray(region, dtype=np.int64)
            if region.shape != (len(tets),):
                raise MalformedMeshError("region tag array must have one entry per tet")

        vols = _signed_volumes(vertices, tets)
        if np.any(vols <= 0.0):
            bad = int(np.argmin(vols))
            raise MalformedMeshError(f"tet {bad} has non-positive volume {vols[bad]:.3e}")

        self.vertices = vertices
        self.tets = tets
        self.region = region
        self.kind = kind
        self._volumes = vols

        self._build_edges()
        self._build_faces()
        for arr in (self.vertices, self.tets, self.region, self.edges,
                    self.tet_edges, self.tet_edge_signs, self.boundary_faces):
            arr.setflags(write=False)
        self._cache = {}

    # ------------------------------------------------------------------ #
    def _build_edges(self):
        pairs = self.tets[:, LOCAL_EDGES]                      # (T, 6, 2)
        lo = pairs.min(axis=2)
        hi = pairs.max(axis=2)
        flat = np.stack([lo.ravel(), hi.ravel()], axis=1)
        edges, inverse = np.unique(flat, axis=0, return_inverse=True)
        self.edges = edges                                     # lexicographically sorted
        self.tet_edges = inverse.reshape(len(self.tets), 6).astype(np.int64)
        first = pairs[..., 0]
        self.tet_edge_signs = np.where(first == lo, 1, -1).astype(np.int64)

    def _build_faces(self):
        faces = self.tets[:, LOCAL_FACES].reshape(-1, 3)       # oriented outward per tet
        keys = np.sort(faces, axis=1)
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            raise MalformedMeshError("a face is shared by more than two tets (non-manifold)")
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        single = order[starts[counts == 1]]
        self.boundary_faces = faces[single]
        self.boundary_face_tets = (single // 4).astype(np.int64)

    # ------------------------------------------------------------------ #
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def volumes(self):
        return self._volumes

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def centroids(self):
        return self._cached("centroids", lambda: self.vertices[self.tets].mean(axis=1))

    @property
    def tet_gradients(self):
        """Gradients of the four barycentric coordinates per tet, shape (T, 4, 3)."""
        def build():
            e = self.vertices[self.tets[:, 1:]] - self.vertices[self.tets[:, :1]]
            gi = np.linalg.inv(e).transpose(0, 2, 1)           # rows: grad(lambda_1..3)
            g0 = -gi.sum(axis=1, keepdims=True)
            return np.concatenate([g0, gi], axis=1)
        return self._cached("tet_gradients", build)

    @property
    def boundary_vertex_ids(self):
        return self._cached("bverts", lambda: np.unique(self.boundary_faces))

    @property
    def boundary_edge_ids(self):
        def build():
            tri = self.boundary_faces
            pairs = np.concatenate([tri[:, [0, 1]], tri[:, [0, 2]], tri[:, [1, 2]]])
            pairs = np.sort(pairs, axis=1)
            pairs = np.unique(pairs, axis=0)
            return self.find_edges(pairs)
        return self._cached("bedges", build)

    @property
    def interior_edge_ids(self):
        return self._cached(
            "iedges",
            lambda: np.setdiff1d(np.arange(self.n_edges), self.boundary_edge_ids),
        )

    def find_edges(self, pairs):
        """Global edge ids for sorted vertex pairs; raises if a pair is not an edge."""
        pairs = np.asarray(pairs, dtype=np.int64)
        key = self.edges[:, 0] * self.n_vertices + self.edges[:, 1]
        want = pairs[:, 0] * self.n_vertices + pairs[:, 1]
        idx = np.searchsorted(key, want)
        if np.any(idx >= len(key)) or np.any(key[np.minimum(idx, len(key) - 1)] != want):
            raise MalformedMeshError("vertex pair is not a mesh edge")
        return idx


class SurfaceMesh:
    """Closed oriented triangulation of the domain boundary.

    ``triangles`` index into the surface vertex numbering; ``tri_vol`` keeps
    the original volume vertex ids (outward orientation preserved).  Each
    triangle carries its area, outward unit normal and an orthonormal
    tangent frame (t1, t2, normal).
    """

    def __init__(self, mesh: Mesh):
        tri_vol = mesh.boundary_faces
        if len(tri_vol) == 0:
            raise MalformedMeshError("mesh has no boundary faces")
        vertex_ids = np.unique(tri_vol)
        vol_to_surf = -np.ones(mesh.n_vertices, dtype=np.int64)
        vol_to_surf[vertex_ids] = np.arange(len(vertex_ids))

        self.mesh = mesh
        self.vertex_ids = vertex_ids
        self.vol_to_surf = vol_to_surf
        self.points = mesh.vertices[vertex_ids]
        self.tri_vol = tri_vol
        self.triangles = vol_to_surf[tri_vol]

        p = mesh.vertices[tri_vol]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        nrm = np.cross(e1, e2)
        dbl = np.linalg.norm(nrm, axis=1)
        if np.any(dbl <= 0.0):
            raise MalformedMeshError("degenerate boundary triangle")
        self.areas = 0.5 * dbl
        self.normals = nrm / dbl[:, None]
        t1 = e1 / np.linalg.norm(e1, axis=1)[:, None]
        self.tangent1 = t1
        self.tangent2 = np.cross(self.normals, t1)

        # Per-triangle surface gradients of the three vertex hat functions.
        g0 = np.cross(self.normals, p[:, 2] - p[:, 1]) / dbl[:, None]
        g1 = np.cross(self.normals, p[:, 0] - p[:, 2]) / dbl[:, None]
        g2 = np.cross(self.normals, p[:, 1] - p[:, 0]) / dbl[:, None]
        self.hat_gradients = np.stack([g0, g1, g2], axis=1)

        self._check_closed()
        self._check_outward()

    @property
    def n_vertices(self):
        return len(self.vertex_ids)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def _check_closed(self):
        tri = self.triangles
        pairs = np.concatenate([tri[:, [0, 1]], tri[:, [0, 2]], tri[:, [1, 2]]])
        pairs = np.sort(pairs, axis=1)
        _, counts = np.unique(pairs, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise MalformedMeshError("boundary surface is not closed")

    def _check_outward(self):
        face_c = self.mesh.vertices[self.tri_vol].mean(axis=1)
        tet_c = self.mesh.centroids[self.mesh.boundary_face_tets]
        if np.any(np.einsum("ij,ij->i", self.normals, face_c - tet_c) <= 0.0):
            raise MalformedMeshError("boundary triangle normal points inward")

    def lumped_mass(self):
        """Vertex weights: one third of the adjacent triangle areas."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return w

    def euler_characteristic(self):
        tri = self.triangles
        pairs = np.concatenate([tri[:, [0, 1]], tri[:, [0, 2]], tri[:, [1, 2]]])
        n_edges = len(np.unique(np.sort(pairs, axis=1), axis=0))
        return self.n_vertices - n_edges + self.n_triangles


# ---------------------------------------------------------------------- #
# generators
# ---------------------------------------------------------------------- #

_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def generate_cube_mesh(n):
    """Mesh [0,1]^3 with n subdivisions per axis, six tets per subcube.

    The subcube triangulation follows the path-based pattern whose induced
    face diagonals are translation invariant, so neighbouring cells match.
    """
    if n < 1:
        raise ValueError(f"subdivision count must be >= 1, got {n}")
    n = int(n)
    axis = np.arange(n + 1) / n
    X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(ix, iy, iz):
        return (ix * (n + 1) + iy) * (n + 1) + iz

    ii, jj, kk = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)   # (C, 3)
    tets = []
    unit = np.eye(3, dtype=np.int64)
    for perm in _PERMS:
        p0 = base
        p1 = base + unit[perm[0]]
        p2 = base + unit[perm[0]] + unit[perm[1]]
        p3 = base + 1
        tet = np.stack([
            vid(p0[:, 0], p0[:, 1], p0[:, 2]),
            vid(p1[:, 0], p1[:, 1], p1[:, 2]),
            vid(p2[:, 0], p2[:, 1], p2[:, 2]),
            vid(p3[:, 0], p3[:, 1], p3[:, 2]),
        ], axis=1)
        tets.append(tet)
    tets = np.concatenate(tets)
    tets = _orient_positive(vertices, tets)
    return Mesh(vertices, tets, kind="cube")


def generate_ball_mesh(level):
    """Mesh the unit ball: subdivided octahedron seed, `level` uniform refinements.

    Boundary vertices are projected to the unit sphere after every
    refinement, so all boundary vertices sit on the sphere exactly.
    """
    if level < 0:
        raise ValueError(f"refinement level must be >= 0, got {level}")
    vertices = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
    ])
    xs = {1: 1, -1: 2}
    ys = {1: 3, -1: 4}
    zs = {1: 5, -1: 6}
    tets = []
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                a, b, c = xs[sx], ys[sy], zs[sz]
                if sx * sy * sz < 0:
                    b, c = c, b
                tets.append([0, a, b, c])
    mesh = Mesh(vertices, np.array(tets, dtype=np.int64), kind="ball")
    for _ in range(level + 1):   # seed itself is refined once
        mesh = refine_uniform(mesh)
    return mesh


def _orient_positive(vertices, tets):
    vols = _signed_volumes(vertices, tets)
    flip = vols < 0
    tets = tets.copy()
    tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()
    return tets


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split each tet 1:8 (red refinement); region tags are inherited.

    Ball meshes re-project boundary vertices to the unit sphere.
    """
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.concatenate([mesh.vertices, mids])

    v = mesh.tets
    m = nv + mesh.tet_edges                       # columns: m01 m02 m03 m12 m13 m23
    m01, m02, m03, m12, m13, m23 = (m[:, k] for k in range(6))
    v0, v1, v2, v3 = (v[:, k] for k in range(4))
    children = np.stack([
        np.stack([v0, m01, m02, m03], axis=1),
        np.stack([v1, m01, m12, m13], axis=1),
        np.stack([v2, m02, m12, m23], axis=1),
        np.stack([v3, m03, m13, m23], axis=1),
        np.stack([m02, m13, m01, m03], axis=1),
        np.stack([m02, m13, m03, m23], axis=1),
        np.stack([m02, m13, m23, m12], axis=1),
        np.stack([m02, m13, m12, m01], axis=1),
    ], axis=1)                                    # (T, 8, 4)
    tets = children.reshape(-1, 4)
    region = np.repeat(mesh.region, 8)
    tets = _orient_positive(vertices, tets)

    refined = Mesh(vertices, tets, region, kind=mesh.kind)
    if mesh.kind == "ball":
        coords = refined.vertices.copy()
        b = refined.boundary_vertex_ids
        coords[b] /= np.linalg.norm(coords[b], axis=1)[:, None]
        refined = Mesh(coords, tets, region, kind="ball")
    return refined


def extract_boundary(mesh: Mesh) -> SurfaceMesh:
    """Oriented closed boundary triangulation of a valid mesh."""
    return SurfaceMesh(mesh)


# ---------------------------------------------------------------------- #
# serialization
# ---------------------------------------------------------------------- #

def save_mesh(mesh: Mesh, path):
    """Write the versioned mesh JSON; edges/boundary are never serialized."""
    doc = {
        "version": MESH_FORMAT_VERSION,
        "vertices": mesh.vertices.tolist(),
        "tets": mesh.tets.tolist(),
        "region": mesh.region.tolist(),
    }
    if mesh.kind != "generic":
        doc["kind"] = mesh.kind
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_mesh(path) -> Mesh:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("version") != MESH_FORMAT_VERSION:
        raise ConfigError(f"unsupported mesh file version in {path}")
    for key in ("vertices", "tets", "region"):
        if key not in doc:
            raise ConfigError(f"mesh file missing '{key}'")
    return Mesh(
        np.asarray(doc["vertices"], dtype=np.float64),
        np.asarray(doc["tets"], dtype=np.int64),
        np.asarray(doc["region"], dtype=np.int64),
        kind=doc.get("kind", "generic"),
    )
