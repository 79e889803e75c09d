"""Triangle meshes with per-vertex feature channels.

Holds the mesh container, OBJ/CSV I/O, topology checks and the discrete
differential geometry used downstream (cotangent Laplacian, mean
curvature, inflation with sulcal depth, projection to the unit sphere).
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("thickness", "curvature", "sulc")

# cotangent weights are computed on angles clamped to this range (degrees)
_MIN_ANGLE = np.deg2rad(1.0)
_MAX_ANGLE = np.deg2rad(179.0)


class MeshError(ValueError):
    """Invalid mesh data or a mesh that violates an operation's precondition."""


@dataclass
class TriMesh:
    """Triangle mesh with named per-vertex scalar channels.

    Parameters
    ----------
    vertices : array_like, shape (V, 3)
    faces : array_like of int, shape (F, 3)
        Counter-clockwise when seen from outside (outward normals).
    features : dict of str -> array of shape (V,)
    """

    vertices: np.ndarray
    faces: np.ndarray
    features: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.features = {k: np.asarray(v, dtype=np.float64) for k, v in self.features.items()}
        nv = len(self.vertices)
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= nv:
                raise MeshError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise MeshError("face repeats a vertex")
        for name, vals in self.features.items():
            if vals.shape != (nv,):
                raise MeshError(f"feature/vertex count mismatch for channel {name!r}")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def copy(self, vertices=None):
        return TriMesh(
            self.vertices.copy() if vertices is None else vertices,
            self.faces.copy(),
            {k: v.copy() for k, v in self.features.items()},
        )

    def face_normals(self, unit=True):
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        if unit:
            n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
        return n

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def vertex_normals(self):
        """Area-weighted unit vertex normals."""
        fn = self.face_normals(unit=False)
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.faces[:, k], fn)
        return vn / np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)

    def vertex_areas(self):
        """Barycentric vertex areas (one third of each incident face)."""
        a = self.face_areas() / 3.0
        out = np.zeros(self.n_vertices)
        for k in range(3):
            np.add.at(out, self.faces[:, k], a)
        return out

    def mixed_vertex_areas(self):
        """Mixed Voronoi vertex areas (Voronoi cells, split evenly on obtuse faces)."""
        v, f = self.vertices, self.faces
        p = v[f]
        cots = np.empty((len(f), 3))
        obtuse = np.empty((len(f), 3), dtype=bool)
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b)
            cots[:, k] = cos / np.linalg.norm(np.cross(a, b), axis=1)
            obtuse[:, k] = cos < 0
        area = self.face_areas()
        any_obtuse = obtuse.any(axis=1)
        out = np.zeros(self.n_vertices)
        for k in range(3):
            i, j, l = f[:, k], f[:, (k + 1) % 3], f[:, (k + 2) % 3]
            e_ij = np.sum((v[j] - v[i]) ** 2, axis=1)
            e_il = np.sum((v[l] - v[i]) ** 2, axis=1)
            vor = (e_ij * cots[:, (k + 2) % 3] + e_il * cots[:, (k + 1) % 3]) / 8.0
            part = np.where(any_obtuse, np.where(obtuse[:, k], area / 2.0, area / 4.0), vor)
            np.add.at(out, i, part)
        return out

    def validate(self):
        """Reject zero-area faces (area <= 1e-12 x mean face area)."""
        if self.n_faces == 0:
            return self
        areas = self.face_areas()
        bad = np.flatnonzero(areas <= 1e-12 * areas.mean())
        if bad.size:
            raise MeshError(f"{bad.size} zero-area face(s), first is face {bad[0]}")
        return self

    def edges(self):
        """Unique undirected edges as a sorted (E, 2) array."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)


@dataclass
class TopologyReport:
    euler_characteristic: int
    n_boundary_loops: int
    is_closed: bool
    n_components: int
    genus: int | None = None

    @property
    def is_disk(self):
        return self.n_components == 1 and self.euler_characteristic == 1 and self.n_boundary_loops == 1

    @property
    def is_sphere(self):
        return self.n_components == 1 and self.euler_characteristic == 2 and self.is_closed


# ---------------------------------------------------------------- I/O


def load_mesh(path, feature_path=None):
    """Read an OBJ triangle mesh (``v``/``f`` lines) and an optional CSV sidecar."""
    path = Path(path)
    verts, faces = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(t) for t in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(t.split("/")[0]) for t in parts[1:]]
                    if len(idx) != 3:
                        raise MeshError(f"{path}:{lineno}: non-triangular face")
                    faces.append([i - 1 for i in idx])
            except (ValueError, IndexError) as exc:
                if isinstance(exc, MeshError):
                    raise
                raise MeshError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from exc
    if not verts:
        raise MeshError(f"{path}: no vertices")
    features = {}
    if feature_path is not None:
        features = read_features(feature_path, len(verts))
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3), features)


def read_features(path, n_vertices):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MeshError(f"{path}: empty feature file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(body) != n_vertices:
        raise MeshError(f"feature/vertex count mismatch: {len(body)} rows for {n_vertices} vertices")
    cols = np.array(body, dtype=np.float64)
    return {name: cols[:, k].copy() for k, name in enumerate(header) if name != "vertex"}


def save_mesh(mesh, path, feature_path=None):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (mesh.faces + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")
    if feature_path is not None:
        names = [n for n in FEATURE_NAMES if n in mesh.features]
        names += sorted(n for n in mesh.features if n not in FEATURE_NAMES)
        with Path(feature_path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", *names])
            for i in range(mesh.n_vertices):
                w.writerow([i, *(repr(float(mesh.features[n][i])) for n in names)])


# ---------------------------------------------------------------- topology


def boundary_halfedges(faces):
    """Directed half-edges (i, j) whose twin (j, i) does not exist."""
    he = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    keys = set(map(tuple, he.tolist()))
    return [(i, j) for i, j in he.tolist() if (j, i) not in keys]


def boundary_loops(faces):
    """Trace boundary loops; each loop starts at its lowest vertex index."""
    nxt = {}
    for i, j in boundary_halfedges(faces):
        if i in nxt:
            raise MeshError(f"non-manifold boundary vertex {i}")
        nxt[i] = j
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start:
            if cur in seen or cur not in nxt:
                raise MeshError(f"boundary traversal broke at vertex {cur}")
            loop.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        loops.append(loop)
    return loops


def mesh_topology(mesh):
    f = mesh.faces
    edges_dir = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    und = np.sort(edges_dir, axis=1)
    uniq, counts = np.unique(und, axis=0, return_counts=True)
    if np.any(counts > 2):
        e = uniq[np.argmax(counts > 2)]
        raise MeshError(f"non-manifold edge ({e[0]}, {e[1]}) shared by >2 faces")
    used = np.unique(f)
    n_v = len(used)
    chi = int(n_v - len(uniq) + len(f))
    loops = boundary_loops(f) if len(f) else []
    if len(f):
        adj = sparse.coo_matrix(
            (np.ones(len(uniq)), (uniq[:, 0], uniq[:, 1])), shape=(mesh.n_vertices,) * 2
        )
        _, labels = connected_components(adj, directed=False)
        n_comp = len(np.unique(labels[used]))
    else:
        n_comp = 0
    closed = len(loops) == 0
    genus = None
    if closed and n_comp == 1:
        genus = (2 - chi) // 2
    return TopologyReport(chi, len(loops), closed, n_comp, genus)


# ---------------------------------------------------------------- geometry


def _corner_cotangents(vertices, faces):
    """cot of the angle at each corner of each face, clamped, shape (F, 3)."""
    p = vertices[faces]
    cots = np.empty((len(faces), 3))
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", a, b)
        sin = np.linalg.norm(np.cross(a, b), axis=1)
        ang = np.clip(np.arctan2(sin, cos), _MIN_ANGLE, _MAX_ANGLE)
        cots[:, k] = 1.0 / np.tan(ang)
    return cots


def cotangent_laplacian(mesh):
    """Positive semi-definite cotangent Laplacian as CSR.

    Off-diagonal entries are -(cot a + cot b)/2 for the two angles opposite
    an edge; diagonal entries make every row sum to zero.
    """
    f = mesh.faces
    n = mesh.n_vertices
    cots = _corner_cotangents(mesh.vertices, f)
    # the corner k is opposite edge (k+1, k+2)
    i = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([cots[:, 0], cots[:, 1], cots[:, 2]])
    off = sparse.coo_matrix((-w, (i, j)), shape=(n, n))
    off = (off + off.T).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sparse.diags(diag)).tocsr()


def boundary_vertex_mask(mesh):
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    for i, j in boundary_halfedges(mesh.faces):
        mask[i] = mask[j] = True
    return mask


def mean_curvature(mesh):
    """Signed mean curvature per vertex, convex regions positive.

    Boundary vertices are set to 0.
    """
    L = cotangent_laplacian(mesh)
    lx = L @ mesh.vertices
    area = mesh.mixed_vertex_areas()
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.faces.ravel()] = True
    if np.any(area[used] <= 0):
        raise MeshError("zero vertex area")
    area = np.where(used, area, 1.0)
    sign = np.sign(np.einsum("ij,ij->i", lx, mesh.vertex_normals()))
    h = sign * np.linalg.norm(lx, axis=1) / (2.0 * area)
    h[boundary_vertex_mask(mesh)] = 0.0
    h[~used] = 0.0
    return h


def inflate_surface(mesh, n_iters=200, step=0.5):
    """Inflate by explicit Laplacian smoothing and record sulcal depth.

    The smoothing operator is the area-normalized cotangent Laplacian of the
    input mesh, built once: x <- x - tau * M^-1 L x with
    tau = step / max_i(L_ii / M_i), which keeps every mode stable for
    step in (0, 1). Depth accumulates the displacement along the current
    vertex normal minus its area-weighted mean, so uniform shrinkage does
    not register. Positive depth marks vertices that moved outward (sulci).

    Returns (inflated mesh, depth).
    """
    depth = np.zeros(mesh.n_vertices)
    if n_iters == 0:
        return mesh.copy(), depth
    if not 0.0 < step < 1.0:
        raise MeshError("step must lie in (0, 1)")
    L = cotangent_laplacian(mesh)
    m = mesh.mixed_vertex_areas()
    tau = step / np.max(L.diagonal() / m)
    op = (sparse.diags(tau / m) @ L).tocsr()
    x = mesh.vertices.copy()
    f = mesh.faces
    nf = len(f)
    # vertex-by-face incidence replaces scatter-adds in the loop
    inc = sparse.csr_matrix(
        (np.ones(3 * nf), (f.T.reshape(-1), np.tile(np.arange(nf), 3))),
        shape=(mesh.n_vertices, nf),
    )
    for _ in range(n_iters):
        p = x[f]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        fa = 0.5 * np.sqrt(np.einsum("ij,ij->i", cr, cr))
        n = inc @ cr
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
        area = (inc @ fa) / 3.0
        d = -(op @ x)
        dn = np.einsum("ij,ij->i", d, n)
        depth += dn - np.dot(dn, area) / area.sum()
        x = x + d
    return mesh.copy(vertices=x), depth


def project_to_sphere(mesh):
    """Center on the vertex centroid and push every vertex to unit length."""
    x = mesh.vertices - mesh.vertices.mean(axis=0)
    r = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(r == 0):
        raise MeshError("vertex at the centroid; cannot project to sphere")
    x = x / r
    p = x[mesh.faces]
    vol = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p.sum(axis=1))
    flipped = int(np.count_nonzero(vol <= 0))
    if flipped:
        raise MeshError(
            f"{flipped} face(s) flipped on the sphere; surface is not star-shaped, inflate more"
        )
    return mesh.copy(vertices=x)


# ---------------------------------------------------------------- constructors


def icosphere(level=0, radius=1.0):
    """Subdivided icosahedron with outward CCW faces."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    f = faces
    for _ in range(level):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriMesh(np.array(v) * radius, np.array(f, dtype=np.int64))


def grid_mesh(nx, ny, width=1.0, height=1.0):
    """Planar (nx+1) x (ny+1) grid in the z=0 plane, CCW seen from +z."""
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    faces = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(verts, np.array(faces, dtype=np.int64))


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
