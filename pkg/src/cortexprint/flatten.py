"""Quasi-conformal flattening of spherical halves onto the unit square.

A closed sphere mesh is cut by the x=0 plane into two disks. Each disk is
mapped to [0, 1]^2 with a harmonic initializer, then driven toward a map of
uniform Beltrami magnitude (a Teichmuller-type map) by alternating between
projecting the Beltrami coefficient onto the form k * phase and rebuilding
the map with the linear Beltrami solver.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .mesh import MeshError, TriMesh, boundary_loops, cotangent_laplacian, mesh_topology

logger = logging.getLogger(__name__)

# direct factorization up to this many unknowns, CG above
DIRECT_SOLVE_LIMIT = 50_000

SQUARE_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class FlattenError(MeshError):
    pass


@dataclass
class PlanarMap:
    uv: np.ndarray
    source: TriMesh

    def signed_areas(self):
        p = self.uv[self.source.faces]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def flipped_faces(self):
        return np.flatnonzero(self.signed_areas() <= 0)


@dataclass
class BeltramiField:
    """Per-face Beltrami coefficients expressed in per-face tangent frames.

    ``frames`` holds the unit 3D direction used as the local x axis of each
    face; the local y axis is normal x frame.
    """

    mu: np.ndarray
    frames: np.ndarray

    @property
    def k(self):
        return float(np.mean(np.abs(self.mu)))

    @property
    def abs_std(self):
        return float(np.std(np.abs(self.mu)))


@dataclass
class BoundaryCondition:
    """Fixed unit-square positions for the boundary loop of a disk."""

    indices: np.ndarray
    positions: np.ndarray
    corners: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.corners = np.asarray(self.corners, dtype=np.int64)


@dataclass
class DistortionReport:
    area_ratio: np.ndarray
    angle_error_mean: float
    angle_error_max: float
    mu_abs_mean: float
    mu_abs_std: float
    mu_abs_max: float
    flipped_faces: int

    def to_text(self):
        lam = self.area_ratio
        lines = [
            f"n_faces={lam.size}",
            f"area_ratio_mean={float(lam.mean())!r}",
            f"area_ratio_min={float(lam.min())!r}",
            f"area_ratio_max={float(lam.max())!r}",
            f"angle_error_mean_deg={float(self.angle_error_mean)!r}",
            f"angle_error_max_deg={float(self.angle_error_max)!r}",
            f"mu_abs_mean={float(self.mu_abs_mean)!r}",
            f"mu_abs_std={float(self.mu_abs_std)!r}",
            f"mu_abs_max={float(self.mu_abs_max)!r}",
            f"flipped_faces={self.flipped_faces}",
        ]
        return "\n".join(lines) + "\n"


@dataclass
class TeichmullerResult:
    map: PlanarMap
    mu: BeltramiField
    report: DistortionReport
    converged: bool
    iterations: int
    std_history: list = field(default_factory=list)


# ---------------------------------------------------------------- cutting


def split_sphere(sphere, return_index=False):
    """Cut a closed sphere mesh into the x >= 0 and x < 0 halves.

    Faces go to the side of their centroid's x coordinate; vertices on the
    cut are duplicated into both halves. With ``return_index`` the original
    vertex ids of each half are returned as well.
    """
    side = sphere.vertices[sphere.faces].mean(axis=1)[:, 0] >= 0
    if side.all() or not side.any():
        raise FlattenError("empty hemisphere")
    side = _resolve_ears(sphere.faces, side)
    halves = []
    for sel in (side, ~side):
        if not sel.any():
            raise FlattenError("empty hemisphere")
        faces = sphere.faces[sel]
        used = np.unique(faces)
        remap = np.full(sphere.n_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        half = TriMesh(
            sphere.vertices[used],
            remap[faces],
            {k: v[used] for k, v in sphere.features.items()},
        )
        topo = mesh_topology(half)
        if not topo.is_disk:
            raise FlattenError(
                f"hemisphere is not a disk (chi={topo.euler_characteristic}, "
                f"loops={topo.n_boundary_loops}, components={topo.n_components})"
            )
        halves.append((half, used))
    if return_index:
        return halves[0], halves[1]
    return halves[0][0], halves[1][0]


def _resolve_ears(faces, side):
    """Move faces with two or more cut edges to the other side, one at a time.

    Such faces have all three vertices on the cut and would collapse onto
    one side of the square. Each move shortens the cut by at least one edge,
    so the sweep terminates.
    """
    side = side.copy()
    adj = face_adjacency(faces)
    nbrs = np.split(adj.indices, adj.indptr[1:-1])

    def n_cut(f):
        return int(np.count_nonzero(side[nbrs[f]] != side[f]))

    pending = sorted(f for f in range(len(faces)) if n_cut(f) >= 2)
    while pending:
        f = pending.pop(0)
        if n_cut(f) < 2:
            continue
        side[f] = ~side[f]
        touched = [g for g in nbrs[f] if n_cut(g) >= 2]
        pending = sorted(set(pending).union(touched))
    return side


def extract_boundary(open_mesh):
    loops = boundary_loops(open_mesh.faces)
    if not loops:
        raise FlattenError("no boundary")
    if len(loops) > 1:
        raise FlattenError(f"expected one boundary loop, found {len(loops)}")
    return np.array(loops[0], dtype=np.int64)


def rectangle_boundary_conditions(loop, positions, corners=None, axes=((0, 1, 0), (0, 0, 1))):
    """Pin a boundary loop to the unit-square perimeter by arc length.

    Without explicit ``corners`` the four corners are the loop vertices whose
    direction in the plane spanned by ``axes`` is closest to +a1, +a2, -a1,
    -a2. Of the +a1/+a2 pair, the one the traversal reaches first goes to
    (0, 0), so that mirror-image inputs produce horizontally flipped maps.
    Explicit ``corners`` are loop vertices listed in the order they take
    (0,0), (1,0), (1,1), (0,1).
    """
    loop = np.asarray(loop, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.float64)
    n = len(loop)
    if n < 4:
        raise FlattenError("boundary loop needs at least 4 vertices")
    where = {int(v): k for k, v in enumerate(loop)}

    if corners is None:
        a1, a2 = (np.asarray(a, dtype=np.float64) for a in axes)
        planar = np.column_stack([positions @ a1, positions @ a2])
        planar /= np.maximum(np.linalg.norm(planar, axis=1, keepdims=True), 1e-300)
        targets = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=np.float64)
        slots = np.argmax(planar @ targets.T, axis=0)  # loop slot per direction
        if len(set(slots.tolist())) < 4:
            raise FlattenError("corner selection collapsed: two corners coincide")
        order = np.argsort(slots)  # directions in traversal order
        # rotate so the traversal starts at +a1
        start = int(np.flatnonzero(order == 0)[0])
        seq = np.roll(order, -start).tolist()
        if seq == [0, 1, 2, 3]:
            assign = [0, 1, 2, 3]
        elif seq == [0, 3, 2, 1]:
            assign = [1, 0, 3, 2]
        else:
            raise FlattenError("boundary corners are not in cyclic order")
        corner_slots = slots[assign]
    else:
        corner_slots = np.array([where[int(c)] for c in corners])
        rel = (corner_slots - corner_slots[0]) % n
        if not np.all(np.diff(rel) > 0):
            raise FlattenError("corners must appear in loop traversal order")

    uv = np.zeros((n, 2))
    seg_len = np.linalg.norm(np.roll(positions, -1, axis=0) - positions, axis=1)
    for side in range(4):
        s0 = int(corner_slots[side])
        s1 = int(corner_slots[(side + 1) % 4])
        count = (s1 - s0) % n
        idx = (s0 + np.arange(count + 1)) % n
        arc = np.concatenate([[0.0], np.cumsum(seg_len[idx[:-1]])])
        t = arc / arc[-1]
        p0, p1 = SQUARE_CORNERS[side], SQUARE_CORNERS[(side + 1) % 4]
        uv[idx[:-1]] = p0 + t[:-1, None] * (p1 - p0)
    return BoundaryCondition(loop, uv, loop[corner_slots])


# ---------------------------------------------------------------- local frames


def default_frames(mesh):
    """Project one global axis into every face plane.

    The axis is the coordinate axis least aligned with the area-weighted
    mean normal, so a mesh in the z=0 plane gets the plain x axis.
    """
    fn = mesh.face_normals(unit=False)
    mean_n = fn.sum(axis=0)
    axis = np.eye(3)[int(np.argmin(np.abs(mean_n)))]
    return project_frames(mesh, np.broadcast_to(axis, fn.shape))


def project_frames(mesh, directions):
    n = mesh.face_normals()
    d = directions - np.einsum("ij,ij->i", directions, n)[:, None] * n
    norm = np.linalg.norm(d, axis=1)
    bad = norm < 1e-9
    if np.any(bad):
        # fall back to the first edge where the direction is normal to the face
        v = mesh.vertices
        f = mesh.faces[bad]
        d[bad] = v[f[:, 1]] - v[f[:, 0]]
        norm = np.linalg.norm(d, axis=1)
    return d / norm[:, None]


def map_gradient_frames(mesh, uv):
    """Frames along the 3D gradient of the u coordinate of a flip-free map."""
    q = local_coords(mesh, default_frames(mesh))
    gx, gy, _ = hat_gradients(q)
    du_x = np.einsum("fk,fk->f", gx, uv[mesh.faces, 0])
    du_y = np.einsum("fk,fk->f", gy, uv[mesh.faces, 0])
    e1 = default_frames(mesh)
    e2 = np.cross(mesh.face_normals(), e1)
    return project_frames(mesh, du_x[:, None] * e1 + du_y[:, None] * e2)


def local_coords(mesh, frames):
    """Isometric 2D layout of every face in its frame, shape (F, 3, 2)."""
    p = mesh.vertices[mesh.faces]
    rel = p - p[:, :1]
    e2 = np.cross(mesh.face_normals(), frames)
    return np.stack([np.einsum("fkd,fd->fk", rel, frames), np.einsum("fkd,fd->fk", rel, e2)], axis=-1)


def hat_gradients(q):
    """Gradients of the three hat functions per face and the face areas."""
    x, y = q[..., 0], q[..., 1]
    twice_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    if np.any(twice_area <= 0):
        raise FlattenError("degenerate source triangle")
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / twice_area[:, None]
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / twice_area[:, None]
    return gx, gy, 0.5 * twice_area


# ---------------------------------------------------------------- Beltrami


def beltrami_coefficient(open_mesh, pmap, frames=None):
    """mu = f_zbar / f_z of the piecewise-linear map, per face."""
    if frames is None:
        frames = default_frames(open_mesh)
    gx, gy, _ = hat_gradients(local_coords(open_mesh, frames))
    f = pmap.uv[:, 0] + 1j * pmap.uv[:, 1]
    fk = f[open_mesh.faces]
    fx = np.sum(gx * fk, axis=1)
    fy = np.sum(gy * fk, axis=1)
    fz = 0.5 * (fx - 1j * fy)
    fzbar = 0.5 * (fx + 1j * fy)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(np.abs(fz) > 0, fzbar / fz, np.inf)
    return BeltramiField(mu, frames)


def _solve_dirichlet(K, n, bc_idx, bc_val):
    """Solve K x = 0 on interior rows with x fixed on bc_idx. bc_val is (B, m)."""
    interior = np.ones(n, dtype=bool)
    interior[bc_idx] = False
    ii = np.flatnonzero(interior)
    out = np.zeros((n, bc_val.shape[1]))
    out[bc_idx] = bc_val
    if ii.size == 0:
        return out
    K = K.tocsr()
    K_ii = K[ii][:, ii].tocsc()
    rhs = -(K[ii][:, bc_idx] @ bc_val)
    if ii.size <= DIRECT_SOLVE_LIMIT:
        try:
            lu = splinalg.splu(K_ii)
        except RuntimeError as exc:
            raise FlattenError(f"singular system: {exc}") from exc
        sol = lu.solve(rhs)
    else:
        sol = np.empty_like(rhs)
        for c in range(rhs.shape[1]):
            x, info = splinalg.cg(K_ii, rhs[:, c], rtol=1e-10, maxiter=20 * ii.size)
            if info != 0:
                raise FlattenError("iterative solve did not converge")
            sol[:, c] = x
    if not np.all(np.isfinite(sol)):
        raise FlattenError("singular system")
    out[ii] = sol
    return out


def harmonic_map(open_mesh, bc):
    """Cotangent-Laplacian harmonic extension of the boundary positions."""
    L = cotangent_laplacian(open_mesh)
    uv = _solve_dirichlet(L, open_mesh.n_vertices, bc.indices, bc.positions)
    return PlanarMap(uv, open_mesh)


def beltrami_stiffness(open_mesh, mu):
    """Stiffness matrix of div(A grad u) with the Beltrami-derived A per face."""
    m = np.asarray(mu.mu)
    if np.any(~np.isfinite(m)) or np.any(np.abs(m) >= 1):
        raise FlattenError("|mu| >= 1 on some face; map would not be orientation-preserving")
    gx, gy, area = hat_gradients(local_coords(open_mesh, mu.frames))
    rho, tau = m.real, m.imag
    denom = 1.0 - np.abs(m) ** 2
    a1 = ((rho - 1) ** 2 + tau ** 2) / denom
    a2 = -2.0 * tau / denom
    a3 = ((1 + rho) ** 2 + tau ** 2) / denom
    rows, cols, vals = [], [], []
    f = open_mesh.faces
    for a in range(3):
        for b in range(3):
            k = area * (
                a1 * gx[:, a] * gx[:, b]
                + a2 * (gx[:, a] * gy[:, b] + gy[:, a] * gx[:, b])
                + a3 * gy[:, a] * gy[:, b]
            )
            rows.append(f[:, a])
            cols.append(f[:, b])
            vals.append(k)
    n = open_mesh.n_vertices
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()


def linear_beltrami_solver(open_mesh, mu, bc):
    """Rebuild the map whose Beltrami coefficient is ``mu`` under ``bc``."""
    K = beltrami_stiffness(open_mesh, mu)
    uv = _solve_dirichlet(K, open_mesh.n_vertices, bc.indices, bc.positions)
    return PlanarMap(uv, open_mesh)


# ---------------------------------------------------------------- Teichmuller


def face_adjacency(faces):
    """Sparse symmetric face-face adjacency over shared edges."""
    nf = len(faces)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    fid = np.tile(np.arange(nf), 3)
    order = np.lexsort((e[:, 1], e[:, 0]))
    e, fid = e[order], fid[order]
    same = np.all(e[1:] == e[:-1], axis=1)
    a, b = fid[:-1][same], fid[1:][same]
    adj = sparse.coo_matrix((np.ones(len(a)), (a, b)), shape=(nf, nf))
    return (adj + adj.T).tocsr()


def teichmuller_projection(mu, adjacency):
    """Uniform magnitude k = mean|mu| with one averaging pass over phases."""
    mag = np.abs(mu)
    k = mag.mean()
    live = mag >= 1e-12
    phase = np.zeros_like(mu)
    phase[live] = mu[live] / mag[live]
    smooth = phase + adjacency @ phase
    norm = np.abs(smooth)
    ok = live & (norm > 1e-12)
    out = np.zeros_like(mu)
    out[ok] = k * smooth[ok] / norm[ok]
    out[live & ~ok] = k * phase[live & ~ok]
    return out


def teichmuller_map(open_mesh, bc, tol=0.05, max_iter=50, max_backtrack=4):
    """Flatten a disk toward uniform |mu| under the fixed boundary ``bc``.

    Each accepted iterate has std(|mu|) no larger than the previous one; a
    projected step that does not improve is damped toward the current mu
    up to ``max_backtrack`` times before the iteration stops. The result is
    flagged ``converged`` when std(|mu|) <= tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    current = harmonic_map(open_mesh, bc)
    if current.flipped_faces().size:
        raise FlattenError("harmonic initializer has flipped faces")
    frames = map_gradient_frames(open_mesh, current.uv)
    adjacency = face_adjacency(open_mesh.faces)
    mu = beltrami_coefficient(open_mesh, current, frames)
    history = [mu.abs_std]
    it = 0
    while history[-1] > tol and it < max_iter:
        it += 1
        target = teichmuller_projection(mu.mu, adjacency)
        accepted = False
        t = 1.0
        for _ in range(max_backtrack + 1):
            trial_mu = mu.mu + t * (target - mu.mu)
            try:
                cand = linear_beltrami_solver(open_mesh, BeltramiField(trial_mu, frames), bc)
            except FlattenError:
                t *= 0.5
                continue
            if cand.flipped_faces().size == 0:
                cand_mu = beltrami_coefficient(open_mesh, cand, frames)
                if cand_mu.abs_std <= history[-1]:
                    current, mu = cand, cand_mu
                    history.append(cand_mu.abs_std)
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            logger.info("teichmuller iteration stalled at iteration %d (std %.4g)", it, history[-1])
            break
    converged = history[-1] <= tol
    report = distortion_report(open_mesh, current, mu)
    if report.flipped_faces:
        raise FlattenError(f"{report.flipped_faces} flipped face(s) in the final map")
    return TeichmullerResult(current, mu, report, converged, it, history)


def distortion_report(open_mesh, pmap, mu=None):
    if mu is None:
        mu = beltrami_coefficient(open_mesh, pmap)
    src_area = open_mesh.face_areas()
    uv_area = pmap.signed_areas()
    mag = np.abs(mu.mu)
    p3 = open_mesh.vertices[open_mesh.faces]
    p2 = pmap.uv[open_mesh.faces]
    errs = []
    for k in range(3):
        a3 = p3[:, (k + 1) % 3] - p3[:, k]
        b3 = p3[:, (k + 2) % 3] - p3[:, k]
        ang3 = np.arctan2(np.linalg.norm(np.cross(a3, b3), axis=1), np.einsum("ij,ij->i", a3, b3))
        a2 = p2[:, (k + 1) % 3] - p2[:, k]
        b2 = p2[:, (k + 2) % 3] - p2[:, k]
        ang2 = np.arctan2(np.abs(a2[:, 0] * b2[:, 1] - a2[:, 1] * b2[:, 0]), np.einsum("ij,ij->i", a2, b2))
        errs.append(np.abs(ang2 - ang3))
    errs = np.degrees(np.concatenate(errs))
    return DistortionReport(
        area_ratio=uv_area / src_area,
        angle_error_mean=float(errs.mean()),
        angle_error_max=float(errs.max()),
        mu_abs_mean=float(mag.mean()),
        mu_abs_std=float(mag.std()),
        mu_abs_max=float(mag.max()),
        flipped_faces=int(np.count_nonzero(uv_area <= 0)),
    )


def flatten_disk(open_mesh, tol=0.05, max_iter=50):
    """Boundary extraction, square boundary conditions and the Teichmuller map."""
    loop = extract_boundary(open_mesh)
    bc = rectangle_boundary_conditions(loop, open_mesh.vertices[loop])
    return teichmuller_map(open_mesh, bc, tol=tol, max_iter=max_iter)
