"""Synthetic cohort of folded spheres with two "scans" per subject.

Identity lives in the layout of Gaussian folding bumps. Thickness is a
smooth random field redrawn for every scan (``ScanSpec.thickness_noise``),
so it carries no identity by construction.
"""

import csv
import hashlib
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .mesh import (
    FEATURE_NAMES,
    TriMesh,
    icosphere,
    inflate_surface,
    mean_curvature,
    project_to_sphere,
    rotation_matrix,
    save_mesh,
)
from .seeding import derive_seed

SIDES = ("left", "right")
MESH_LEVEL = 4
# a generic orientation keeps the x = 0 split away from icosphere symmetry planes
BASE_ROTATION = rotation_matrix([0.3, 0.5, 0.8], 0.37)
MANIFEST_HEADER = ("subject_id", "scan_index", "left_mesh", "left_features", "right_mesh", "right_features")


@lru_cache(maxsize=4)
def _base_sphere(level):
    s = icosphere(level)
    return s.vertices @ BASE_ROTATION.T, s.faces


def _random_directions(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def smooth_field(directions, rng, n_terms=12, width=0.6):
    """Zero-mean, unit-scale smooth field: a sum of signed Gaussian blobs."""
    centers = _random_directions(rng, n_terms)
    weights = rng.normal(size=n_terms)
    ang = np.arccos(np.clip(directions @ centers.T, -1.0, 1.0))
    f = np.exp(-(ang ** 2) / (2 * width ** 2)) @ weights
    f = f - f.mean()
    sd = f.std()
    return f / sd if sd > 0 else f


@dataclass(frozen=True)
class IdentitySpec:
    seed: int
    n_bumps: int = 24
    amplitude: tuple = (0.04, 0.10)
    width: tuple = (0.12, 0.30)
    thickness_seed: int = None
    level: int = MESH_LEVEL

    def __post_init__(self):
        if self.n_bumps < 0:
            raise ValueError("n_bumps must be non-negative")
        if not (0 <= self.amplitude[0] <= self.amplitude[1]):
            raise ValueError("amplitude range must satisfy 0 <= lo <= hi")
        if not (0 < self.width[0] <= self.width[1]):
            raise ValueError("width range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class ScanSpec:
    """Per-scan perturbations.

    noise: radial vertex jitter as a fraction of the mean bump amplitude.
    bump_jitter: relative amplitude change, and center shift in units of
        the bump width.
    development_scale: uniform growth factor.
    feature_noise: sigma of per-vertex noise added to each normalized
        feature, relative to that feature's spread.
    thickness_noise: 0 keeps the individual's thickness field, 1 draws a
        fresh one for the scan.
    """

    noise: float = 0.05
    bump_jitter: float = 0.1
    development_scale: float = 1.0
    feature_noise: float = 0.05
    thickness_noise: float = 1.0

    def __post_init__(self):
        if min(self.noise, self.bump_jitter, self.feature_noise) < 0:
            raise ValueError("noise amplitudes must be non-negative")
        if self.development_scale <= 0:
            raise ValueError("development_scale must be positive")
        if not 0 <= self.thickness_noise <= 1:
            raise ValueError("thickness_noise must lie in [0, 1]")

    @classmethod
    def zero(cls, development_scale=1.0):
        return cls(0.0, 0.0, development_scale, 0.0, 0.0)


@dataclass
class Hemisphere:
    """Bump layout plus the derived folded surface and sphere."""

    centers: np.ndarray
    amplitudes: np.ndarray
    widths: np.ndarray
    thickness: np.ndarray
    surface: TriMesh = None
    sphere: TriMesh = None


@dataclass
class Individual:
    spec: IdentitySpec
    hemispheres: dict = field(default_factory=dict)

    @property
    def left(self):
        return self.hemispheres["left"].sphere

    @property
    def right(self):
        return self.hemispheres["right"].sphere


def _radius(directions, centers, amplitudes, widths):
    if len(centers) == 0:
        return np.ones(len(directions))
    ang = np.arccos(np.clip(directions @ centers.T, -1.0, 1.0))
    return 1.0 + np.exp(-(ang ** 2) / (2 * widths ** 2)) @ amplitudes


def _with_features(directions, faces, radius, scale, thickness):
    """Folded surface, curvature and sulcal depth, and the sphere carrying them."""
    folded = TriMesh(directions * (scale * radius)[:, None], faces)
    curv = mean_curvature(folded)
    inflated, depth = inflate_surface(folded)
    feats = {"thickness": thickness, "curvature": curv, "sulc": depth}
    surface = TriMesh(folded.vertices, faces, feats)
    sphere = project_to_sphere(inflated)
    sphere.features = {k: np.array(v, dtype=np.float64) for k, v in feats.items()}
    return surface, sphere


def _thickness_scale(t):
    # centered near 2.5 mm with about 0.4 mm spread
    return 2.5 + 0.4 * t


def generate_individual(spec):
    """Base left and right folded spheres for one identity."""
    directions, faces = _base_sphere(spec.level)
    tseed = spec.seed if spec.thickness_seed is None else spec.thickness_seed
    ind = Individual(spec)
    for side in SIDES:
        rng = np.random.default_rng(derive_seed(spec.seed, f"identity-{side}"))
        centers = _random_directions(rng, spec.n_bumps)
        amps = rng.uniform(*spec.amplitude, size=spec.n_bumps) * rng.choice([-1.0, 1.0], spec.n_bumps)
        widths = rng.uniform(*spec.width, size=spec.n_bumps)
        trng = np.random.default_rng(derive_seed(tseed, f"thickness-{side}"))
        thickness = _thickness_scale(smooth_field(directions, trng))
        hemi = Hemisphere(centers, amps, widths, thickness)
        radius = _radius(directions, centers, amps, widths)
        hemi.surface, hemi.sphere = _with_features(directions, faces, radius, 1.0, thickness)
        ind.hemispheres[side] = hemi
    return ind


def _perturb_centers(rng, centers, shift):
    """Move each center along a random tangent direction by ``shift`` radians."""
    if len(centers) == 0:
        return centers
    t = rng.normal(size=centers.shape)
    t -= np.sum(t * centers, axis=1, keepdims=True) * centers
    t /= np.maximum(np.linalg.norm(t, axis=1, keepdims=True), 1e-12)
    ang = shift[:, None]
    return centers * np.cos(ang) + t * np.sin(ang)


def generate_scan(individual, scan, scan_seed):
    """(left, right) sphere meshes for one scan of ``individual``."""
    directions, faces = _base_sphere(individual.spec.level)
    out = []
    for side in SIDES:
        hemi = individual.hemispheres[side]
        rng = np.random.default_rng(derive_seed(scan_seed, f"scan-{side}"))
        n = len(hemi.amplitudes)
        amps = hemi.amplitudes * (1.0 + scan.bump_jitter * rng.normal(size=n))
        shift = np.abs(scan.bump_jitter * hemi.widths * rng.normal(size=n))
        centers = _perturb_centers(rng, hemi.centers, shift)
        radius = _radius(directions, centers, amps, hemi.widths)
        mean_amp = float(np.mean(np.abs(hemi.amplitudes))) if n else 0.0
        radius = radius + scan.noise * mean_amp * rng.normal(size=len(radius))
        fresh = _thickness_scale(smooth_field(directions, rng))
        t = scan.thickness_noise
        thickness = np.sqrt(1.0 - t * t) * hemi.thickness + t * fresh if t > 0 else hemi.thickness.copy()
        _, sphere = _with_features(directions, faces, radius, scan.development_scale, thickness)
        if scan.feature_noise > 0:
            for name in FEATURE_NAMES:
                f = sphere.features[name]
                sphere.features[name] = f + scan.feature_noise * f.std() * rng.normal(size=f.size)
        out.append(sphere)
    return tuple(out)


# ---------------------------------------------------------------- cohorts


@dataclass(frozen=True)
class ScanPolicy:
    """How the two scans of a subject differ (birth vs term-equivalent age)."""

    noise: float = 0.05
    bump_jitter: float = 0.1
    development_scale: tuple = (1.0, 1.15)
    feature_noise: float = 0.05
    thickness_noise: float = 1.0

    def scan_spec(self, scan_index):
        return ScanSpec(self.noise, self.bump_jitter, self.development_scale[scan_index],
                        self.feature_noise, self.thickness_noise)


@dataclass
class Subject:
    subject_id: str
    scans: list  # list of (left, right) sphere meshes

    @property
    def is_pair(self):
        return len(self.scans) == 2


@dataclass
class Cohort:
    pairs: list
    singles: list
    manifest_rows: list = field(default_factory=list)
    manifest_path: Path = None

    @property
    def subjects(self):
        return self.pairs + self.singles

    def manifest_hash(self):
        h = hashlib.sha256()
        for row in self.manifest_rows:
            h.update(",".join(str(v) for v in row).encode())
            h.update(b"\n")
        return h.hexdigest()


def _identity_for(master_seed, subject_id, identity):
    return replace(identity, seed=derive_seed(master_seed, f"subject-{subject_id}"),
                   thickness_seed=derive_seed(master_seed, f"thickness-{subject_id}"))


def generate_subject(subject_id, n_scans, identity, scans, master_seed):
    ind = generate_individual(_identity_for(master_seed, subject_id, identity))
    out = []
    for k in range(n_scans):
        # singles are taken at the birth scan setting
        spec = scans.scan_spec(k)
        out.append(generate_scan(ind, spec, derive_seed(master_seed, f"scan-{subject_id}-{k}")))
    return Subject(subject_id, out)


def generate_cohort(n_pairs, n_singles=0, identity=None, scans=None, master_seed=0, out_dir=None):
    """Two-scan and single-scan subjects; optionally written to ``out_dir``.

    Subject ids are ``p###`` for two-scan and ``s###`` for single-scan
    subjects. The manifest lists one row per scan with its left and right files.
    """
    if n_pairs + n_singles < 3:
        raise ValueError("a cohort needs at least 3 subjects")
    identity = identity or IdentitySpec(seed=0)
    scans = scans or ScanPolicy()
    pairs = [generate_subject(f"p{i:03d}", 2, identity, scans, master_seed) for i in range(n_pairs)]
    singles = [generate_subject(f"s{i:03d}", 1, identity, scans, master_seed) for i in range(n_singles)]
    cohort = Cohort(pairs, singles)
    root = Path(out_dir) if out_dir is not None else None
    for subj in cohort.subjects:
        for k, scan in enumerate(subj.scans):
            row = [subj.subject_id, k]
            for side, mesh in zip(SIDES, scan):
                stem = f"{subj.subject_id}_scan{k}_{side}"
                mesh_rel, feat_rel = f"meshes/{stem}.obj", f"meshes/{stem}.csv"
                if root is not None:
                    (root / "meshes").mkdir(parents=True, exist_ok=True)
                    save_mesh(mesh, root / mesh_rel, root / feat_rel)
                row += [mesh_rel, feat_rel]
            cohort.manifest_rows.append(tuple(row))
    if root is not None:
        cohort.manifest_path = root / "manifest.csv"
        with cohort.manifest_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_HEADER)
            w.writerows(cohort.manifest_rows)
    return cohort


def load_cohort(manifest_path):
    """Read a cohort written by ``generate_cohort``."""
    from .mesh import load_mesh

    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    scans = {}
    rows = []
    with manifest_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != MANIFEST_HEADER:
            raise ValueError(f"{manifest_path}: unexpected manifest header {header}")
        for sid, k, lm, lf, rm, rf in reader:
            rows.append((sid, int(k), lm, lf, rm, rf))
            scans.setdefault(sid, {})[int(k)] = (load_mesh(root / lm, root / lf), load_mesh(root / rm, root / rf))
    pairs, singles = [], []
    for sid in sorted(scans):
        per = scans[sid]
        subj = Subject(sid, [per[k] for k in sorted(per)])
        (pairs if subj.is_pair else singles).append(subj)
    return Cohort(pairs, singles, rows, manifest_path)
