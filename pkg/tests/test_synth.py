import numpy as np
import pytest

from cortexprint import synth, train
from cortexprint.mesh import mean_curvature, mesh_topology


def test_same_spec_bit_identical():
    a = synth.generate_individual(synth.IdentitySpec(seed=3, level=2))
    b = synth.generate_individual(synth.IdentitySpec(seed=3, level=2))
    for side in synth.SIDES:
        assert a.hemispheres[side].surface.vertices.tobytes() == b.hemispheres[side].surface.vertices.tobytes()
        for k, v in a.hemispheres[side].sphere.features.items():
            assert v.tobytes() == b.hemispheres[side].sphere.features[k].tobytes()


def test_different_seeds_differ():
    a = synth.generate_individual(synth.IdentitySpec(seed=3, level=2))
    b = synth.generate_individual(synth.IdentitySpec(seed=4, level=2))
    assert np.abs(a.hemispheres["left"].surface.vertices - b.hemispheres["left"].surface.vertices).max() > 0


def test_zero_bumps_is_a_sphere():
    ind = synth.generate_individual(synth.IdentitySpec(seed=1, n_bumps=0, level=3))
    surf = ind.hemispheres["left"].surface
    r = np.linalg.norm(surf.vertices, axis=1)
    assert np.allclose(r, r[0], rtol=1e-12)
    h = mean_curvature(surf)
    assert h.std() < 1e-2 * abs(h.mean())
    assert np.abs(ind.left.features["sulc"]).max() < 1e-3


def test_meshes_are_closed_genus_zero(small_cohort):
    for subj in small_cohort.subjects:
        for scan in subj.scans:
            for m in scan:
                topo = mesh_topology(m)
                assert topo.is_closed and topo.genus == 0
                assert set(m.features) >= {"thickness", "curvature", "sulc"}
                assert all(np.isfinite(v).all() for v in m.features.values())


def test_zero_noise_scan_matches_individual():
    spec = synth.IdentitySpec(seed=5, level=2)
    ind = synth.generate_individual(spec)
    zero = synth.ScanSpec.zero()
    left, right = synth.generate_scan(ind, zero, 99)
    assert np.allclose(left.vertices, ind.left.vertices, atol=1e-12)
    for k in ("curvature", "sulc", "thickness"):
        assert np.allclose(left.features[k], ind.left.features[k], atol=1e-12)


def test_same_scan_seed_identical():
    ind = synth.generate_individual(synth.IdentitySpec(seed=5, level=2))
    a = synth.generate_scan(ind, synth.ScanSpec(), 7)
    b = synth.generate_scan(ind, synth.ScanSpec(), 7)
    c = synth.generate_scan(ind, synth.ScanSpec(), 8)
    assert all(x.vertices.tobytes() == y.vertices.tobytes() for x, y in zip(a, b))
    assert not np.array_equal(a[0].features["curvature"], c[0].features["curvature"])


def test_smooth_field_moments():
    d, _ = synth._base_sphere(3)
    f = synth.smooth_field(d, np.random.default_rng(0))
    assert abs(f.mean()) < 1e-12 and abs(f.std() - 1) < 1e-12


def test_cohort_manifest(tmp_path):
    cohort = synth.generate_cohort(3, 2, identity=synth.IdentitySpec(seed=0, level=2), master_seed=7,
                                   out_dir=tmp_path)
    assert len(cohort.manifest_rows) == 3 * 2 + 2
    assert [r[0] for r in cohort.manifest_rows][:2] == ["p000", "p000"]
    lines = (tmp_path / "manifest.csv").read_text().splitlines()
    assert tuple(lines[0].split(",")) == synth.MANIFEST_HEADER
    assert len(lines) == 1 + 8
    for row in cohort.manifest_rows:
        for rel in row[2:]:
            assert (tmp_path / rel).is_file()
    back = synth.load_cohort(tmp_path / "manifest.csv")
    assert [s.subject_id for s in back.pairs] == ["p000", "p001", "p002"]
    assert len(back.singles) == 2
    assert back.manifest_hash() == cohort.manifest_hash()
    a = cohort.pairs[1].scans[1][0]
    b = back.pairs[1].scans[1][0]
    assert np.allclose(a.vertices, b.vertices, rtol=0, atol=1e-12)
    assert np.allclose(a.features["sulc"], b.features["sulc"], rtol=0, atol=1e-12)


def test_manifest_hash_reproducible():
    idn = synth.IdentitySpec(seed=0, level=1)
    a = synth.generate_cohort(3, 1, identity=idn, master_seed=7)
    b = synth.generate_cohort(3, 1, identity=idn, master_seed=7)
    assert a.manifest_hash() == b.manifest_hash()
    with pytest.raises(ValueError):
        synth.generate_cohort(1, 1)


def test_raw_separability(small_dataset):
    sep = train.raw_separability(small_dataset)
    assert sep.within_mean < sep.between_mean
    assert sep.frac_below_median == 1.0
    curv = train.raw_separability(small_dataset, ("curvature",))
    thick = train.raw_separability(small_dataset, ("thickness",))
    assert curv.within_mean / curv.between_mean < thick.within_mean / thick.between_mean
