import numpy as np
import pytest

from cortexprint import mesh, synth, train


@pytest.fixture(scope="session")
def rotated_sphere3():
    """Level-3 icosphere in a generic orientation (no vertex on the x = 0 plane)."""
    s = mesh.icosphere(3)
    return s.copy(vertices=s.vertices @ mesh.rotation_matrix([0.3, 0.5, 0.8], 0.37).T)


@pytest.fixture(scope="session")
def small_cohort():
    """Six two-scan subjects and four singles."""
    return synth.generate_cohort(6, 4, master_seed=11)


@pytest.fixture(scope="session")
def small_dataset(small_cohort):
    return train.rasterize_cohort(small_cohort, size=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_record(request):
    """Store (passed, detail) per criterion number for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
