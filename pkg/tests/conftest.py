import numpy as np
import pytest

from fve2l.mesh import Mesh, build_structured


def perturbed_mesh(n, amplitude=0.2, seed=0, domain=((0.0, 1.0), (0.0, 1.0))):
    """Structured mesh with interior vertices jittered by amplitude * (hx, hy)."""
    base = build_structured(n, domain)
    v = base.vertices.copy()
    interior = np.setdiff1d(np.arange(len(v)), base.boundary_vertices)
    h = np.array([(domain[0][1] - domain[0][0]) / n, (domain[1][1] - domain[1][0]) / n])
    v[interior] += amplitude * h * np.random.default_rng(seed).uniform(-1, 1, (len(interior), 2))
    return Mesh(v, base.triangles)


@pytest.fixture
def jittered():
    return perturbed_mesh


# one line per acceptance criterion (sub-part), filled by test_acceptance.py
ACCEPTANCE = []


def record(criterion, label, passed, detail=""):
    ACCEPTANCE.append((criterion, label, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, label, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{crit}] {label}: {detail}")
