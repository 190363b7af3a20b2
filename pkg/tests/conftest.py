import numpy as np
import pytest

from fluxfem.assembly import FeSpace, apply_dirichlet, assemble_load, assemble_stiffness
from fluxfem.mesh import Mesh
from fluxfem.solver import cg_solve


def reference_mesh(dim):
    """A mesh made of the single reference simplex."""
    ids = np.vstack([np.zeros(dim, dtype=np.int64), np.eye(dim, dtype=np.int64)])
    return Mesh(dim=dim, level=1, vertex_ids=ids, cells=np.array([[0, *range(1, dim + 1)]]))


def solve(space, f, alpha=1.0, tol=1e-12):
    mat = assemble_stiffness(space, alpha)
    rhs = assemble_load(space, f)
    red = apply_dirichlet(mat, rhs, space)
    x = cg_solve(red.matrix, red.rhs, tol).solution if red.rhs.size else np.zeros(0)
    return space.function(red.expand(x))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """Store (label, [(check, ok, detail), ...]) for the acceptance summary."""
    store = request.config.stash.setdefault(_CRITERIA, {})

    def record(number, label, checks):
        store[number] = (label, checks)
        failed = [f"{name}: {detail}" for name, ok, detail in checks if not ok]
        assert not failed, "; ".join(failed)

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_CRITERIA, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        label, checks = store[number]
        ok = all(c[1] for c in checks)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {label}")
        for name, good, detail in checks:
            terminalreporter.write_line(f"    [{'ok' if good else 'XX'}] {name}: {detail}")
