import time

import numpy as np
import pytest

from marktail.mapmodel import FiniteDiscrete, Gaussian, ProcessSpec, ShiftedScaled


def random_spec(rng, N=None, shifted=True, discrete_share=0.3):
    """Random irreducible spec with Gaussian or three-point increments."""
    if N is None:
        N = int(rng.integers(1, 4))
    Pi = rng.dirichlet(2 * np.ones(N), size=N)
    V = rng.uniform(0.7, 0.95, (N, N))
    grid = []
    for n in range(N):
        row = []
        for m in range(N):
            loc, scale = rng.uniform(-0.3, 0.6), rng.uniform(0.2, 0.8)
            if rng.random() < discrete_share:
                base = FiniteDiscrete([-1.0, 0.0, 2.0], [0.3, 0.5, 0.2])
            else:
                base = Gaussian(0.0, 1.0)
            d = ShiftedScaled(base, loc, scale)
            if not shifted and isinstance(base, Gaussian):
                d = Gaussian(loc, scale ** 2)
            row.append(d)
        grid.append(row)
    return ProcessSpec(Pi, V, grid)


def random_current_state_spec(rng, N=None):
    if N is None:
        N = int(rng.integers(2, 5))
    Pi = rng.dirichlet(np.ones(N), size=N)
    dists = [ShiftedScaled(Gaussian(0.0, 1.0), rng.uniform(-0.3, 0.5), rng.uniform(0.1, 0.8))
             for _ in range(N)]
    return ProcessSpec.current_state(Pi, rng.uniform(0.6, 0.97, N), dists)


def blockwise_rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion, printed after the run

_ACCEPTANCE = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        secs = time.perf_counter() - self.t0
        ok = exc_type is None
        detail = self.detail if ok else f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title} ({secs:.1f} s) {detail}"
        _ACCEPTANCE[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
