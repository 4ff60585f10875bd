import numpy as np
import pytest

from uvcl import _backend

# Filled by tests/test_acceptance.py: criterion number -> (passed, detail).
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(params=sorted(_backend.BACKENDS))
def backend(request):
    """Run a test once per available kernel backend."""
    prev = _backend.use(request.param)
    yield request.param
    _backend.use(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gaussian_blobs(rng, centers, n_per, std):
    centers = np.asarray(centers, dtype=float)
    x = np.concatenate([c + std * rng.standard_normal((n_per, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per)
    return x, y


def separated_centers(rng, m, d, min_dist):
    while True:
        c = rng.uniform(-min_dist, min_dist, size=(m, d))
        dist = np.linalg.norm(c[:, None] - c[None], axis=-1)
        if np.all(dist[np.triu_indices(m, 1)] >= min_dist):
            return c
