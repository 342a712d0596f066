import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ncycle.geometry import TriangleMesh, make_shape

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def write_text(path, text):
    path.write_text(text, encoding="ascii")
    return path


def _patch(mesh, size, rng):
    """Edge-connected set of ``size`` triangles grown from a random seed face."""
    tris = mesh.triangles
    by_edge = {}
    for t, (a, b, c) in enumerate(tris):
        for e in ((a, b), (b, c), (c, a)):
            by_edge.setdefault(tuple(sorted(e)), []).append(t)
    keep = [int(rng.integers(len(tris)))]
    seen = set(keep)
    frontier = list(keep)
    while frontier and len(keep) < size:
        t = frontier.pop(int(rng.integers(len(frontier))))
        a, b, c = tris[t]
        for e in ((a, b), (b, c), (c, a)):
            for u in by_edge[tuple(sorted(e))]:
                if u not in seen and len(keep) < size:
                    seen.add(u)
                    keep.append(u)
                    frontier.append(u)
    sub = tris[sorted(keep)]
    used, inv = np.unique(sub, return_inverse=True)
    return TriangleMesh(mesh.vertices[used], inv.reshape(-1, 3))


def random_small_mesh(rng):
    """3 to 40 triangles, a mix of closed surfaces and open patches, jittered."""
    seed = int(rng.integers(1 << 30))
    jitter = float(rng.uniform(0.0, 0.08))
    choice = int(rng.integers(6))
    if choice == 0:
        return make_shape("sphere", subdivisions=0, jitter=jitter, seed=seed)
    if choice == 1:
        return make_shape("cube", resolution=1, jitter=jitter, seed=seed, size=float(rng.uniform(0.5, 2)))
    if choice == 2:
        return make_shape("torus", n_major=int(rng.integers(4, 7)), n_minor=3, jitter=jitter, seed=seed)
    if choice == 3:
        return make_shape("flat_disc", rings=int(rng.integers(1, 3)), segments=int(rng.integers(3, 9)),
                          jitter=jitter, seed=seed)
    base = make_shape("sphere", subdivisions=1, jitter=jitter, seed=seed)
    return _patch(base, int(rng.integers(3, 41)), rng)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
