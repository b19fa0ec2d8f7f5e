import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dcsgl.graph import Graph
from dcsgl.synth import GenSpec, generate

settings.register_profile(
    "repo", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def make_graph(n, edges, roles=None, gid=0, y=0, d=4, seed=0, junction=None):
    """Small graph helper; the junction mask is derived from roles unless given."""
    rng = np.random.default_rng(seed)
    roles = np.zeros(n, dtype=np.int64) if roles is None else np.asarray(roles)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if junction is None:
        junction = np.zeros(n, dtype=bool)
        for u, v in edges:
            if roles[u] != roles[v]:
                junction[u] = junction[v] = True
    x = rng.random((n, d), dtype=np.float32)
    return Graph(gid, n, edges, x, roles, junction, y)


@pytest.fixture(scope="session")
def small_ds():
    return generate(GenSpec(count=120, bias=0.9, seed=3))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
