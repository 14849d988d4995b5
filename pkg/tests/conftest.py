import sys
from functools import lru_cache
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@lru_cache(maxsize=None)
def corpus_mesh(kind: str, params: tuple = (), level: int = 0, mesh_size: float = 0.1):
    """Cached corpus mesh: triangulate at mesh_size * diameter, then refine ``level`` times."""
    from torsionlab.geometry import make_canonical_domain, refine, triangulate

    if level == 0:
        dom = make_canonical_domain(kind, params)
        return triangulate(dom, mesh_size * dom.diameter)
    return refine(corpus_mesh(kind, params, level - 1, mesh_size))


@pytest.fixture(scope="session")
def mesh_factory():
    return corpus_mesh


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
