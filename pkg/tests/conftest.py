import numpy as np
import pytest

from topoplan.grid import Grid, build_grid
from topoplan.scenario import benchmark_days, benchmark_grid


def make_random_grid(rng: np.random.Generator, n_substations: int) -> Grid:
    """Random connected grid: a random spanning tree plus extra chords,
    random susceptances and thermal limits, one injection per substation."""
    lines = []
    for node in range(1, n_substations):
        parent = int(rng.integers(0, node))
        lines.append((parent, node))
    n_extra = int(rng.integers(1, max(2, n_substations // 2)))
    for _ in range(n_extra):
        a, b = rng.choice(n_substations, size=2, replace=False)
        lines.append((int(min(a, b)), int(max(a, b))))

    doc = {
        "format_version": 1,
        "substations": [{"id": s} for s in range(n_substations)],
        "lines": [
            {"id": i, "from": a, "to": b,
             "susceptance": float(rng.uniform(5.0, 25.0)),
             "p_max": float(rng.uniform(30.0, 150.0))}
            for i, (a, b) in enumerate(lines)
        ],
        "injections": [
            {"id": s, "substation": s,
             "kind": "generator" if s < max(2, n_substations // 3) else "load"}
            for s in range(n_substations)
        ],
    }
    return build_grid(doc)


def random_injections(rng: np.random.Generator, grid: Grid,
                      scale: float = 20.0) -> np.ndarray:
    """Balanced injection vector: random loads, generators scaled to match."""
    mw = np.zeros(grid.n_injections)
    loads = grid.load_ids()
    gens = grid.generator_ids()
    mw[loads] = -rng.uniform(0.2, 1.0, size=len(loads)) * scale
    share = rng.uniform(0.2, 1.0, size=len(gens))
    mw[gens] = -mw[loads].sum() * share / share.sum()
    return mw


@pytest.fixture(scope="session")
def bench_grid():
    return benchmark_grid()


@pytest.fixture(scope="session")
def bench_days():
    return benchmark_days(6, seed=0)
