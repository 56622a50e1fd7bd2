"""Shared fixtures: bundled grids and random-grid factories."""
import numpy as np
import pytest

from gridtopo.grid import Grid, builtin_grid, make_grid


@pytest.fixture(scope="session")
def radial20() -> Grid:
    return builtin_grid("radial20")


@pytest.fixture(scope="session")
def loopy20_c4() -> Grid:
    return builtin_grid("loopy20_c4")


@pytest.fixture(scope="session")
def loopy20_c7() -> Grid:
    return builtin_grid("loopy20_c7")


@pytest.fixture(scope="session")
def ieee14() -> Grid:
    return builtin_grid("ieee14")


@pytest.fixture(scope="session")
def all_builtins(radial20, loopy20_c4, loopy20_c7, ieee14) -> tuple[Grid, ...]:
    return (radial20, loopy20_c4, loopy20_c7, ieee14)


@pytest.fixture(scope="session")
def make_random_tree():
    """Factory: random tree grid on buses 0..n-1 with reference 0."""

    def _make(rng: np.random.Generator, n_buses: int) -> Grid:
        lines = []
        for b in range(1, n_buses):
            parent = int(rng.integers(0, b))
            r = float(rng.uniform(0.02, 0.08))
            x = float(rng.uniform(0.05, 0.12))
            lines.append((parent, b, r, x))
        return make_grid(0, range(n_buses), lines, name=f"tree{n_buses}")

    return _make


@pytest.fixture(scope="session")
def make_random_triangle_grid(make_random_tree):
    """Factory: random tree plus 1-3 chords closing triangles (girth 3)."""

    def _make(rng: np.random.Generator, max_buses: int = 12) -> Grid:
        n = int(rng.integers(6, max_buses + 1))
        g = make_random_tree(rng, n)
        adj = {b: set(g.adjacency[b]) for b in g.buses}
        # distance-2 pairs: closing any of them creates a triangle
        candidates = sorted(
            {
                (min(a, c), max(a, c))
                for b in g.buses
                for a in adj[b]
                for c in adj[b]
                if a != c and c not in adj[a]
            }
        )
        n_chords = int(rng.integers(1, min(3, len(candidates)) + 1))
        picks = rng.choice(len(candidates), size=n_chords, replace=False)
        lines = list(g.lines)
        for k in picks:
            i, j = candidates[int(k)]
            lines.append((i, j, float(rng.uniform(0.02, 0.08)), float(rng.uniform(0.05, 0.12))))
        return make_grid(0, range(n), lines, name=f"tri{n}")

    return _make
