import pytest

from slabhybrid.closures import build_closures, oracle_closures
from slabhybrid.engine import run_histories
from slabhybrid.problem import RunConfig, benchmark_problem, build_uniform_mesh
from slabhybrid.sn import refine_and_extrapolate


@pytest.fixture(scope="session")
def benchmark():
    return benchmark_problem()


@pytest.fixture(scope="session")
def references(benchmark):
    """Certified benchmark fluxes on the standard grids (default ladder)."""
    return {
        cells: refine_and_extrapolate(benchmark, build_uniform_mesh(benchmark, cells))
        for cells in (4, 8, 16, 32, 64)
    }


@pytest.fixture(scope="session")
def big_runs(benchmark):
    """Shared N=1e6 implicit-capture ensembles on the two coarsest grids."""
    out = {}
    for cells in (4, 8):
        mesh = build_uniform_mesh(benchmark, cells)
        config = RunConfig(histories=10**6, rng_seed=2024, capture_mode="implicit")
        tallies = run_histories(benchmark, mesh, config)
        out[cells] = (mesh, tallies, build_closures(tallies, mesh))
    return out


@pytest.fixture(scope="session")
def oracle_sets(benchmark):
    """Noise-free closures restricted to each grid (shared by solver tests)."""
    return {
        cells: oracle_closures(benchmark, build_uniform_mesh(benchmark, cells))
        for cells in (4, 8, 16, 32, 64)
    }
