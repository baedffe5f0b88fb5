import math

import numpy as np
import pytest

from slabhybrid.closures import build_closures
from slabhybrid.engine import (
    ParticleState,
    TallySet,
    collide,
    distance_to_collision,
    fly_and_tally,
    run_histories,
    sample_source_particle,
    simulate_history,
    transport_tables,
)
from slabhybrid.problem import (
    MaterialRegion,
    RunConfig,
    SlabProblem,
    benchmark_problem,
    build_uniform_mesh,
)


class FakeStream:
    """Scripted variate source for exercising the sampling branches."""

    def __init__(self, values):
        self.values = list(values)

    def uniform(self):
        return self.values.pop(0)


from tally_oracle import DYADIC_CASES, engine_fly, oracle_fly


@pytest.mark.parametrize("case", range(len(DYADIC_CASES)))
def test_tallies_match_oracle_exactly_on_dyadic_trajectories(case):
    edges, sig, x0, mu, w, tau = DYADIC_CASES[case]
    sig = np.asarray(sig, dtype=np.float64)
    o = oracle_fly(edges, sig, x0, mu, w, tau)
    e = engine_fly(edges, sig, x0, mu, w, tau)
    for got, want in zip(e[:5], o[:5]):
        np.testing.assert_array_equal(got, want)
    assert e[5] == o[5]  # leak flag


def test_worked_example_mu_08():
    # start at x=0 with mu=0.8, travel path 0.5 (to x=0.4) on the quarter mesh
    edges = [0.0, 0.25, 0.5, 0.75, 1.0]
    sig = np.ones(4)
    hist_wl, hist_mu2, ff, fc, fm, leaked, p = engine_fly(edges, sig, 0.0, 0.8, 1.0, 0.5)
    assert hist_wl[0] == 0.3125
    assert hist_wl[1] == 0.1875
    assert ff[1] == 1.25
    assert fc[1] == 1.0
    assert fm[1] == 0.8
    assert not leaked
    assert p.cell == 1
    assert p.x == pytest.approx(0.4, abs=1e-15)
    o = oracle_fly(edges, sig, 0.0, 0.8, 1.0, 0.5)
    np.testing.assert_array_equal(hist_wl, o[0])
    np.testing.assert_array_equal(ff, o[2])


def test_oracle_agrees_on_random_trajectories():
    rng = np.random.default_rng(5)
    edges = np.linspace(0.0, 1.0, 9)
    for _ in range(300):
        sig = rng.uniform(0.2, 3.0, size=8)
        x0 = rng.uniform(0.0, 1.0)
        mu = rng.uniform(-1.0, 1.0)
        if mu == 0.0:
            continue
        tau = rng.exponential()
        o = oracle_fly(edges, sig, x0, mu, 0.7, tau)
        e = engine_fly(edges, sig, x0, mu, 0.7, tau)
        for got, want in zip(e[:5], o[:5]):
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)
        assert e[5] == o[5]


def test_path_length_identity():
    # sum of cell segments equals the total distance travelled (clipped at leak)
    edges = [0.0, 0.25, 0.5, 0.75, 1.0]
    sig = np.ones(4)
    for x0, mu, tau in [(0.0, 0.8, 0.5), (0.6, -0.5, 2.0), (0.1, 0.9, 10.0)]:
        hist_wl, *_rest = engine_fly(edges, sig, x0, mu, 1.0, tau)
        dist_to_boundary = (1.0 - x0) / mu if mu > 0 else x0 / (-mu)
        expected = min(tau, dist_to_boundary)  # sigma = 1: path = optical depth
        assert abs(hist_wl.sum() - expected) <= 1e-12


def test_straight_through_single_cell():
    hist_wl, hist_mu2, ff, fc, fm, leaked, _ = engine_fly([0.0, 1.0], np.ones(1), 0.0, 1.0, 1.0, 9.0)
    assert hist_wl[0] == 1.0
    assert hist_mu2[0] == 1.0
    assert leaked


def test_straight_through_backwards_two_cells():
    hist_wl, _, _, fc, _, leaked, _ = engine_fly([0.0, 0.5, 1.0], np.ones(2), 1.0, -1.0, 1.0, 9.0)
    np.testing.assert_array_equal(hist_wl, [0.5, 0.5])
    assert fc[0] == -1.0
    assert leaked


class TestSampleSourceParticle:
    def test_benchmark_inverse_cdf(self):
        p = sample_source_particle(benchmark_problem(), FakeStream([0.25, 0.75]))
        assert p.x == 0.25
        assert p.mu == 0.5
        assert p.w == 1.0

    def test_degenerate_direction_resampled(self):
        p = sample_source_particle(benchmark_problem(), FakeStream([0.1, 0.5, 0.8]))
        assert p.mu == pytest.approx(0.6)

    def test_two_region_source(self):
        prob = SlabProblem(
            1.0,
            (
                MaterialRegion(0.0, 0.5, 1.0, 0.5, 2.0),
                MaterialRegion(0.5, 1.0, 1.0, 0.5, 0.0),
            ),
        )
        p = sample_source_particle(prob, FakeStream([0.5, 0.75]))
        assert p.x == 0.25

    def test_zero_source_rejected(self):
        from slabhybrid.problem import ConfigurationError

        prob = SlabProblem(1.0, (MaterialRegion(0.0, 1.0, 1.0, 0.5, 0.0),))
        with pytest.raises(ConfigurationError):
            sample_source_particle(prob, FakeStream([0.5, 0.5]))


class TestDistanceToCollision:
    def test_unit_depth(self):
        assert distance_to_collision(1.0, FakeStream([math.exp(-1.0)])) == pytest.approx(1.0, abs=1e-14)

    def test_scaling_with_sigma(self):
        assert distance_to_collision(2.0, FakeStream([math.exp(-2.0)])) == pytest.approx(1.0, abs=1e-14)

    def test_near_one_variate_gives_tiny_flight(self):
        s = distance_to_collision(1.0, FakeStream([1.0 - 1e-12]))
        assert 0.0 < s < 1e-11


class TestCollide:
    def test_implicit_weight_reduction(self):
        p = ParticleState(x=0.5, mu=1.0, w=1.0, alive=True, cell=0)
        collide(p, 1.0, 0.9, "implicit", FakeStream([0.7]))
        assert p.w == pytest.approx(0.9)
        assert p.alive
        assert p.mu == pytest.approx(0.4)

    def test_analog_absorption(self):
        p = ParticleState(x=0.5, mu=1.0, w=1.0, alive=True, cell=0)
        collide(p, 1.0, 0.9, "analog", FakeStream([0.95]))
        assert not p.alive

    def test_analog_scatter(self):
        p = ParticleState(x=0.5, mu=1.0, w=1.0, alive=True, cell=0)
        collide(p, 1.0, 0.9, "analog", FakeStream([0.5, 0.25]))
        assert p.alive
        assert p.mu == pytest.approx(-0.5)

    def test_roulette_survival_doubles_weight(self):
        p = ParticleState(x=0.5, mu=1.0, w=0.005, alive=True, cell=0)
        collide(p, 1.0, 1.0, "implicit", FakeStream([0.7, 0.4]))
        assert p.alive
        assert p.w == 0.01

    def test_roulette_kill(self):
        p = ParticleState(x=0.5, mu=1.0, w=0.005, alive=True, cell=0)
        collide(p, 1.0, 1.0, "implicit", FakeStream([0.7, 0.6]))
        assert not p.alive

    def test_implicit_pure_absorber_kills(self):
        p = ParticleState(x=0.5, mu=1.0, w=1.0, alive=True, cell=0)
        collide(p, 1.0, 0.0, "implicit", FakeStream([]))
        assert not p.alive


def test_pure_absorber_single_flight_then_death():
    # compose one walk by hand: birth, one short flight, then the collision
    # must absorb because sigma_s = 0
    prob = SlabProblem(1.0, (MaterialRegion(0.0, 1.0, 1.0, 0.0, 1.0),))
    mesh = build_uniform_mesh(prob, 4)
    tables = transport_tables(prob, mesh)
    p = sample_source_particle(prob, FakeStream([0.5, 0.9]), mesh)
    tallies = TallySet.empty(4)
    hist_wl = np.zeros(4)
    hist_mu2 = np.zeros(4)
    fly_and_tally(p, 0.1, mesh, tallies, tables.cell_sigma_t, hist_wl, hist_mu2)
    assert p.alive
    collide(p, 1.0, 0.0, "analog", FakeStream([1e-7]))
    assert not p.alive  # any variate absorbs when sigma_s = 0


def test_simulate_history_deterministic():
    prob = benchmark_problem()
    mesh = build_uniform_mesh(prob, 8)
    config = RunConfig(histories=1, rng_seed=99, capture_mode="implicit")
    a = TallySet.empty(8)
    b = TallySet.empty(8)
    simulate_history(prob, mesh, config, 3, a)
    simulate_history(prob, mesh, config, 3, b)
    np.testing.assert_array_equal(a.sum_wl, b.sum_wl)
    np.testing.assert_array_equal(a.face_w_over_mu, b.face_w_over_mu)


def test_run_histories_n1_equals_single_history():
    prob = benchmark_problem()
    mesh = build_uniform_mesh(prob, 8)
    config = RunConfig(histories=1, rng_seed=5, capture_mode="implicit")
    via_run = run_histories(prob, mesh, config)
    direct = TallySet.empty(8)
    simulate_history(prob, mesh, config, 0, direct)
    np.testing.assert_array_equal(via_run.sum_wl, direct.sum_wl)
    np.testing.assert_array_equal(via_run.sum_mu2_wl, direct.sum_mu2_wl)
    np.testing.assert_array_equal(via_run.face_w_signed, direct.face_w_signed)


@pytest.mark.parametrize("mode", ["implicit", "analog"])
@pytest.mark.parametrize("seed", [0, 1234])
def test_compiled_matches_reference_bitwise(mode, seed):
    prob = benchmark_problem()
    mesh = build_uniform_mesh(prob, 16)
    config = RunConfig(histories=2500, rng_seed=seed, capture_mode=mode)
    fast = run_histories(prob, mesh, config, workers=2)
    slow = run_histories(prob, mesh, config, compiled=False)
    for name in (
        "sum_wl",
        "sum_mu2_wl",
        "sum_wl_sq",
        "sum_mu2_wl_sq",
        "sum_wl_cross",
        "face_w_over_mu",
        "face_w_signed",
        "face_mu_w",
    ):
        np.testing.assert_array_equal(getattr(fast, name), getattr(slow, name), err_msg=name)
    assert fast.histories == slow.histories == 2500


def test_compiled_matches_reference_heterogeneous():
    prob = SlabProblem(
        1.0,
        (
            MaterialRegion(0.0, 0.25, 2.0, 1.0, 0.5),
            MaterialRegion(0.25, 0.75, 0.5, 0.45, 2.0),
            MaterialRegion(0.75, 1.0, 1.0, 0.0, 0.0),
        ),
    )
    mesh = build_uniform_mesh(prob, 8)
    config = RunConfig(histories=2000, rng_seed=7, capture_mode="implicit")
    fast = run_histories(prob, mesh, config)
    slow = run_histories(prob, mesh, config, compiled=False)
    np.testing.assert_array_equal(fast.sum_wl, slow.sum_wl)
    np.testing.assert_array_equal(fast.face_w_over_mu, slow.face_w_over_mu)


def test_worker_count_invariance():
    prob = benchmark_problem()
    mesh = build_uniform_mesh(prob, 8)
    config = RunConfig(histories=20000, rng_seed=31, capture_mode="implicit")
    one = run_histories(prob, mesh, config, workers=1)
    eight = run_histories(prob, mesh, config, workers=8)
    for name in ("sum_wl", "sum_mu2_wl", "sum_wl_sq", "face_w_over_mu", "face_w_signed", "face_mu_w"):
        np.testing.assert_array_equal(getattr(one, name), getattr(eight, name), err_msg=name)


def test_second_moment_bounded_by_track_sum():
    prob = benchmark_problem()
    mesh = build_uniform_mesh(prob, 32)
    for seed in range(5):
        t = run_histories(prob, mesh, RunConfig(histories=5000, rng_seed=seed))
        assert np.all(t.sum_mu2_wl >= 0.0)
        assert np.all(t.sum_mu2_wl <= t.sum_wl + 1e-15)


def test_no_absorption_histories_all_terminate():
    prob = SlabProblem(1.0, (MaterialRegion(0.0, 1.0, 1.0, 1.0, 1.0),))
    mesh = build_uniform_mesh(prob, 4)
    config = RunConfig(histories=10000, rng_seed=3, capture_mode="analog")
    t = run_histories(prob, mesh, config)
    assert t.histories == 10000
    assert t.anomalous_histories == 0


def test_event_cap_flags_anomalous_histories():
    prob = SlabProblem(1.0, (MaterialRegion(0.0, 1.0, 1.0, 1.0, 1.0),))
    mesh = build_uniform_mesh(prob, 4)
    config = RunConfig(histories=200, rng_seed=3, capture_mode="analog", max_events=1)
    t = run_histories(prob, mesh, config)
    assert t.anomalous_histories > 0
    ref = run_histories(prob, mesh, config, compiled=False)
    assert t.anomalous_histories == ref.anomalous_histories


def test_flux_agrees_with_reference_within_three_sigma(references):
    prob = benchmark_problem()
    mesh = build_uniform_mesh(prob, 8)
    phi_ex = references[8].phi
    good_seeds = 0
    for seed in range(100):
        t = run_histories(prob, mesh, RunConfig(histories=10**4, rng_seed=seed))
        clos = build_closures(t, mesh)
        se = clos.phi_rel_se * clos.phi_mc
        within = np.abs(clos.phi_mc - phi_ex) <= 3.0 * se
        if within.sum() >= 7:
            good_seeds += 1
    assert good_seeds >= 95


def test_flux_coverage_at_higher_history_count(references):
    prob = benchmark_problem()
    mesh = build_uniform_mesh(prob, 8)
    phi_ex = references[8].phi
    total = 0
    within = 0
    for seed in range(25):
        t = run_histories(prob, mesh, RunConfig(histories=10**5, rng_seed=1000 + seed))
        clos = build_closures(t, mesh)
        se = clos.phi_rel_se * clos.phi_mc
        within += int(np.sum(np.abs(clos.phi_mc - phi_ex) <= 3.0 * se))
        total += 8
    assert within / total >= 0.99


def test_sqrt_n_error_scaling(references):
    from slabhybrid.experiments import relative_l2_error

    prob = benchmark_problem()
    mesh = build_uniform_mesh(prob, 4)
    medians = {}
    for n in (100, 10000):
        errs = []
        for seed in range(20):
            t = run_histories(prob, mesh, RunConfig(histories=n, rng_seed=500 + seed))
            clos = build_closures(t, mesh)
            errs.append(relative_l2_error(clos.phi_mc, references[4].phi, mesh))
        medians[n] = float(np.median(errs))
    factor = medians[100] / medians[10000]
    assert 5.0 <= factor <= 20.0
