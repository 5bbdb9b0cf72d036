import numpy as np
import pytest

from spatial_bd import stats
from spatial_bd.configuration import Configuration
from spatial_bd.dynamics import (
    Engine,
    EventHistory,
    Region,
    StreamSpec,
    TrajectoryRecorder,
    replica_seed,
)
from spatial_bd.geometry import SpaceSpec, Uniform
from spatial_bd.loynes import backward_iterate, sample_minimal_stationary
from spatial_bd.policies import PolicySpec

TORUS = SpaceSpec.torus(10.0, 10.0)
INTERVAL = SpaceSpec.interval(10.0)
BOX = SpaceSpec.box(1.0, 1.0)


def empty_ball_prediction(p):
    return (1 - 2 * p) / (1 - p)


def reflected_walk_stationary_law(p, kmax=400):
    """Oracle: solve pi = pi P for the walk max(W + Z, 0) truncated at kmax."""
    P = np.zeros((kmax + 1, kmax + 1))
    for k in range(kmax + 1):
        P[k, min(k + 1, kmax)] += p
        P[k, max(k - 1, 0)] += 1 - p
    A = np.vstack([(P.T - np.eye(kmax + 1)), np.ones(kmax + 1)])
    b = np.zeros(kmax + 2)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]


def test_balance_oracle_gives_geometric_law():
    pi = reflected_walk_stationary_law(0.3)
    assert pi[0] == pytest.approx(4 / 7, abs=1e-9)
    assert pi[1] / pi[0] == pytest.approx(3 / 7, abs=1e-9)
    np.testing.assert_allclose(pi[:50], stats.geometric_pmf(3 / 7, 49), atol=1e-9)


def test_empty_ball_predictions():
    assert empty_ball_prediction(1 / 3) == pytest.approx(0.5)
    assert empty_ball_prediction(0.3) == pytest.approx(0.5714, abs=1e-4)


def test_empty_ball_probability_on_empty_samples():
    est = stats.empty_ball_probability([Configuration.empty(2)] * 10, TORUS, (5.0, 5.0), 1.0)
    assert est.value == 1.0 and est.stderr == 0.0
    with pytest.raises(ValueError):
        stats.empty_ball_probability([], TORUS, (5.0, 5.0))


def test_empty_ball_binomial_error():
    samples = [Configuration([(5.0, 5.0)])] * 30 + [Configuration.empty(2)] * 70
    est = stats.empty_ball_probability(samples, TORUS, (5.2, 5.0))
    assert est.value == pytest.approx(0.7)
    assert est.stderr == pytest.approx(np.sqrt(0.7 * 0.3 / 100))


@pytest.fixture(scope="module")
def torus_samples():
    """Deep LG iterates on the torus, agreeing at two depths >= 1024."""
    out = []
    for k in range(400):
        h = EventHistory(StreamSpec(0.3, seed=replica_seed(101, k)), TORUS, block_size=1 << 12)
        out.append(sample_minimal_stationary(h, PolicySpec("LG"), TORUS, 1 << 13,
                                             min_depth=1 << 10).config)
    return out


def test_empty_ball_probability_does_not_depend_on_centre(torus_samples):
    rng = np.random.default_rng(0)
    ests = [stats.empty_ball_probability(torus_samples, TORUS, rng.random(2) * 10)
            for _ in range(10)]
    for a in ests:
        for b in ests:
            assert abs(a.value - b.value) <= 3 * np.hypot(a.stderr, b.stderr)


def test_mass_balance_degenerate_cases():
    rng = np.random.default_rng(1)
    empty = [Configuration.empty(2)] * 50
    est = stats.mass_balance_deficit(empty, TORUS, Uniform(), 3, 1.0, rng, 0.0)
    assert est.value == 0.0
    # pure births: far from stationary, the deficit is clearly nonzero
    h = EventHistory(StreamSpec(1.0, seed=3), TORUS)
    births = [backward_iterate(h.shifted(-1000 * k), PolicySpec("LG"), TORUS, 300)
              for k in range(50)]
    est = stats.mass_balance_deficit(births, TORUS, Uniform(), 2, 1.0, rng, 0.3)
    assert abs(est.z_score(0.0)) > 3


def test_kill_possible_respects_policy():
    cfg = Configuration([(0.5,)])
    assert stats.kill_possible(cfg, INTERVAL, np.array([0.8]))
    assert not stats.kill_possible(cfg, INTERVAL, np.array([0.8]), PolicySpec("LO"))
    assert stats.kill_possible(cfg, INTERVAL, np.array([0.2]), PolicySpec("LO"))


def test_translation_zero_shift_is_identical(torus_samples):
    rep = stats.translation_invariance_test(torus_samples, TORUS, 1, Region.ball((5, 5), 1.0),
                                            np.random.default_rng(0), shifts=[[0.0, 0.0]])
    assert rep.statistic == 0.0 and rep.passed


def test_translation_invariance_on_torus(torus_samples):
    rep = stats.translation_invariance_test(torus_samples, TORUS, 50, Region.ball((5, 5), 1.0),
                                            np.random.default_rng(1))
    assert rep.passed and rep.passed == (rep.p_value >= rep.threshold)
    assert rep.to_dict()["sample_size"] == 400


def test_translation_requires_homogeneous_space():
    with pytest.raises(ValueError):
        stats.translation_invariance_test([Configuration.empty(1)], INTERVAL, 3,
                                          Region.box([0], [1]), np.random.default_rng(0))


def test_translated_count_wraps():
    cfg = Configuration([(0.2, 0.2)])
    assert stats.translated_count(cfg, Region.ball((9.9, 9.9), 0.5), TORUS, (-0.3, -0.3)) == 0
    assert stats.translated_count(cfg, Region.ball((9.9, 9.9), 0.5), TORUS, (0.3, 0.3)) == 1


def test_count_distribution_examples():
    assert list(stats.count_distribution([Configuration.empty(1)] * 5)) == [1.0]
    eng = Engine(PolicySpec("GG"), INTERVAL)
    h = EventHistory(StreamSpec(0.3, seed=42), INTERVAL)
    eng.run(h, 0, 10 ** 5)
    rec = TrajectoryRecorder()
    eng.run(h, 10 ** 5, 10 ** 6, [rec])
    pmf = stats.count_histogram(rec.summaries.masses)
    pi = reflected_walk_stationary_law(0.3)
    assert abs(pmf[0] - pi[0]) <= 0.005
    assert abs(pmf[1] / pmf[0] - pi[1] / pi[0]) <= 0.01
    assert stats.total_variation(pmf, pi) <= 0.01


def test_total_variation_counts_uncovered_tail():
    assert stats.total_variation(np.array([1.0]), np.array([1.0])) == 0.0
    assert stats.total_variation(np.array([0.5, 0.5]), np.array([1.0])) == pytest.approx(0.5)
    assert stats.total_variation(np.array([0.5]), np.array([0.5])) == 0.0


def test_scale_identity_passes():
    rng = np.random.default_rng(2)
    samples = [Configuration(rng.random((rng.integers(0, 5), 2)), dim=2) for _ in range(200)]
    rep = stats.scale_invariance_test(samples, BOX, (1.0, 1.0), [Region.box((0.4, 0.2), (1, 1))])
    assert rep.statistic == 0.0 and rep.passed
    with pytest.raises(ValueError):
        stats.scale_invariance_test(samples, BOX, (1.5, 1.0), [Region.box((0.4, 0.2), (1, 1))])


def test_scale_invariance_rejects_lg_samples():
    samples = []
    for k in range(2000):
        h = EventHistory(StreamSpec(0.3, seed=replica_seed(5, k)), BOX, block_size=1 << 11)
        samples.append(backward_iterate(h, PolicySpec("LG"), BOX, 1024))
    rep = stats.scale_invariance_test(samples, BOX, (0.5, 1.0), [Region.box((0.4, 0.2), (1, 1))])
    assert not rep.passed


def test_log_transform():
    pts, dropped = stats.log_transform(Configuration([(1.0, 1.0)]), BOX)
    assert pts.tolist() == [[0.0, 0.0]] and dropped == 0
    pts, dropped = stats.log_transform(Configuration([(0.0, 0.5), (0.5, 0.25)]), BOX)
    assert dropped == 1
    np.testing.assert_allclose(pts, [[np.log(2), np.log(4)]])


def test_log_window_zero_shift():
    rng = np.random.default_rng(3)
    samples = [Configuration(rng.random((5, 2)), dim=2) for _ in range(100)]
    rep = stats.log_window_stationarity(samples, BOX, [((0, 0), (1, 1))], (0.0, 0.0))
    assert rep.statistic == 0.0 and rep.passed
    samples.append(Configuration([(0.0, 0.3)]))
    rep = stats.log_window_stationarity(samples, BOX, [((0, 0), (1, 1))], (0.0, 0.0))
    assert rep.details["excluded_atoms"] == 1


def _monitor(p, policy, seed, checkpoints=(1000, 10_000, 100_000)):
    regions = [Region.strip(0.5, "strip"), Region.box((5, 5), (10, 10), "interior")]
    mon = stats.AccumulationMonitor(checkpoints, ["strip", "interior"])
    Engine(PolicySpec(policy), TORUS, regions=regions).run(
        EventHistory(StreamSpec(p, seed=seed), TORUS), 0, checkpoints[-1], [mon])
    return mon.report()


def test_pure_births_grow_everywhere():
    rep = _monitor(1.0, "LG", 1)
    for r in rep["regions"].values():
        assert r["accumulates"] and not r["flat"]
    assert rep["regions"]["interior"]["at_checkpoint"][0] > 0


def test_lg_torus_settles():
    rep = _monitor(0.3, "LG", 2)
    for r in rep["regions"].values():
        assert not r["accumulates"] and r["flat"]


def test_monitor_validates_checkpoints():
    with pytest.raises(ValueError):
        stats.AccumulationMonitor([10], ["a"])
    with pytest.raises(ValueError):
        stats.AccumulationMonitor([10, 5], ["a"])


def test_reports_are_deterministic(torus_samples):
    a = stats.translation_invariance_test(torus_samples, TORUS, 20, Region.ball((1, 1), 1.0),
                                          np.random.default_rng(9))
    b = stats.translation_invariance_test(torus_samples, TORUS, 20, Region.ball((1, 1), 1.0),
                                          np.random.default_rng(9))
    assert a == b


def test_reflection_symmetry_requires_interval():
    with pytest.raises(ValueError):
        stats.reflection_symmetry_test([Configuration.empty(2)], TORUS, 0.0, 1.0)
