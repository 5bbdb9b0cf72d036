import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from spatial_bd.geometry import (
    PiecewiseConstant,
    SpaceSpec,
    Uniform,
    distance,
    distances,
    leq_orthant,
    sample_location,
    sample_locations,
    translate,
)

TORUS1 = SpaceSpec.torus(10.0)
TORUS2 = SpaceSpec.torus(10.0, 10.0)
BOX = SpaceSpec.box(1.0, 1.0)
INTERVAL = SpaceSpec.interval(10.0)


def test_space_invariants():
    with pytest.raises(ValueError):
        SpaceSpec.torus(0.0)
    with pytest.raises(ValueError):
        SpaceSpec.box(1.0, -2.0)
    assert TORUS2.dim == 2 and TORUS2.periodic
    assert not INTERVAL.periodic and INTERVAL.dim == 1
    assert SpaceSpec.from_dict(BOX.to_dict()) == BOX


def test_distance_examples():
    assert distance(TORUS1, 2.0, 5.0) == 3.0
    assert distance(TORUS1, 9.5, 0.5) == 1.0
    assert distance(BOX, (0, 0), (0.3, 0.4)) == pytest.approx(0.5, abs=1e-15)


def test_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        distance(BOX, (0.1,), (0.2, 0.3))


@pytest.mark.parametrize("space", [TORUS1, TORUS2, INTERVAL, BOX, SpaceSpec.torus(1.0, 2.0)])
def test_metric_axioms(space):
    rng = np.random.default_rng(0)
    n = 10_000
    x, y, z = (sample_locations(space, Uniform(), rng, n) for _ in range(3))
    dxy = np.array([distances(space, y[i:i + 1], x[i])[0] for i in range(n)])
    dyx = np.array([distances(space, x[i:i + 1], y[i])[0] for i in range(n)])
    dxz = np.array([distances(space, z[i:i + 1], x[i])[0] for i in range(n)])
    dzy = np.array([distances(space, y[i:i + 1], z[i])[0] for i in range(n)])
    assert np.all(dxy >= 0)
    assert np.array_equal(dxy, dyx)
    assert np.all(dxy <= dxz + dzy + 1e-12)
    assert all(distance(space, p, p) == 0.0 for p in x[:100])


def test_torus_distance_is_translation_invariant():
    rng = np.random.default_rng(1)
    for space in (TORUS1, TORUS2):
        for _ in range(10_000):
            x, y, s = (sample_location(space, Uniform(), rng) for _ in range(3))
            a = distance(space, translate(space, x, s), translate(space, y, s))
            assert a == pytest.approx(distance(space, x, y), abs=1e-12)


def test_translate_examples():
    assert translate(TORUS1, 9.5, 1.0)[0] == pytest.approx(0.5)
    assert translate(TORUS1, 3.25, 0.0)[0] == 3.25
    np.testing.assert_allclose(translate(SpaceSpec.torus(1.0, 2.0), (0.9, 1.9), (0.2, 0.2)),
                               (0.1, 0.1), atol=1e-12)
    with pytest.raises(ValueError):
        translate(INTERVAL, 1.0, 1.0)
    with pytest.raises(ValueError):
        translate(BOX, (0.1, 0.1), (0.2, 0.2))


def test_translate_maps_balls_to_balls():
    rng = np.random.default_rng(2)
    pts = sample_locations(TORUS2, Uniform(), rng, 2000)
    c = np.array([9.5, 0.3])
    s = np.array([3.7, 8.8])
    inside = distances(TORUS2, pts, c) < 1.0
    moved = np.array([translate(TORUS2, p, s) for p in pts])
    inside2 = distances(TORUS2, moved, translate(TORUS2, c, s)) < 1.0
    assert np.array_equal(inside, inside2)


def test_leq_orthant_examples():
    assert leq_orthant((0.2, 0.3), (0.6, 0.7))
    assert not leq_orthant((0.2, 0.9), (0.6, 0.7))
    assert leq_orthant((0.4, 0.4), (0.4, 0.4))
    with pytest.raises(ValueError):
        leq_orthant((0.1,), (0.1, 0.2))


coords = st.floats(0.0, 1.0, allow_nan=False)
point = st.tuples(coords, coords)


@settings(max_examples=300, deadline=None)
@given(point, point, point)
def test_leq_orthant_is_partial_order(x, y, z):
    assert leq_orthant(x, x)
    if leq_orthant(x, y) and leq_orthant(y, x):
        assert x == y
    if leq_orthant(x, y) and leq_orthant(y, z):
        assert leq_orthant(x, z)


def test_uniform_interval_mean():
    x = sample_locations(INTERVAL, Uniform(), np.random.default_rng(3), 10 ** 6)
    assert abs(x.mean() - 5.0) <= 0.01


def test_uniform_torus_ks_per_coordinate():
    x = sample_locations(TORUS2, Uniform(), np.random.default_rng(4), 10 ** 6)
    for k in range(2):
        assert sps.kstest(x[:, k] / 10.0, "uniform").pvalue >= 0.01


def test_piecewise_zero_weight_segment():
    d = PiecewiseConstant((0.0, 5.0, 10.0), (2.0, 0.0))
    x = sample_locations(INTERVAL, d, np.random.default_rng(5), 10 ** 5)
    assert np.all((x >= 0) & (x <= 5))


def test_piecewise_segment_mass():
    # masses 1*5 and 3*5 normalise to 1/4 and 3/4
    d = PiecewiseConstant((0.0, 5.0, 10.0), (1.0, 3.0))
    x = sample_locations(INTERVAL, d, np.random.default_rng(6), 10 ** 6)
    assert abs(np.mean(x <= 5.0) - 0.25) <= 0.005


def test_piecewise_validation():
    with pytest.raises(ValueError):
        PiecewiseConstant((0.0, 5.0, 10.0), (0.0, 0.0))
    with pytest.raises(ValueError):
        PiecewiseConstant((0.0, 6.0, 5.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        PiecewiseConstant((0.0, 5.0, 10.0), (1.0, -1.0))
    with pytest.raises(ValueError):
        sample_locations(TORUS1, PiecewiseConstant((0.0, 5.0, 10.0), (1.0, 1.0)),
                         np.random.default_rng(0), 3)
