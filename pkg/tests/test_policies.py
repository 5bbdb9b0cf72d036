import math

import numpy as np
import pytest

from spatial_bd.configuration import Configuration, is_dominated
from spatial_bd.geometry import SpaceSpec
from spatial_bd.policies import (
    PolicySpec,
    TieBreaker,
    admissible_atoms,
    check_compatible,
    compatibility_errors,
    coupled_select,
    select_target,
)

INTERVAL = SpaceSpec.interval(10.0)
TORUS1 = SpaceSpec.torus(10.0)
TORUS2 = SpaceSpec.torus(4.0, 4.0)
BOX = SpaceSpec.box(1.0, 1.0)
BOX3 = SpaceSpec.box(3.0, 3.0)


def C(*pts):
    return Configuration(list(pts), dim=1)


# -- reference implementation: linear scan, explicit argmin, priority draw


def _ref_admissible(kind, space, x, z, r):
    """Distance from x to z when a minus at x may kill z, else None."""
    L = np.asarray(space.lengths)
    diff = np.asarray(z) - np.asarray(x)
    if kind in ("LO", "GO"):
        if space.periodic:
            diff = np.mod(diff, L)
        elif np.any(diff < 0):
            return None
    elif space.periodic:
        a = np.abs(diff)
        diff = np.minimum(a, L - a)
    d = math.sqrt(float(np.sum(diff * diff)))
    if kind in ("LG", "LR", "LO") and not d < r:
        return None
    return d


def reference_select(kind, space, config, x, tie, r=1.0):
    cands = []
    seen = {}
    for z in config.points:
        key = tuple(z)
        copy = seen.get(key, 0)
        seen[key] = copy + 1
        d = _ref_admissible(kind, space, x, z, r)
        if d is not None:
            cands.append((d, tie.priority(z, copy), key))
    if not cands:
        return None
    if kind != "LR":
        dmin = min(c[0] for c in cands)
        cands = [c for c in cands if c[0] <= dmin + 1e-12]
    return min(cands, key=lambda c: c[1])[2]


def _pt(v):
    return None if v is None else tuple(float(c) for c in np.atleast_1d(v))


# -- worked examples


def test_select_examples():
    t = TieBreaker(7)
    assert _pt(select_target(PolicySpec("LG"), INTERVAL, C(2.0, 3.5), 3.0, t)) == (3.5,)
    assert select_target(PolicySpec("LG"), INTERVAL, C(0.5, 9.0), 5.0, t) is None
    assert _pt(select_target(PolicySpec("LO"), INTERVAL, C(2.5, 3.4), 2.6, t)) == (3.4,)
    assert _pt(select_target(PolicySpec("GG"), INTERVAL, C(0.5, 9.0), 5.0, t)) == (9.0,)
    cfg = Configuration([(0.2, 0.3), (0.6, 0.7)])
    assert _pt(select_target(PolicySpec("GO"), BOX, cfg, (0.5, 0.5), t)) == (0.6, 0.7)


def test_empty_configuration_gives_none():
    for kind in ("LG", "LR", "LO", "GG"):
        assert select_target(PolicySpec(kind), INTERVAL, Configuration.empty(1), 3.0,
                             TieBreaker(1)) is None


def test_minus_on_an_atom_kills_it():
    t = TieBreaker(3)
    assert _pt(select_target(PolicySpec("LO"), INTERVAL, C(4.0), 4.0, t)) == (4.0,)
    cfg = Configuration([(0.5, 0.5)])
    assert _pt(select_target(PolicySpec("GO"), BOX, cfg, (0.5, 0.5), t)) == (0.5, 0.5)


def test_lo_torus_uses_forward_arc():
    t = TieBreaker(4)
    lo = PolicySpec("LO")
    assert _pt(select_target(lo, TORUS1, C(0.3), 9.8, t)) == (0.3,)
    assert select_target(lo, TORUS1, C(9.5), 9.8, t) is None


def test_lr_two_atoms_is_fair():
    hits = sum(_pt(select_target(PolicySpec("LR"), INTERVAL, C(2.0, 2.5), 2.2,
                                 TieBreaker(s))) == (2.0,) for s in range(20_000))
    assert abs(hits / 20_000 - 0.5) <= 0.015


def test_lr_three_atoms_uniform():
    cfg = C(2.0, 2.5, 2.9)
    picks = {2.0: 0, 2.5: 0, 2.9: 0}
    n = 100_000
    lr = PolicySpec("LR")
    for s in range(n):
        picks[_pt(select_target(lr, INTERVAL, cfg, 2.2, TieBreaker(s)))[0]] += 1
    for v in picks.values():
        assert abs(v / n - 1 / 3) <= 0.01


def test_lr_counts_multiplicity():
    cfg = C(2.0, 2.0, 2.5)
    n = 30_000
    hits = sum(_pt(select_target(PolicySpec("LR"), INTERVAL, cfg, 2.2,
                                 TieBreaker(s))) == (2.0,) for s in range(n))
    assert abs(hits / n - 2 / 3) <= 0.015


def test_exact_ties_are_split_at_random():
    hits = sum(_pt(select_target(PolicySpec("LG"), INTERVAL, C(2.0, 3.0), 2.5,
                                 TieBreaker(s))) == (2.0,) for s in range(10_000))
    assert 0.45 <= hits / 10_000 <= 0.55


def test_strict_radius():
    assert select_target(PolicySpec("LG"), INTERVAL, C(4.0), 3.0, TieBreaker(0)) is None
    assert select_target(PolicySpec("LR"), INTERVAL, C(4.0), 3.0, TieBreaker(0)) is None
    assert select_target(PolicySpec("LO"), INTERVAL, C(4.0), 3.0, TieBreaker(0)) is None


def test_deterministic():
    cfg = C(1.0, 1.4, 1.7)
    a = [select_target(PolicySpec("LR"), INTERVAL, cfg, 1.2, TieBreaker(s)) for s in range(50)]
    b = [select_target(PolicySpec("LR"), INTERVAL, cfg, 1.2, TieBreaker(s)) for s in range(50)]
    assert [_pt(v) for v in a] == [_pt(v) for v in b]


CASES = [
    ("LG", INTERVAL), ("LR", INTERVAL), ("LO", INTERVAL), ("GG", INTERVAL),
    ("LG", TORUS2), ("LR", TORUS2), ("LO", TORUS2), ("GG", TORUS2),
    ("LG", BOX3), ("LO", BOX3), ("GO", BOX3), ("GG", BOX3),
]


@pytest.mark.parametrize("kind,space", CASES, ids=[f"{k}-{s.kind}{s.dim}" for k, s in CASES])
def test_matches_reference(kind, space):
    rng = np.random.default_rng(abs(hash((kind, space.kind, space.dim))) % 2 ** 32)
    policy = PolicySpec(kind)
    L = np.asarray(space.lengths)
    n_inst = 100_000 if space.dim == 1 else 20_000
    for _ in range(n_inst):
        m = rng.integers(0, 8)
        pts = rng.random((m, space.dim)) * L
        if m and rng.random() < 0.3:
            pts = np.vstack([pts, pts[:1]])
        if rng.random() < 0.2:
            # coarse grid: exact distance ties
            pts = np.round(pts * 2) / 2
            if space.periodic:
                pts = np.mod(pts, L)
        cfg = Configuration(pts.reshape(-1, space.dim), dim=space.dim)
        x = rng.random(space.dim) * L
        if rng.random() < 0.2:
            x = np.round(x * 2) / 2
            if space.periodic:
                x = np.mod(x, L)
        tie = TieBreaker(int(rng.integers(0, 2 ** 63)))
        got = _pt(select_target(policy, space, cfg, x, tie))
        assert got == reference_select(kind, space, cfg, x, tie), (cfg, x, tie)
        if got is not None and kind in ("LG", "LR", "LO"):
            assert _ref_admissible(kind, space, x, got, 1.0) < 1.0


def test_admissible_atoms():
    assert admissible_atoms(PolicySpec("LO"), INTERVAL, C(2.5, 3.4, 3.5), 2.6) == \
        [((3.4,), 1), ((3.5,), 1)]
    assert admissible_atoms(PolicySpec("LG"), INTERVAL, Configuration.empty(1), 2.6) == []


def test_compatibility():
    assert compatibility_errors(PolicySpec("GO"), TORUS1)
    assert not compatibility_errors(PolicySpec("LO"), TORUS1)
    assert not compatibility_errors(PolicySpec("GO"), BOX)
    with pytest.raises(ValueError):
        check_compatible(PolicySpec("GO"), TORUS2)
    with pytest.raises(ValueError):
        PolicySpec("XX")
    with pytest.raises(ValueError):
        PolicySpec("LG", radius=0.0)
    assert PolicySpec.from_dict("LR") == PolicySpec("LR")
    assert PolicySpec.from_dict(PolicySpec("LO", 0.5).to_dict()) == PolicySpec("LO", 0.5)


# -- coupled kills


def _seed_where_lr_picks(cfg, x, target):
    for s in range(1000):
        if _pt(select_target(PolicySpec("LR"), INTERVAL, cfg, x, TieBreaker(s))) == target:
            return TieBreaker(s)
    raise AssertionError("no seed found")


def test_coupled_lr_examples():
    P, Q = C(2.0), C(2.0, 2.5)
    lr = PolicySpec("LR")
    t = _seed_where_lr_picks(Q, 2.2, (2.0,))
    assert tuple(map(_pt, coupled_select(lr, INTERVAL, P, Q, 2.2, t))) == ((2.0,), (2.0,))
    t = _seed_where_lr_picks(Q, 2.2, (2.5,))
    assert tuple(map(_pt, coupled_select(lr, INTERVAL, P, Q, 2.2, t))) == ((2.0,), (2.5,))


def test_coupled_empty_p():
    # LO is excluded: 2.0 lies behind x, so Q has nothing admissible either
    for kind in ("LG", "LR", "GG"):
        a, b = coupled_select(PolicySpec(kind), INTERVAL, Configuration.empty(1), C(2.0), 2.2,
                              TieBreaker(0))
        assert a is None and _pt(b) == (2.0,)


def test_coupled_requires_domination():
    with pytest.raises(ValueError):
        coupled_select(PolicySpec("LG"), INTERVAL, C(1.0), C(2.0), 1.5, TieBreaker(0))


@pytest.mark.parametrize("kind", ["LG", "LR", "LO", "GG"])
def test_coupled_kill_preserves_domination(kind):
    rng = np.random.default_rng(11)
    policy = PolicySpec(kind)
    space = SpaceSpec.interval(4.0)
    for _ in range(100_000):
        q = np.round(rng.random(rng.integers(1, 7)) * 8) / 2
        q = np.concatenate([q, q[: rng.integers(0, 3)]])
        p = q[rng.random(q.size) < 0.5]
        P, Q = C(*p), C(*q)
        x = round(rng.random() * 8) / 2 if rng.random() < 0.5 else rng.random() * 4
        a, b = coupled_select(policy, space, P, Q, x, TieBreaker(int(rng.integers(0, 2 ** 62))))
        P2 = P if a is None else P.remove_atom(a)
        Q2 = Q if b is None else Q.remove_atom(b)
        assert is_dominated(P2, Q2), (P, Q, x)
