"""Estimators and two-sample checks over sets of stationary configurations."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from .configuration import Configuration
from .dynamics import Observer, Region, StepSummaries
from .geometry import LocationDensity, SpaceSpec, as_point, sample_locations
from .policies import PolicySpec

P_THRESHOLD = 0.01


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def z_score(self, target: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.value == target else np.inf
        return (self.value - target) / self.stderr

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.value - target) <= n_se * self.stderr

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr}


@dataclass(frozen=True)
class TestReport:
    """Outcome of a check.

    For two-sample tests ``statistic`` is the KS distance and the check
    passes when ``p_value >= threshold``; for deviation checks ``statistic``
    is the deviation in standard errors and passes when it is at most
    ``threshold``.
    """

    __test__ = False  # not a pytest class

    statistic: float
    threshold: float
    passed: bool
    sample_size: int
    description: str
    p_value: Optional[float] = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "statistic": self.statistic,
            "threshold": self.threshold,
            "passed": self.passed,
            "sample_size": self.sample_size,
            "description": self.description,
        }
        if self.p_value is not None:
            out["p_value"] = self.p_value
        if self.details:
            out["details"] = self.details
        return out


def _nonempty(samples) -> list[Configuration]:
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    return samples


def _binomial(hits: np.ndarray) -> Estimate:
    n = hits.size
    p = float(hits.mean())
    return Estimate(p, float(np.sqrt(p * (1 - p) / n)))


# ------------------------------------------------------------ identities


def empty_ball_probability(samples: Sequence[Configuration], space: SpaceSpec, x,
                           r: float = 1.0) -> Estimate:
    """Fraction of samples with no atom at distance < r from x."""
    samples = _nonempty(samples)
    centre = as_point(space, x)
    hits = np.array([c.count_in_ball(space, centre, r) == 0 for c in samples], dtype=float)
    return _binomial(hits)


def kill_possible(config: Configuration, space: SpaceSpec, x: np.ndarray,
                  policy: Optional[PolicySpec] = None, r: float = 1.0) -> bool:
    """Whether a minus at x finds something to kill.

    Without a policy this is the event that the open ball B(x, r) is occupied.
    """
    if config.total_mass == 0:
        return False
    if policy is None:
        return config.count_in_ball(space, x, r) > 0
    from . import _kernels as K
    from .policies import kernel_args
    args = kernel_args(policy, space)
    pts = np.ascontiguousarray(config.points)
    return any(K.admissible_distance(*args, x, pts[i]) >= 0.0 for i in range(pts.shape[0]))


def mass_balance_deficit(
    samples: Sequence[Configuration],
    space: SpaceSpec,
    density: LocationDensity,
    fresh_draws: int,
    r: float,
    rng: np.random.Generator,
    p_plus: float,
    policy: Optional[PolicySpec] = None,
) -> Estimate:
    """Empirical P(a minus at a fresh X ~ density can kill) minus p/(1-p).

    Each sample gets ``fresh_draws`` independent locations; the standard
    error treats the per-sample averages as independent.
    """
    samples = _nonempty(samples)
    if not 0.0 <= p_plus < 1.0:
        raise ValueError("p_plus must lie in [0, 1)")
    if fresh_draws < 1:
        raise ValueError("fresh_draws must be >= 1")
    per_sample = np.empty(len(samples))
    for i, cfg in enumerate(samples):
        xs = sample_locations(space, density, rng, fresh_draws)
        per_sample[i] = np.mean([kill_possible(cfg, space, x, policy, r) for x in xs])
    target = p_plus / (1.0 - p_plus)
    n = per_sample.size
    se = float(per_sample.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(per_sample.mean() - target), se)


# --------------------------------------------------------- two-sample tests


def _ks(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.array_equal(np.sort(a), np.sort(b)):
        return 0.0, 1.0
    res = sps.ks_2samp(a, b)
    return float(res.statistic), float(res.pvalue)


def _combined(tests: list[tuple[float, float]]) -> tuple[float, float]:
    """Largest statistic and Bonferroni-adjusted smallest p-value."""
    stat = max(t[0] for t in tests)
    p = min(1.0, len(tests) * min(t[1] for t in tests))
    return stat, p


def counts(samples: Sequence[Configuration], region: Optional[Region], space: SpaceSpec) -> np.ndarray:
    if region is None:
        return np.array([c.total_mass for c in samples], dtype=np.int64)
    return np.array([region.count(c, space) for c in samples], dtype=np.int64)


def _shift_points(space: SpaceSpec, pts: np.ndarray, shift: np.ndarray) -> np.ndarray:
    out = pts + shift
    if space.periodic:
        L = space.length_array
        out = np.mod(out, L)
        out[out >= L] = 0.0
    return out


def translated_count(config: Configuration, region: Region, space: SpaceSpec, shift) -> int:
    """Count of ``config`` in ``region + shift`` (wrapping on the torus)."""
    if config.total_mass == 0:
        return 0
    s = as_point(space, shift)
    moved = _shift_points(space, config.points, -s)
    return int(region.mask(moved, space).sum())


def translation_invariance_test(
    samples: Sequence[Configuration],
    space: SpaceSpec,
    n_shifts: int,
    region: Region,
    rng: np.random.Generator,
    shifts: Optional[np.ndarray] = None,
    allow_nonhomogeneous: bool = False,
) -> TestReport:
    """KS comparison of counts in ``region`` against counts in translated copies.

    Sample i is compared through shift ``i % n_shifts``. Random shifts are
    uniform on the torus; on a non-homogeneous space (only with
    ``allow_nonhomogeneous``) explicit ``shifts`` must be given and the
    region is moved without wrapping.
    """
    samples = _nonempty(samples)
    if not space.periodic and not allow_nonhomogeneous:
        raise ValueError(f"translation invariance needs a homogeneous space, got {space.kind}")
    if shifts is None:
        if not space.periodic:
            raise ValueError("explicit shifts are required off the torus")
        shifts = rng.random((n_shifts, space.dim)) * space.length_array
    shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
    base = counts(samples, region, space)
    moved = np.array([translated_count(c, region, space, shifts[i % len(shifts)])
                      for i, c in enumerate(samples)])
    stat, p = _ks(base, moved)
    return TestReport(stat, P_THRESHOLD, p >= P_THRESHOLD, len(samples),
                      f"KS of counts in {region.label} vs {len(shifts)} translated copies",
                      p_value=p,
                      details={"mean_count": float(base.mean()),
                               "mean_translated_count": float(moved.mean())})


def reflection_symmetry_test(samples: Sequence[Configuration], space: SpaceSpec,
                             a: float, b: float) -> TestReport:
    """Counts in [a, b] against counts in [T - b, T - a] on an interval."""
    samples = _nonempty(samples)
    if space.kind != "interval":
        raise ValueError("reflection symmetry is checked on an interval")
    T = space.lengths[0]
    left = counts(samples, Region.box([a], [b]), space)
    right = counts(samples, Region.box([T - b], [T - a]), space)
    stat, p = _ks(left, right)
    return TestReport(stat, P_THRESHOLD, p >= P_THRESHOLD, len(samples),
                      f"KS of counts in [{a:g}, {b:g}] vs [{T - b:g}, {T - a:g}]", p_value=p,
                      details={"mean_left": float(left.mean()), "mean_right": float(right.mean())})


def scale_invariance_test(
    samples: Sequence[Configuration],
    space: SpaceSpec,
    alpha,
    regions: Sequence[Region],
    rng: Optional[np.random.Generator] = None,
) -> TestReport:
    """Counts in box regions A against counts in alpha * A (coordinatewise).

    ``rng`` is accepted for interface symmetry; the test is deterministic.
    """
    samples = _nonempty(samples)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.shape != (space.dim,) or np.any(alpha <= 0) or np.any(alpha > 1):
        raise ValueError("alpha must be a vector in (0, 1]^d")
    tests = []
    means = []
    for reg in regions:
        if reg.kind != "box":
            raise ValueError("scale invariance regions must be boxes")
        scaled = Region.box(np.multiply(reg.lower, alpha), np.multiply(reg.upper, alpha))
        c0 = counts(samples, reg, space)
        c1 = counts(samples, scaled, space)
        tests.append(_ks(c0, c1))
        means.append([float(c0.mean()), float(c1.mean())])
    stat, p = _combined(tests)
    return TestReport(stat, P_THRESHOLD, p >= P_THRESHOLD, len(samples),
                      f"KS of counts in {len(regions)} region(s) vs their images under "
                      f"x -> alpha x, alpha={alpha.tolist()}",
                      p_value=p, details={"mean_counts": means})


def log_transform(config: Configuration, space: SpaceSpec) -> tuple[np.ndarray, int]:
    """Map atoms u to -log(u / T) coordinatewise.

    Returns the mapped points and the number of atoms with a zero
    coordinate, which have no image and are dropped.
    """
    if config.total_mass == 0:
        return np.zeros((0, config.dim)), 0
    u = config.points / space.length_array
    ok = np.all(u > 0, axis=1)
    with np.errstate(divide="ignore"):
        out = -np.log(u[ok])
    # -log(1) is +0.0 already; normalise any -0.0
    out = out + 0.0
    return out, int((~ok).sum())


def log_window_stationarity(
    samples: Sequence[Configuration],
    space: SpaceSpec,
    windows: Sequence[tuple[Sequence[float], Sequence[float]]],
    shift,
) -> TestReport:
    """Counts of log-transformed atoms in each window against the shifted window.

    Windows are half-open boxes [lower, upper) in the transformed coordinates.
    """
    samples = _nonempty(samples)
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    mapped = []
    excluded = 0
    for c in samples:
        pts, dropped = log_transform(c, space)
        mapped.append(pts)
        excluded += dropped

    def window_counts(lo, hi):
        return np.array([int(np.all((p >= lo) & (p < hi), axis=1).sum()) for p in mapped])

    tests = []
    means = []
    for lower, upper in windows:
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        c0 = window_counts(lo, hi)
        c1 = window_counts(lo + shift, hi + shift)
        tests.append(_ks(c0, c1))
        means.append([float(c0.mean()), float(c1.mean())])
    stat, p = _combined(tests)
    return TestReport(stat, P_THRESHOLD, p >= P_THRESHOLD, len(samples),
                      f"KS of log-coordinate window counts vs shift {shift.tolist()}",
                      p_value=p, details={"excluded_atoms": excluded, "mean_counts": means})


# ------------------------------------------------------------ count laws


def count_histogram(values) -> np.ndarray:
    """Empirical pmf of nonnegative integer observations, indexed by value."""
    v = np.asarray(values, dtype=np.int64)
    if v.size == 0:
        raise ValueError("no observations")
    if v.min() < 0:
        raise ValueError("counts must be nonnegative")
    return np.bincount(v) / v.size


def count_distribution(samples: Sequence[Configuration], region: Optional[Region] = None,
                       space: Optional[SpaceSpec] = None) -> np.ndarray:
    """Empirical law of the count in ``region`` (whole space when None)."""
    samples = _nonempty(samples)
    if region is not None and space is None:
        raise ValueError("a space is needed to count in a region")
    return count_histogram(counts(samples, region, space))


def geometric_pmf(rho: float, kmax: int) -> np.ndarray:
    """(1 - rho) rho^k for k = 0..kmax."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    k = np.arange(kmax + 1)
    return (1 - rho) * rho ** k


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """TV distance between pmfs on {0, 1, ...}; mass beyond the shorter support counts fully."""
    n = max(len(p), len(q))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(p)] = p
    b[: len(q)] = q
    # tails of either law not covered by the arrays
    tail = abs((1 - a.sum()) - (1 - b.sum()))
    return float(0.5 * (np.abs(a - b).sum() + tail))


# ------------------------------------------------------------ accumulation


class AccumulationMonitor(Observer):
    """Tracks region counts along a forward run at logarithmic checkpoints.

    For each decade between consecutive checkpoints it keeps the mean count
    over the last ``tail_fraction`` of the decade and ``samples_per_decade``
    equally spaced observations. A region *accumulates* when its tail means
    strictly increase across every decade by more than three standard
    errors of the thinned observations; a region is *flat* when its thinned
    observations in the last two decades pass a KS test.

    ``region_index`` maps region labels to count columns of the engine.
    """

    def __init__(self, checkpoints: Sequence[int], labels: Sequence[str],
                 samples_per_decade: int = 200, tail_fraction: float = 0.1):
        cps = [int(c) for c in checkpoints]
        if len(cps) < 2 or any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("need at least two increasing checkpoints")
        self.checkpoints = cps
        self.labels = list(labels)
        self.samples_per_decade = samples_per_decade
        self.tail_fraction = tail_fraction
        nd = len(cps)
        nr = len(self.labels)
        self.at_checkpoint = np.full((nd, nr), -1, dtype=np.int64)
        self._tail_sum = np.zeros((nd, nr))
        self._tail_n = np.zeros(nd, dtype=np.int64)
        self.thinned: list[list[np.ndarray]] = [[] for _ in range(nd)]
        # decade k covers steps (cps[k-1], cps[k]]; the first covers (0, cps[0]]
        starts = [0] + cps[:-1]
        self._ranges = list(zip(starts, cps))
        self._sample_at = [np.unique(np.linspace(a, b, samples_per_decade + 1, dtype=np.int64)[1:])
                           for a, b in self._ranges]

    def on_steps(self, s: StepSummaries) -> None:
        # step index i leaves the configuration after i + 1 events
        t = s.indices + 1
        for k, (a, b) in enumerate(self._ranges):
            lo = max(a, b - int(self.tail_fraction * (b - a)))
            sel = (t > lo) & (t <= b)
            if sel.any():
                self._tail_sum[k] += s.counts[sel].sum(axis=0)
                self._tail_n[k] += int(sel.sum())
            hit = (t == b)
            if hit.any():
                self.at_checkpoint[k] = s.counts[np.flatnonzero(hit)[0]]
            if t[0] <= b and t[-1] > a:
                picked = np.isin(t, self._sample_at[k])
                if picked.any():
                    self.thinned[k].extend(s.counts[picked].copy())

    def tail_means(self) -> np.ndarray:
        return self._tail_sum / np.maximum(self._tail_n, 1)[:, None]

    def _thinned(self, k: int) -> np.ndarray:
        if not self.thinned[k]:
            return np.zeros((0, len(self.labels)))
        return np.vstack(self.thinned[k])

    def report(self) -> dict:
        means = self.tail_means()
        out = {"checkpoints": self.checkpoints, "regions": {}}
        for r, label in enumerate(self.labels):
            m = means[:, r]
            steps = []
            for k in range(1, len(self.checkpoints)):
                prev = self._thinned(k - 1)[:, r]
                cur = self._thinned(k)[:, r]
                se = np.sqrt(prev.var(ddof=1) / max(prev.size, 1) + cur.var(ddof=1) / max(cur.size, 1)) \
                    if prev.size > 1 and cur.size > 1 else 0.0
                steps.append(bool(m[k] - m[k - 1] > 3 * se and m[k] > m[k - 1]))
            last = self._thinned(len(self.checkpoints) - 1)[:, r]
            before = self._thinned(len(self.checkpoints) - 2)[:, r]
            stat, p = _ks(before, last)
            out["regions"][label] = {
                "tail_means": [float(v) for v in m],
                "at_checkpoint": [int(v) for v in self.at_checkpoint[:, r]],
                "increases": steps,
                "accumulates": bool(all(steps)),
                "flat_ks_statistic": stat,
                "flat_p_value": p,
                "flat": bool(p >= P_THRESHOLD),
            }
        return out
