"""Acceptance suites: the stationary identities and structural properties,
each evaluated at a fixed sample size and reported as deterministic JSON.

Every random input is derived from ``AcceptanceSettings.seed`` through
labelled sub-seeds, so a suite run twice with the same settings gives a
byte-identical report. Reports carry no timings.
"""
from __future__ import annotations

import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .configuration import Configuration
from .dynamics import (
    Engine,
    EventHistory,
    Region,
    StreamSpec,
    TrajectoryRecorder,
    replica_seed,
)
from .geometry import LocationDensity, PiecewiseConstant, SpaceSpec, Uniform
from .loynes import Certificate, StationarySample, coupling_time, fixed_point_residual, \
    sample_minimal_stationary
from .policies import PolicySpec, kernel_args
from . import stats

TORUS = SpaceSpec.torus(10.0, 10.0)
INTERVAL = SpaceSpec.interval(10.0)
UNIT_BOX = SpaceSpec.box(1.0, 1.0)


@dataclass(frozen=True)
class AcceptanceSettings:
    seed: int = 1
    p_plus: float = 0.3
    workers: int = 1
    gg_observations: int = 10 ** 6
    gg_burn_in: int = 10 ** 5
    n_stationary: int = 5000
    stationary_min_depth: int = 2 ** 10
    stationary_max_depth: int = 2 ** 14
    coupling_pairs: int = 100
    coupling_steps: int = 10 ** 4
    loynes_seeds: int = 1000
    loynes_max_n: int = 200
    residual_triples: int = 1000
    residual_max_n: int = 100
    convergence_seeds: int = 1000
    convergence_atoms: int = 20
    convergence_max_events: int = 10 ** 6
    go_samples: int = 1000
    go_min_depth: int = 2 ** 17
    go_max_depth: int = 2 ** 19
    checkpoints: tuple = (10 ** 4, 10 ** 5, 10 ** 6, 10 ** 7)
    domination_steps: int = 10 ** 4

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("workers")  # does not affect results
        out["checkpoints"] = list(self.checkpoints)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AcceptanceSettings":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown acceptance settings: {sorted(unknown)}")
        kw = dict(data)
        if "checkpoints" in kw:
            kw["checkpoints"] = tuple(int(c) for c in kw["checkpoints"])
        return cls(**kw)


@dataclass
class CriterionResult:
    id: int
    title: str
    passed: bool
    statistics: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        out = {"id": self.id, "title": self.title, "passed": self.passed,
               "statistics": _plain(self.statistics)}
        if self.note:
            out["note"] = self.note
        return out

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.id:2d}. {self.title}"


def _plain(obj):
    """Recursively convert numpy scalars and tuples to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def sub_seed(seed: int, label: str) -> int:
    return replica_seed(seed, zlib.crc32(label.encode()))


def sub_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, label))


# ------------------------------------------------------------- sample sets


@dataclass(frozen=True)
class SampleSetSpec:
    label: str
    policy: PolicySpec
    space: SpaceSpec
    p_plus: float
    n: int
    min_depth: int
    max_depth: int
    density: LocationDensity = field(default_factory=Uniform)
    window: Optional[Region] = None
    accept_fixpoint: bool = False


def _one_sample(spec: SampleSetSpec, seed: int) -> StationarySample:
    block = min(1 << 16, max(1 << 10, spec.max_depth))
    history = EventHistory(StreamSpec(spec.p_plus, spec.density, seed), spec.space,
                           block_size=block, cache_blocks=8)
    return sample_minimal_stationary(history, spec.policy, spec.space, spec.max_depth,
                                     window=spec.window, accept_fixpoint=spec.accept_fixpoint,
                                     min_depth=spec.min_depth)


def _sample_chunk(spec: SampleSetSpec, seeds: list[int]) -> list[StationarySample]:
    return [_one_sample(spec, s) for s in seeds]


def draw_samples(spec: SampleSetSpec, seed: int, workers: int = 1) -> list[StationarySample]:
    """Replica k uses the history seeded by ``replica_seed(sub_seed, k)``;
    results are in replica order whatever the worker count."""
    base = sub_seed(seed, spec.label)
    seeds = [replica_seed(base, k) for k in range(spec.n)]
    if workers <= 1 or spec.n < 2:
        return _sample_chunk(spec, seeds)
    chunks = [seeds[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_sample_chunk, [spec] * workers, chunks))
    out: list[Optional[StationarySample]] = [None] * spec.n
    for w, part in enumerate(parts):
        for j, s in enumerate(part):
            out[w + j * workers] = s
    return out  # type: ignore[return-value]


class SampleCache:
    """Memoizes sample sets within one process."""

    def __init__(self):
        self._sets: dict = {}

    def get(self, spec: SampleSetSpec, settings: AcceptanceSettings) -> list[StationarySample]:
        key = (spec, settings.seed)
        if key not in self._sets:
            self._sets[key] = draw_samples(spec, settings.seed, settings.workers)
        return self._sets[key]


DEFAULT_CACHE = SampleCache()


def _stationary_spec(label, policy, space, s: AcceptanceSettings, density=None) -> SampleSetSpec:
    return SampleSetSpec(label, PolicySpec(policy), space, s.p_plus, s.n_stationary,
                         s.stationary_min_depth, s.stationary_max_depth,
                         density if density is not None else Uniform())


def _certificate_counts(samples: list[StationarySample]) -> dict:
    out = {c.value: 0 for c in Certificate}
    for smp in samples:
        out[smp.certificate.value] += 1
    return out


def _n_certified(samples) -> int:
    return sum(smp.certificate is Certificate.EMPTY_REGENERATION for smp in samples)


def _configs(samples) -> list[Configuration]:
    return [smp.config for smp in samples]


# --------------------------------------------------------------- criteria

TWO_PIECE = PiecewiseConstant((0.0, 5.0, 10.0), (2.0, 1.0))
BALL_CENTERS = ((0.5, 0.5), (2.5, 7.1), (5.0, 5.0), (8.3, 1.9), (9.9, 9.9))


def gg_geometric_law(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    rho = s.p_plus / (1 - s.p_plus)
    eng = Engine(PolicySpec("GG"), INTERVAL)
    history = EventHistory(StreamSpec(s.p_plus, seed=sub_seed(s.seed, "gg")), INTERVAL)
    eng.run(history, 0, s.gg_burn_in)
    rec = TrajectoryRecorder()
    eng.run(history, s.gg_burn_in, s.gg_observations, [rec])
    masses = rec.summaries.masses
    pmf = stats.count_histogram(masses)
    tv = stats.total_variation(pmf, stats.geometric_pmf(rho, len(pmf) - 1))
    p0 = float(pmf[0])
    ratio = float(pmf[1] / pmf[0]) if len(pmf) > 1 else 0.0
    ok = abs(p0 - (1 - rho)) <= 0.005 and tv <= 0.01
    return CriterionResult(1, "GG geometric law on the interval", ok, {
        "observations": masses.size, "p_mass_0": p0, "target_p_mass_0": 1 - rho,
        "tolerance": 0.005, "tv_distance": tv, "tv_threshold": 0.01,
        "ratio_p1_p0": ratio, "target_ratio": rho})


def empty_ball_identity(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    samples = cache.get(_stationary_spec("torus-LG", "LG", TORUS, s), s)
    target = (1 - 2 * s.p_plus) / (1 - s.p_plus)
    n_cert = _n_certified(samples)
    certified = [smp.config for smp in samples if smp.certificate is Certificate.EMPTY_REGENERATION]
    centres = {}
    within = bool(certified)
    for c in BALL_CENTERS:
        row = {}
        if certified:
            est = stats.empty_ball_probability(certified, TORUS, c, 1.0)
            z = est.z_score(target)
            within &= abs(z) <= 3
            row.update(estimate=est.value, stderr=est.stderr, z=z)
        # diagnostic over every sample, whatever its certificate
        est = stats.empty_ball_probability(_configs(samples), TORUS, c, 1.0)
        row.update(all_samples_estimate=est.value, all_samples_z=est.z_score(target))
        centres[str(c)] = row
    enough = n_cert >= s.n_stationary
    note = "" if enough else (
        f"only {n_cert} of {len(samples)} samples carry an emptiness certificate; "
        "all_samples_* entries use every sample and do not enter the verdict")
    return CriterionResult(2, "Empty-ball identity on the torus (LG)", bool(enough and within), {
        "target": target, "samples": len(samples), "certified": n_cert,
        "required_certified": s.n_stationary, "certificates": _certificate_counts(samples),
        "identity_within_3se": bool(within), "centres": centres}, note)


def mass_balance(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    cases = [("torus-LG", "LG", TORUS), ("torus-LR", "LR", TORUS), ("torus-LO", "LO", TORUS),
             ("interval-LG", "LG", INTERVAL)]
    out = {}
    ok = True
    for label, kind, space in cases:
        samples = cache.get(_stationary_spec(label, kind, space, s), s)
        est = stats.mass_balance_deficit(_configs(samples), space, Uniform(), 1, 1.0,
                                         sub_rng(s.seed, "fresh-" + label), s.p_plus,
                                         PolicySpec(kind))
        z = est.z_score(0.0)
        n_cert = _n_certified(samples)
        case_ok = abs(z) <= 3 and n_cert == len(samples)
        ok &= case_ok
        out[label] = {"deficit": est.value, "stderr": est.stderr, "z": z,
                      "certified": n_cert, "samples": len(samples),
                      "identity_within_3se": bool(abs(z) <= 3), "passed": bool(case_ok)}
    return CriterionResult(3, "Mass balance P(kill possible) = p/(1-p)", bool(ok), {
        "target": s.p_plus / (1 - s.p_plus), "cases": out},
        "each case needs every sample certified by emptiness and |z| <= 3")


def _dominated_pair(rng: np.random.Generator, space: SpaceSpec, n_atoms: int = 30,
                    n_dup: int = 5) -> tuple[np.ndarray, np.ndarray]:
    q = rng.random((n_atoms, space.dim)) * space.length_array
    q = np.vstack([q, q[rng.choice(n_atoms, n_dup, replace=False)]])
    p = q[rng.random(q.shape[0]) < 0.5]
    return np.ascontiguousarray(p), np.ascontiguousarray(q)


def monotone_coupling(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    out = {}
    total = 0
    for kind in ("LG", "LR", "LO"):
        policy = PolicySpec(kind)
        args = kernel_args(policy, TORUS)
        rng = sub_rng(s.seed, "pairs-" + kind)
        violations = 0
        for j in range(s.coupling_pairs):
            p0, q0 = _dominated_pair(rng, TORUS)
            history = EventHistory(StreamSpec(s.p_plus, seed=replica_seed(sub_seed(s.seed, "couple-" + kind), j)),
                                   TORUS, block_size=1 << 14)
            blk = history.events(0, s.coupling_steps)
            cap = q0.shape[0] + s.coupling_steps
            P = np.zeros((cap, 2))
            Q = np.zeros((cap, 2))
            P[: p0.shape[0]] = p0
            Q[: q0.shape[0]] = q0
            _, _, v, _ = K.run_pair(P, p0.shape[0], Q, q0.shape[0], blk.kinds, blk.locations,
                                    blk.ties, args.periodic, args.lengths, args.policy,
                                    args.radius, args.cells, args.cells, True)
            violations += v
        out[kind] = violations
        total += violations
    return CriterionResult(4, "Monotone coupling keeps P << Q", total == 0, {
        "pairs": s.coupling_pairs, "steps": s.coupling_steps, "violations": out})


def _policy_space(kind: str) -> SpaceSpec:
    return UNIT_BOX if kind == "GO" else TORUS


def loynes_monotonicity(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    kinds = ("LG", "LR", "LO", "GG", "GO")
    bad = {}
    for kind in kinds:
        policy = PolicySpec(kind)
        space = _policy_space(kind)
        args = kernel_args(policy, space)
        base = sub_seed(s.seed, "loynes-" + kind)
        count = 0
        for j in range(s.loynes_seeds):
            history = EventHistory(StreamSpec(s.p_plus, seed=replica_seed(base, j)), space,
                                   block_size=1 << 10)
            blk = history.events(-(s.loynes_max_n + 1), 0)
            count += K.backward_monotone_violations(blk.kinds, blk.locations, blk.ties, *args)
        bad[kind] = count
    rng = sub_rng(s.seed, "residual")
    failures = 0
    for j in range(s.residual_triples):
        kind = kinds[int(rng.integers(len(kinds)))]
        n = int(rng.integers(1, s.residual_max_n + 1))
        space = _policy_space(kind)
        history = EventHistory(StreamSpec(s.p_plus, seed=int(rng.integers(0, 2 ** 63))), space,
                               block_size=1 << 10)
        failures += not fixed_point_residual(history, PolicySpec(kind), space, n)
    ok = sum(bad.values()) == 0 and failures == 0
    return CriterionResult(5, "Backward iterates increase; one-step fixed point", ok, {
        "seeds": s.loynes_seeds, "max_n": s.loynes_max_n, "depth_violations": bad,
        "residual_triples": s.residual_triples, "residual_failures": failures})


def convergence_coupling(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    policy = PolicySpec("LG")
    base = sub_seed(s.seed, "convergence")
    times = []
    missing = 0
    for j in range(s.convergence_seeds):
        seed = replica_seed(base, j)
        rng = np.random.default_rng(seed)
        B = Configuration(rng.random((s.convergence_atoms, 2)) * TORUS.length_array)
        history = EventHistory(StreamSpec(s.p_plus, seed=seed), TORUS, block_size=1 << 14)
        t = coupling_time(Configuration.empty(2), B, history, 0, policy, TORUS,
                          s.convergence_max_events)
        if t is None:
            missing += 1
        else:
            times.append(t)
    frac = len(times) / s.convergence_seeds
    q = np.percentile(times, [50, 90, 99]).tolist() if times else []
    return CriterionResult(6, "Coalescence of empty and 20-atom starts (LG torus)", frac >= 0.99, {
        "seeds": s.convergence_seeds, "coalesced_fraction": frac, "not_coalesced": missing,
        "max_events": s.convergence_max_events, "quantiles_50_90_99": q,
        "max_time": max(times) if times else None})


def translation_invariance(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    torus = _configs(cache.get(_stationary_spec("torus-LG", "LG", TORUS, s), s))
    rep = stats.translation_invariance_test(torus, TORUS, 100, Region.ball((5.0, 5.0), 1.0),
                                            sub_rng(s.seed, "shifts"))
    interval = _configs(cache.get(_stationary_spec("interval-LG", "LG", INTERVAL, s), s))
    control = stats.translation_invariance_test(interval, INTERVAL, 1, Region.box([0.0], [1.0]),
                                                None, shifts=[[4.5]], allow_nonhomogeneous=True)
    ok = rep.passed and not control.passed
    return CriterionResult(7, "Translation invariance on the torus; boundary effect on the interval",
                           ok, {"torus": rep.to_dict(), "interval_control": control.to_dict()},
                           "the interval control is expected to fail the test")


SYMMETRY_PAIRS = ((0.0, 1.0), (0.5, 2.0), (1.0, 3.0), (2.0, 4.0), (3.0, 4.5))


def interval_symmetry(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    samples = _configs(cache.get(_stationary_spec("interval-LG", "LG", INTERVAL, s), s))
    reps = [stats.reflection_symmetry_test(samples, INTERVAL, a, b) for a, b in SYMMETRY_PAIRS]
    return CriterionResult(8, "Reflection symmetry x -> T - x on the interval",
                           all(r.passed for r in reps),
                           {"pairs": {f"[{a:g},{b:g}]": r.to_dict() for (a, b), r in
                                      zip(SYMMETRY_PAIRS, reps)}})


GO_WINDOW = Region.box([0.1, 0.1], [1.0, 1.0], name="window")
SCALE_REGION = Region.box([0.4, 0.2], [1.0, 1.0])


def go_invariances(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    spec = SampleSetSpec("box-GO", PolicySpec("GO"), UNIT_BOX, s.p_plus, s.go_samples,
                         s.go_min_depth, s.go_max_depth, Uniform(), GO_WINDOW, True)
    samples = cache.get(spec, s)
    cfgs = _configs(samples)
    scale = stats.scale_invariance_test(cfgs, UNIT_BOX, (0.5, 1.0), [SCALE_REGION])
    logw = stats.log_window_stationarity(cfgs, UNIT_BOX, [((0.0, 0.0), (1.0, 1.0))], (1.0, 0.0))
    return CriterionResult(9, "GO scale invariance and log-window stationarity",
                           scale.passed and logw.passed, {
                               "certificates": _certificate_counts(samples),
                               "window": GO_WINDOW.to_dict(),
                               "scale": scale.to_dict(), "log_window": logw.to_dict()},
                           "samples are window restrictions with the heuristic doubling fixpoint")


def _monitor(kind: str, space: SpaceSpec, regions, s: AcceptanceSettings, label: str) -> dict:
    eng = Engine(PolicySpec(kind), space, regions=regions)
    mon = stats.AccumulationMonitor(s.checkpoints, [r.label for r in regions])
    history = EventHistory(StreamSpec(s.p_plus, seed=sub_seed(s.seed, label)), space)
    eng.run(history, 0, s.checkpoints[-1], [mon])
    return mon.report()


def boundary_accumulation(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    go = _monitor("GO", UNIT_BOX, [Region.strip(0.05, "strip"),
                                   Region.box([0.5, 0.5], [1.0, 1.0], "interior")], s, "acc-GO")
    torus_regions = [Region.strip(0.5, "strip"), Region.box([5.0, 5.0], [10.0, 10.0], "interior")]
    lo = _monitor("LO", TORUS, torus_regions, s, "acc-LO")
    lg = _monitor("LG", TORUS, torus_regions, s, "acc-LG")
    lo_interval = _monitor("LO", INTERVAL, [Region.strip(0.5, "strip"),
                                            Region.box([5.0], [10.0], "interior")], s,
                           "acc-LO-interval")

    def grows(rep):
        r = rep["regions"]
        return r["strip"]["accumulates"] and r["interior"]["flat"]

    def settles(rep):
        r = rep["regions"]
        return (not r["strip"]["accumulates"]) and r["strip"]["flat"] and r["interior"]["flat"]

    verdicts = {"GO_box": grows(go), "LO_torus": grows(lo), "LG_torus_stable": settles(lg)}
    return CriterionResult(10, "Boundary accumulation for one-sided policies", all(verdicts.values()), {
        "verdicts": verdicts, "GO_box": go, "LO_torus": lo, "LG_torus": lg,
        "diagnostic_LO_interval": lo_interval,
        "diagnostic_LO_interval_accumulates": grows(lo_interval)},
        "LO on the interval is reported for reference and does not enter the verdict")


def piecewise_domination(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    cells = TWO_PIECE.breakpoints
    true_args = kernel_args(PolicySpec("LG"), INTERVAL)
    mod_args = kernel_args(PolicySpec("LG", cells=cells), INTERVAL)
    history = EventHistory(StreamSpec(s.p_plus, TWO_PIECE, sub_seed(s.seed, "cells")), INTERVAL)
    blk = history.events(0, s.domination_steps)
    cap = s.domination_steps + 1
    P = np.zeros((cap, 1))
    Q = np.zeros((cap, 1))
    _, _, violations, first = K.run_pair(P, 0, Q, 0, blk.kinds, blk.locations, blk.ties,
                                         true_args.periodic,
                                         true_args.lengths, true_args.policy, true_args.radius,
                                         true_args.cells, mod_args.cells, True)
    samples = cache.get(_stationary_spec("interval-LG-2piece", "LG", INTERVAL, s, TWO_PIECE), s)
    est = stats.mass_balance_deficit(_configs(samples), INTERVAL, TWO_PIECE, 1, 1.0,
                                     sub_rng(s.seed, "fresh-2piece"), s.p_plus, PolicySpec("LG"))
    z = est.z_score(0.0)
    n_cert = _n_certified(samples)
    balance_ok = abs(z) <= 3 and n_cert == len(samples)
    return CriterionResult(11, "Cell-restricted dynamics dominates LG; two-piece mass balance",
                           violations == 0 and balance_ok, {
                               "density": TWO_PIECE.to_dict(), "steps": s.domination_steps,
                               "violations": violations, "first_violation_step": first,
                               "mass_balance": {"deficit": est.value, "stderr": est.stderr,
                                                "z": z, "certified": n_cert,
                                                "samples": len(samples)}})


def determinism(s: AcceptanceSettings, cache: SampleCache) -> CriterionResult:
    out = {}
    for suite in ("gg", "interval"):
        a = report_json(run_suite(suite, s, SampleCache()))
        b = report_json(run_suite(suite, s, SampleCache()))
        out[suite] = {"identical": a == b, "bytes": len(a)}
    return CriterionResult(12, "Same seed gives byte-identical reports",
                           all(v["identical"] for v in out.values()), {"suites": out})


CRITERIA: dict[int, Callable[[AcceptanceSettings, SampleCache], CriterionResult]] = {
    1: gg_geometric_law,
    2: empty_ball_identity,
    3: mass_balance,
    4: monotone_coupling,
    5: loynes_monotonicity,
    6: convergence_coupling,
    7: translation_invariance,
    8: interval_symmetry,
    9: go_invariances,
    10: boundary_accumulation,
    11: piecewise_domination,
    12: determinism,
}

SUITES: dict[str, tuple[int, ...]] = {
    "gg": (1,),
    "torus-lg": (2, 6, 7),
    "mass-balance": (3,),
    "coupling": (4, 5),
    "interval": (8, 11),
    "go": (9,),
    "accumulation": (10,),
    "determinism": (12,),
    "all": tuple(range(1, 13)),
}


def run_criterion(cid: int, settings: AcceptanceSettings,
                  cache: Optional[SampleCache] = None) -> CriterionResult:
    return CRITERIA[cid](settings, cache if cache is not None else DEFAULT_CACHE)


def run_suite(name: str, settings: Optional[AcceptanceSettings] = None,
              cache: Optional[SampleCache] = None, on_result=None) -> dict:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    settings = settings or AcceptanceSettings()
    cache = cache if cache is not None else DEFAULT_CACHE
    results = []
    for cid in SUITES[name]:
        res = run_criterion(cid, settings, cache)
        results.append(res)
        if on_result is not None:
            on_result(res)
    return {
        "suite": name,
        "seed": settings.seed,
        "settings": settings.to_dict(),
        "passed": all(r.passed for r in results),
        "criteria": [r.to_dict() for r in results],
    }


def report_json(report: dict) -> str:
    return json.dumps(_plain(report), indent=2, sort_keys=True) + "\n"
