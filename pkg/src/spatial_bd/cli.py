"""Command-line experiment runner.

    spatial-bd simulate   --config run.toml [--seed N] [--out DIR]
    spatial-bd stationary --config run.toml [--seed N] [--workers N] [--out DIR]
    spatial-bd couple     --config run.toml [--seed N] [--workers N] [--out DIR]
    spatial-bd acceptance [--config run.toml] [--suite NAME] [--seed N] [--out DIR]

The configuration is a TOML file; see README.md for the schema. Exit status
is 0 on success, 1 when an acceptance criterion fails and 2 on invalid input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import acceptance
from .configuration import Configuration
from .dynamics import (
    CSVTrajectoryWriter,
    EventHistory,
    Region,
    StreamSpec,
    Engine,
    replica_seed,
)
from .geometry import SpaceSpec, check_density
from .loynes import DEFAULT_MAX_DEPTH, Certificate, coupling_time, sample_minimal_stationary
from .policies import PolicySpec, compatibility_errors

MODES = ("simulate", "stationary", "couple", "acceptance")
EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class InitialSpec:
    """Explicit points, or ``uniform`` i.i.d. uniform atoms drawn from the seed."""

    points: tuple = ()
    uniform: int = 0

    @classmethod
    def parse(cls, raw) -> "InitialSpec":
        if raw is None:
            return cls()
        if isinstance(raw, dict):
            return cls(uniform=int(raw.get("uniform", 0)))
        return cls(points=tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in raw))

    def build(self, space: SpaceSpec, rng: np.random.Generator) -> Configuration:
        if self.uniform:
            return Configuration(rng.random((self.uniform, space.dim)) * space.length_array,
                                 dim=space.dim)
        if not self.points:
            return Configuration.empty(space.dim)
        return Configuration(np.asarray(self.points, dtype=float).reshape(-1, space.dim),
                             dim=space.dim)

    def to_dict(self):
        if self.uniform:
            return {"uniform": self.uniform}
        return [list(p) for p in self.points]


@dataclass(frozen=True)
class ForwardMode:
    n_events: int = 1000
    start_index: int = 0
    initial: InitialSpec = field(default_factory=InitialSpec)
    trajectory: bool = True


@dataclass(frozen=True)
class StationaryMode:
    max_depth: int = DEFAULT_MAX_DEPTH
    min_depth: int = 1
    replicas: int = 1
    accept_fixpoint: bool = True
    window: Optional[Region] = None


@dataclass(frozen=True)
class CoupleMode:
    initial_a: InitialSpec = field(default_factory=InitialSpec)
    initial_b: InitialSpec = field(default_factory=InitialSpec)
    max_events: int = 10 ** 6
    replicas: int = 1


@dataclass(frozen=True)
class AcceptanceMode:
    suite: str = "all"
    settings: dict = field(default_factory=dict)


Mode = Union[ForwardMode, StationaryMode, CoupleMode, AcceptanceMode]


@dataclass(frozen=True)
class ExperimentConfig:
    space: SpaceSpec
    policy: PolicySpec
    stream: StreamSpec
    mode: Mode
    output: str = "out"
    regions: tuple = ()
    seed: int = 0
    workers: int = 1

    @property
    def mode_name(self) -> str:
        return {ForwardMode: "simulate", StationaryMode: "stationary", CoupleMode: "couple",
                AcceptanceMode: "acceptance"}[type(self.mode)]

    def to_dict(self) -> dict:
        """Resolved configuration embedded in every output (workers excluded:
        results do not depend on it)."""
        m = self.mode
        if isinstance(m, ForwardMode):
            mode = {"n_events": m.n_events, "start_index": m.start_index,
                    "initial": m.initial.to_dict(), "trajectory": m.trajectory}
        elif isinstance(m, StationaryMode):
            mode = {"max_depth": m.max_depth, "min_depth": m.min_depth, "replicas": m.replicas,
                    "accept_fixpoint": m.accept_fixpoint}
            if m.window is not None:
                mode["window"] = m.window.to_dict()
        elif isinstance(m, CoupleMode):
            mode = {"initial_a": m.initial_a.to_dict(), "initial_b": m.initial_b.to_dict(),
                    "max_events": m.max_events, "replicas": m.replicas}
        else:
            mode = {"suite": m.suite, "settings": dict(m.settings)}
        stream = self.stream.to_dict()
        stream.pop("seed")
        return {
            "mode": self.mode_name,
            self.mode_name: mode,
            "seed": self.seed,
            "space": self.space.to_dict(),
            "policy": self.policy.to_dict(),
            "stream": stream,
            "regions": [r.to_dict() for r in self.regions],
        }


_DEFAULTS = {
    "space": {"kind": "torus", "lengths": [10.0, 10.0]},
    "policy": {"kind": "LG"},
    "stream": {"p_plus": 0.3},
}


def parse_config(data: dict, mode: str, seed: Optional[int] = None,
                 out: Optional[str] = None, workers: int = 1) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed TOML document and CLI overrides."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    try:
        space = SpaceSpec.from_dict(data.get("space", _DEFAULTS["space"]))
        policy = PolicySpec.from_dict(data.get("policy", _DEFAULTS["policy"]))
        stream_raw = dict(data.get("stream", _DEFAULTS["stream"]))
        stream_raw.pop("seed", None)
        stream = StreamSpec.from_dict(stream_raw)
        regions = tuple(Region.from_dict(r) for r in data.get("regions", []))
        section = dict(data.get(mode, {}))
        if mode == "simulate":
            m: Mode = ForwardMode(int(section.get("n_events", 1000)),
                                  int(section.get("start_index", 0)),
                                  InitialSpec.parse(section.get("initial")),
                                  bool(section.get("trajectory", True)))
        elif mode == "stationary":
            window = section.get("window")
            m = StationaryMode(int(section.get("max_depth", DEFAULT_MAX_DEPTH)),
                               int(section.get("min_depth", 1)),
                               int(section.get("replicas", 1)),
                               bool(section.get("accept_fixpoint", True)),
                               Region.from_dict(window) if window else None)
        elif mode == "couple":
            m = CoupleMode(InitialSpec.parse(section.get("initial_a")),
                           InitialSpec.parse(section.get("initial_b")),
                           int(section.get("max_events", 10 ** 6)),
                           int(section.get("replicas", 1)))
        else:
            m = AcceptanceMode(str(section.get("suite", "all")), dict(section.get("settings", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    seed = int(data.get("seed", 0)) if seed is None else int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return ExperimentConfig(space, policy, stream.with_seed(seed), m,
                            out if out is not None else str(data.get("output", "out")),
                            regions, seed, max(1, int(workers)))


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


# -------------------------------------------------------------- validation


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.message}"


def validate(config: ExperimentConfig) -> list[Diagnostic]:
    """Structural and domain checks; never raises."""
    diags = [Diagnostic("error", e) for e in compatibility_errors(config.policy, config.space)]
    try:
        check_density(config.space, config.stream.density)
    except ValueError as exc:
        diags.append(Diagnostic("error", str(exc)))
    m = config.mode
    if isinstance(m, (StationaryMode, AcceptanceMode)) and config.stream.p_plus >= 0.5:
        diags.append(Diagnostic("warning",
                                f"p_plus = {config.stream.p_plus} >= 1/2: stability is only "
                                "guaranteed below 1/2"))
    if isinstance(m, ForwardMode) and m.n_events < 0:
        diags.append(Diagnostic("error", "n_events must be nonnegative"))
    if isinstance(m, StationaryMode):
        if m.max_depth < 1:
            diags.append(Diagnostic("error", "max_depth must be >= 1"))
        if m.min_depth > m.max_depth:
            diags.append(Diagnostic("error", "min_depth exceeds max_depth"))
        if m.replicas < 1:
            diags.append(Diagnostic("error", "replicas must be >= 1"))
    if isinstance(m, CoupleMode):
        if m.max_events < 0:
            diags.append(Diagnostic("error", "max_events must be nonnegative"))
        if m.replicas < 1:
            diags.append(Diagnostic("error", "replicas must be >= 1"))
    if isinstance(m, AcceptanceMode):
        if m.suite not in acceptance.SUITES:
            diags.append(Diagnostic("error", f"unknown suite {m.suite!r}"))
        try:
            acceptance.AcceptanceSettings.from_dict(m.settings)
        except (TypeError, ValueError) as exc:
            diags.append(Diagnostic("error", str(exc)))
    for r in config.regions:
        diags.extend(_region_diagnostics(r, config.space))
    if isinstance(m, StationaryMode) and m.window is not None:
        diags.extend(_region_diagnostics(m.window, config.space))
    return diags


def _region_diagnostics(region: Region, space: SpaceSpec) -> list[Diagnostic]:
    d = space.dim
    L = np.asarray(space.lengths)
    if region.kind == "ball":
        if len(region.center) != d:
            return [Diagnostic("error", f"region {region.label}: centre has wrong dimension")]
        if not space.contains(region.center):
            return [Diagnostic("error", f"region {region.label}: centre lies outside the space")]
    elif region.kind == "box":
        lo, hi = np.asarray(region.lower), np.asarray(region.upper)
        if lo.shape != (d,) or hi.shape != (d,):
            return [Diagnostic("error", f"region {region.label}: bounds have wrong dimension")]
        if np.any(lo > hi) or np.any(lo < 0) or np.any(hi > L):
            return [Diagnostic("error", f"region {region.label}: box is not inside the space")]
    elif region.delta <= 0:
        return [Diagnostic("error", f"region {region.label}: strip width must be positive")]
    return []


# ----------------------------------------------------------------- outputs


def _header(config: ExperimentConfig) -> str:
    return "# " + json.dumps(config.to_dict(), sort_keys=True) + "\n"


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _dump_json(path: str, obj: dict) -> None:
    _write(path, json.dumps(acceptance._plain(obj), indent=2, sort_keys=True) + "\n")


def _config_csv(config: ExperimentConfig, cfg: Configuration) -> str:
    return _header(config) + cfg.to_csv()


def _run_simulate(config: ExperimentConfig) -> int:
    m: ForwardMode = config.mode  # type: ignore[assignment]
    rng = np.random.default_rng(replica_seed(config.seed, 1))
    initial = m.initial.build(config.space, rng)
    stream = config.stream.with_seed(replica_seed(config.seed, 0))
    history = EventHistory(stream, config.space)
    eng = Engine(config.policy, config.space, initial, config.regions)
    traj_buf = io.StringIO()
    observers = []
    if m.trajectory:
        traj_buf.write(_header(config))
        observers.append(CSVTrajectoryWriter(traj_buf, config.space.dim,
                                             [r.label for r in config.regions]))
    last_empty = eng.run(history, m.start_index, m.n_events, observers)
    final = eng.configuration()
    _write(os.path.join(config.output, "final.csv"), _config_csv(config, final))
    if m.trajectory:
        _write(os.path.join(config.output, "trajectory.csv"), traj_buf.getvalue())
    _dump_json(os.path.join(config.output, "run.json"), {
        "config": config.to_dict(), "stream_seed": stream.seed, "final_mass": final.total_mass,
        "last_empty_index": last_empty,
        "region_counts": {r.label: int(c) for r, c in zip(config.regions, eng.counts)}})
    print(f"simulated {m.n_events} events; final mass {final.total_mass}")
    return EXIT_OK


def _stationary_replica(config: ExperimentConfig, k: int):
    m: StationaryMode = config.mode  # type: ignore[assignment]
    seed = replica_seed(config.seed, k)
    history = EventHistory(config.stream.with_seed(seed), config.space)
    smp = sample_minimal_stationary(history, config.policy, config.space, m.max_depth,
                                    window=m.window, accept_fixpoint=m.accept_fixpoint,
                                    min_depth=m.min_depth)
    return seed, smp


def _stationary_chunk(config: ExperimentConfig, ks: list[int]):
    return [_stationary_replica(config, k) for k in ks]


def _couple_replica(config: ExperimentConfig, k: int):
    m: CoupleMode = config.mode  # type: ignore[assignment]
    seed = replica_seed(config.seed, k)
    rng = np.random.default_rng(seed)
    a = m.initial_a.build(config.space, rng)
    b = m.initial_b.build(config.space, rng)
    history = EventHistory(config.stream.with_seed(seed), config.space)
    return seed, coupling_time(a, b, history, 0, config.policy, config.space, m.max_events)


def _couple_chunk(config: ExperimentConfig, ks: list[int]):
    return [_couple_replica(config, k) for k in ks]


def _map_replicas(fn, config: ExperimentConfig, n: int) -> list:
    """Results in replica order; the worker count never changes them."""
    w = min(config.workers, n)
    if w <= 1:
        return fn(config, list(range(n)))
    chunks = [list(range(i, n, w)) for i in range(w)]
    with ProcessPoolExecutor(max_workers=w) as pool:
        parts = list(pool.map(fn, [config] * w, chunks))
    out = [None] * n
    for i, part in enumerate(parts):
        for j, res in enumerate(part):
            out[i + j * w] = res
    return out


def _run_stationary(config: ExperimentConfig) -> int:
    m: StationaryMode = config.mode  # type: ignore[assignment]
    results = _map_replicas(_stationary_chunk, config, m.replicas)
    counts = {c.value: 0 for c in Certificate}
    agree = {"both": 0, "emptiness_only": 0}
    for k, (seed, smp) in enumerate(results):
        stem = os.path.join(config.output, f"stationary_{k:04d}")
        _write(stem + ".csv", _config_csv(config, smp.config))
        _dump_json(stem + ".json", {**smp.to_dict(), "replica": k, "seed": seed,
                                    "policy": config.policy.to_dict(),
                                    "space": config.space.to_dict(), "mass": smp.config.total_mass,
                                    "config": config.to_dict()})
        counts[smp.certificate.value] += 1
        if smp.certificate is Certificate.EMPTY_REGENERATION and smp.fixpoint_agrees is not None:
            agree["both" if smp.fixpoint_agrees else "emptiness_only"] += 1
    _dump_json(os.path.join(config.output, "summary.json"), {
        "config": config.to_dict(), "replicas": m.replicas, "certificates": counts,
        "certificate_agreement": agree})
    print(f"{m.replicas} stationary sample(s): " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    return EXIT_OK


def _run_couple(config: ExperimentConfig) -> int:
    m: CoupleMode = config.mode  # type: ignore[assignment]
    results = _map_replicas(_couple_chunk, config, m.replicas)
    buf = io.StringIO()
    buf.write(_header(config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replica", "seed", "coupling_time"])
    times = []
    for k, (seed, t) in enumerate(results):
        w.writerow([k, seed, "" if t is None else t])
        if t is not None:
            times.append(t)
    _write(os.path.join(config.output, "coupling.csv"), buf.getvalue())
    summary = {"config": config.to_dict(), "replicas": m.replicas, "coupled": len(times),
               "not_coupled": m.replicas - len(times)}
    if times:
        summary["quantiles"] = dict(zip(["q50", "q90", "q99", "max"],
                                        np.percentile(times, [50, 90, 99, 100]).tolist()))
    _dump_json(os.path.join(config.output, "coupling.json"), summary)
    print(f"coupled {len(times)} of {m.replicas} replica(s) within {m.max_events} events")
    return EXIT_OK


def _run_acceptance(config: ExperimentConfig) -> int:
    m: AcceptanceMode = config.mode  # type: ignore[assignment]
    settings = acceptance.AcceptanceSettings.from_dict(
        {**m.settings, "seed": config.seed, "workers": config.workers})
    report = acceptance.run_suite(m.suite, settings, on_result=lambda r: print(r.line(), flush=True))
    report["config"] = config.to_dict()
    path = os.path.join(config.output, f"acceptance_{m.suite}.json")
    _write(path, acceptance.report_json(report))
    print(f"report written to {path}")
    return EXIT_OK if report["passed"] else EXIT_FAILED


def run(config: ExperimentConfig) -> int:
    """Execute the configured mode and write its outputs."""
    diags = validate(config)
    for d in diags:
        print(d, file=sys.stderr)
    if any(d.level == "error" for d in diags):
        return EXIT_INVALID
    try:
        os.makedirs(config.output, exist_ok=True)
        if not os.access(config.output, os.W_OK):
            raise OSError(f"{config.output} is not writable")
    except OSError as exc:
        print(f"error: cannot use output directory: {exc}", file=sys.stderr)
        return EXIT_INVALID
    runner = {"simulate": _run_simulate, "stationary": _run_stationary,
              "couple": _run_couple, "acceptance": _run_acceptance}[config.mode_name]
    return runner(config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatial-bd",
                                     description="Spatial birth-death simulator and stationary sampler.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for name, help_text in [("simulate", "run the forward recursion"),
                            ("stationary", "sample minimal stationary configurations"),
                            ("couple", "measure coupling times of two initial configurations"),
                            ("acceptance", "run an acceptance suite")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--seed", type=int, help="global seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, default=1, help="replica worker processes")
        p.add_argument("--out", help="output directory")
        if name == "acceptance":
            p.add_argument("--suite", choices=sorted(acceptance.SUITES),
                           help="suite name (overrides the configuration)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        data = load_config(args.config)
        if args.mode == "acceptance" and args.suite:
            data = {**data, "acceptance": {**data.get("acceptance", {}), "suite": args.suite}}
        config = parse_config(data, args.mode, args.seed, args.out, args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
