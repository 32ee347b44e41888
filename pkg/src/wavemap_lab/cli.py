"""Configuration, orchestration, and the ``wavemap-lab`` entry point.

Configs are JSON objects (reviewable sweep artifacts); flags are limited to
--config/--out/--jobs/--seed-override.  Exit codes: 0 success, 2 experiment
failure, 3 configuration error.  All numeric output is a pure function of
(config, seed); timestamps live only in the manifest, never in the CSV.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .experiments import EXPERIMENTS, derived_rows, identity_suite, points_for, run_point
from .reporting import ReportRow, rows_to_csv_bytes
from .spectral import TWO_PI, GridSpec

IDENTITY_TOL = 1e-12


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


_EXPERIMENT_DEFAULTS: dict[str, dict] = {
    "lp_checks": dict(T=0.0, k0=1, epsilons=(0.1,), sample_every=1),
    "solver_convergence": dict(T=1.0, k0=1, epsilons=(0.1,), dts=(0.02, 0.01, 0.005), sample_every=1000),
    "gauge_defects": dict(T=1.0, k0=2, k_band=3, epsilons=(0.4, 0.2, 0.1, 0.05), dt=2e-3, sample_every=5),
    "commutator_sweep": dict(T=0.0, k0=1, k_band=3, comm_pairs=100, epsilons=(0.1,), sample_every=1),
    "envelope_stability": dict(T=1.0, k0=2, epsilons=(0.2, 0.1, 0.05, 0.025), dt=2e-3, sample_every=25),
    "renorm_compare": dict(
        T=0.25, k0=0, k_band=4, separation=4, epsilons=(0.4, 0.2, 0.1, 0.05), dt=2.5e-3, sample_every=1
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n: int
    N: int
    m: int = 3
    period: float = TWO_PI
    T: float = 1.0
    dt: float | None = None
    cfl: float = 0.5
    sigma: float = 0.25
    k0: int = 1
    k_band: int | None = None
    separation: int = 4
    epsilons: tuple[float, ...] = (0.1,)
    dts: tuple[float, ...] = ()
    seeds: tuple[int, ...] = (0,)
    sample_every: int = 1
    rough_ratio: float = 1.0 / 32.0
    comm_p: float = 4.0
    comm_q: float = 4.0
    comm_r: float = 2.0
    comm_pairs: int = 100
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        GridSpec(self.n, self.N, period=self.period)  # validates n, N, period
        if not (0.0 < self.sigma < 0.5):
            raise ConfigError(f"sigma must lie in (0, 1/2), got {self.sigma}")
        if self.T < 0.0:
            raise ConfigError("T must be nonnegative")
        if not self.epsilons or any(not (0.0 <= e < 0.5) for e in self.epsilons):
            raise ConfigError("epsilons must be a nonempty list inside [0, 1/2)")
        if self.experiment == "solver_convergence" and not self.dts:
            raise ConfigError("dts sweep must be nonempty for solver_convergence")
        if any(dt <= 0 for dt in self.dts):
            raise ConfigError("dts entries must be positive")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.sample_every < 1:
            raise ConfigError("sample_every must be >= 1")
        if self.comm_pairs < 1:
            raise ConfigError("comm_pairs must be >= 1")
        if not (0.0 < self.rough_ratio <= 1.0):
            raise ConfigError("rough_ratio must lie in (0, 1]")

    def canonical_dict(self) -> dict:
        d = asdict(self)
        for key in ("epsilons", "dts", "seeds"):
            d[key] = list(d[key])
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def run_id(self) -> str:
        return f"{self.experiment}-{self.config_hash()[:12]}"


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} in config")
        seen[key] = value
    return seen


_FIELD_TYPES = {f.name: f for f in fields(ExperimentConfig)}
_LIST_KEYS = {"epsilons", "dts", "seeds"}
_INT_KEYS = {"n", "N", "m", "k0", "k_band", "separation", "sample_every", "comm_pairs"}
_FLOAT_KEYS = {"period", "T", "dt", "cfl", "sigma", "rough_ratio", "comm_p", "comm_q", "comm_r"}


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON experiment config; unknown keys, duplicate
    keys, and values of the wrong type are rejected by name."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(), object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for required in ("experiment", "n", "N"):
        if required not in raw:
            raise ConfigError(f"missing required key {required!r}")

    cooked: dict = {}
    for key, value in raw.items():
        if key in _LIST_KEYS:
            if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
                raise ConfigError(f"key {key!r} must be a list of numbers")
            cooked[key] = tuple(int(v) for v in value) if key == "seeds" else tuple(float(v) for v in value)
        elif key in _INT_KEYS:
            if value is not None and (not isinstance(value, int) or isinstance(value, bool)):
                raise ConfigError(f"key {key!r} must be an integer, got {value!r}")
            cooked[key] = value
        elif key in _FLOAT_KEYS:
            if value is not None and not isinstance(value, (int, float)):
                raise ConfigError(f"key {key!r} must be a number, got {value!r}")
            cooked[key] = None if value is None else float(value)
        elif key == "experiment":
            if not isinstance(value, str):
                raise ConfigError("key 'experiment' must be a string")
            cooked[key] = value
        elif key == "out_dir":
            if value is not None and not isinstance(value, str):
                raise ConfigError("key 'out_dir' must be a string")
            cooked[key] = value

    experiment = cooked.get("experiment")
    if experiment in _EXPERIMENT_DEFAULTS:
        for key, value in _EXPERIMENT_DEFAULTS[experiment].items():
            cooked.setdefault(key, value)
    try:
        return ExperimentConfig(**cooked)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    code_version: str
    started_at: str
    finished_at: str
    emitted_files: list[str]
    complete: bool
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _run_point_job(args):
    cfg, point = args
    return run_point(cfg, point)


def run(
    config: ExperimentConfig,
    out_dir=None,
    jobs: int = 1,
    seed_override: int | None = None,
) -> tuple[RunManifest, Path]:
    """Execute the experiment sweep, write CSV/JSON artifacts and a manifest.

    Output lands in <out>/<run_id>/; sweep points execute in a process pool
    when jobs > 1, but rows are collected in submission order so the CSV body
    is identical regardless of parallelism.
    """
    if seed_override is not None:
        config = config_from_dict({**config.canonical_dict(), "seeds": [seed_override]})
    base = Path(
        out_dir
        or config.out_dir
        or os.environ.get("WAVEMAP_LAB_OUT")
        or "runs"
    )
    run_id = config.run_id()
    run_dir = base / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    started = _utcnow()

    points = points_for(config)
    rows: list[ReportRow] = []
    error: str | None = None
    try:
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                for result in pool.map(_run_point_job, [(config, p) for p in points]):
                    rows.extend(result)
        else:
            for point in points:
                rows.extend(run_point(config, point))
        rows.extend(derived_rows(config, rows))
    except Exception as exc:  # noqa: BLE001 - reported via manifest + exit code
        error = f"{type(exc).__name__}: {exc}"

    for row in rows:
        row.run_id = run_id

    emitted = []
    csv_path = run_dir / "results.csv"
    csv_path.write_bytes(rows_to_csv_bytes(rows))
    emitted.append(str(csv_path))

    summary = {
        "run_id": run_id,
        "config": config.canonical_dict(),
        "quantities": {},
    }
    for row in rows:
        summary["quantities"].setdefault(row.quantity, row.value)
    summary_path = run_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    emitted.append(str(summary_path))

    manifest = RunManifest(
        run_id=run_id,
        config_hash=config.config_hash(),
        code_version=__version__,
        started_at=started,
        finished_at=_utcnow(),
        emitted_files=emitted,
        complete=error is None,
        error=error,
    )
    manifest_path = run_dir / "manifest.json"
    manifest_path.write_text(manifest.to_json())
    if error is not None:
        raise ExperimentError(error)
    return manifest, run_dir


def check(argv_grids: list[tuple[int, int]] | None = None, out=None) -> int:
    """Run the exact-identity suite and print one pass/fail line per
    identity; nonzero exit on any failure."""
    out = out if out is not None else sys.stdout
    grids = argv_grids or [(2, 32), (5, 12)]
    failures = 0
    for n, N in grids:
        for name, residual in identity_suite(GridSpec(n, N)):
            ok = residual <= IDENTITY_TOL
            failures += 0 if ok else 1
            status = "PASS" if ok else "FAIL"
            print(f"[{status}] {n}d N={N} {name}: {residual:.3e} (tol {IDENTITY_TOL})", file=out)
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wavemap-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("--config", required=True, help="path to a JSON experiment config")
    run_p.add_argument("--out", default=None, help="output directory (default: $WAVEMAP_LAB_OUT or ./runs)")
    run_p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")
    run_p.add_argument("--seed-override", type=int, default=None, help="replace the config's seed list")

    sub.add_parser("check", help="run the exact-identity suite (32^2 and 12^5 grids)")

    args = parser.parse_args(argv)
    if args.command == "check":
        return check()

    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    try:
        manifest, run_dir = run(config, out_dir=args.out, jobs=args.jobs, seed_override=args.seed_override)
    except ExperimentError as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    print(f"run {manifest.run_id} complete: {run_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
