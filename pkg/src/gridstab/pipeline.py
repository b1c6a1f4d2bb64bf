"""End-to-end experiment runner: optimize every method, test every plan on a
grid of damping-noise levels, write per-cell artifacts and a manifest."""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (
    CRITICAL_PERCENTS,
    DEFAULT_GRID,
    Channels,
    ReportCell,
    compare_report,
    critical_lambda,
    histogram,
    quantile_curve,
    report_json,
    test_plan,
)
from .case import PowerSystemCase, default_uncertainty, load_case
from .network import network_from_case
from .optimize import (
    AnnealingSchedule,
    DampingPlan,
    NoisyObjectiveConfig,
    optimize_beta_distinct,
    optimize_beta_equal,
    optimize_beta_uncertain,
)
from .uncertainty import InstanceBank, SeededSampler, UncertaintySpec, derive_seed

SCHEMA_VERSION = 1
METHODS = ("equal", "distinct", "uncertain")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    case: Path
    dynamics: Path
    uncertainty: UncertaintySpec | None  # None: resolution-derived default
    methods: dict[str, dict]
    sigma_opt: list[float]
    sigma_test: list[float]
    channels: list[Channels]
    draws: int
    seed: int
    output: Path
    quantile_grid: list[float] = field(default_factory=lambda: list(DEFAULT_GRID))
    critical_percents: list[float] = field(default_factory=lambda: list(CRITICAL_PERCENTS))
    histogram_bin_width: float = 0.05
    nonconvergent_threshold: float = 0.01
    source: Path | None = None

    def validate(self) -> None:
        for label, path in (("case", self.case), ("dynamics", self.dynamics)):
            if not path.is_file():
                raise ConfigError(f"{label} file not found: {path}")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {sorted(self.methods)}")
        if any(s < 0 for s in self.sigma_opt + self.sigma_test):
            raise ConfigError("sigma values must be >= 0")
        if "uncertain" in self.methods and not self.sigma_opt:
            raise ConfigError("the uncertain method needs at least one sigma_opt")
        if not self.sigma_test or not self.channels:
            raise ConfigError("sigma_test and channels must be non-empty")
        if self.draws < 1:
            raise ConfigError("draws must be >= 1")
        if not self.histogram_bin_width > 0:
            raise ConfigError("histogram_bin_width must be > 0")

    def to_dict(self) -> dict:
        base = self.source.parent if self.source else Path.cwd()
        return {
            "schema_version": SCHEMA_VERSION,
            "case": _rel(self.case, base),
            "dynamics": _rel(self.dynamics, base),
            "uncertainty": None if self.uncertainty is None else self.uncertainty.to_dict(),
            "methods": self.methods,
            "sigma_opt": self.sigma_opt,
            "sigma_test": self.sigma_test,
            "channels": [c.value for c in self.channels],
            "draws": self.draws,
            "seed": self.seed,
            "output": _rel(self.output, base),
            "quantile_grid": self.quantile_grid,
            "critical_percents": self.critical_percents,
            "histogram_bin_width": self.histogram_bin_width,
            "nonconvergent_threshold": self.nonconvergent_threshold,
        }


def _rel(path: Path, base: Path) -> str:
    try:
        return str(path.resolve().relative_to(base.resolve()))
    except ValueError:
        return str(path)


def config_from_dict(data: dict, base: Path | None = None, source: Path | None = None) -> ExperimentConfig:
    base = base or Path.cwd()
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    required = ("case", "dynamics", "methods", "sigma_test", "draws", "seed")
    missing = [k for k in required if k not in data]
    if missing:
        raise ConfigError(f"config is missing {missing}")
    unc = data.get("uncertainty")
    try:
        cfg = ExperimentConfig(
            case=base / data["case"],
            dynamics=base / data["dynamics"],
            uncertainty=None if unc in (None, "default") else UncertaintySpec.from_dict(unc),
            methods={str(k): dict(v or {}) for k, v in data["methods"].items()},
            sigma_opt=[float(s) for s in data.get("sigma_opt", [])],
            sigma_test=[float(s) for s in data["sigma_test"]],
            channels=[Channels.parse(c) for c in data.get("channels", ["full"])],
            draws=int(data["draws"]),
            seed=int(data["seed"]),
            output=base / data.get("output", "results"),
            quantile_grid=[float(q) for q in data.get("quantile_grid", DEFAULT_GRID)],
            critical_percents=[float(p) for p in data.get("critical_percents", CRITICAL_PERCENTS)],
            histogram_bin_width=float(data.get("histogram_bin_width", 0.05)),
            nonconvergent_threshold=float(data.get("nonconvergent_threshold", 0.01)),
            source=source,
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data, base=path.parent, source=path)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _sigma_tag(s: float) -> str:
    return repr(float(s))


def cell_dir(method: str, sigma_opt: float | None, sigma_test: float, channels: Channels) -> str:
    opt = "na" if sigma_opt is None else _sigma_tag(sigma_opt)
    return f"{method}_opt-{opt}_test-{_sigma_tag(sigma_test)}_{channels.value}"


@dataclass
class PipelineResult:
    output: Path
    manifest: dict
    cells: list[ReportCell]
    plans: dict[str, DampingPlan]
    max_nonconvergent_fraction: float

    @property
    def partial(self) -> bool:
        return self.max_nonconvergent_fraction > self.manifest["nonconvergent_threshold"]


def _write(path: Path, text: str, artifacts: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    artifacts[str(path.relative_to(artifacts["__root__"]))] = hashlib.sha256(text.encode()).hexdigest()


def _optimize(
    cfg: ExperimentConfig, case: PowerSystemCase, spec: UncertaintySpec, jobs: int, log
) -> tuple[dict[str, DampingPlan], dict]:
    net = network_from_case(case)
    plans: dict[str, DampingPlan] = {}
    seeds: dict = {}
    equal = optimize_beta_equal(net)
    if "equal" in cfg.methods:
        plans["equal"] = equal
    if "distinct" in cfg.methods:
        settings = cfg.methods["distinct"]
        schedule = AnnealingSchedule.from_dict(settings.get("schedule", {}))
        restarts = int(settings.get("restarts", 10))
        best = None
        run_seeds = []
        for r in range(restarts):
            seed = derive_seed(cfg.seed, "distinct", r)
            run_seeds.append(seed)
            plan = optimize_beta_distinct(net, schedule, SeededSampler(seed))
            log(f"distinct restart {r}: lambda_L = {plan.provenance['lambda_L']:.6f}")
            if best is None or plan.provenance["lambda_L"] < best.provenance["lambda_L"]:
                best = plan
        best.provenance["restart_seeds"] = run_seeds
        plans["distinct"] = best
        seeds["distinct"] = run_seeds
    if "uncertain" in cfg.methods:
        settings = cfg.methods["uncertain"]
        schedule = AnnealingSchedule.from_dict(settings.get("schedule", {}))
        objective = NoisyObjectiveConfig.from_dict(settings.get("objective", {}))
        for s in cfg.sigma_opt:
            seed = derive_seed(cfg.seed, "uncertain", _sigma_tag(s))
            plan = optimize_beta_uncertain(
                case, spec.with_beta_sigma(s), objective, schedule, SeededSampler(seed), initial=equal, jobs=jobs
            )
            log(f"uncertain sigma={s:g}: phi = {plan.provenance['phi_confirmed']:.6f}")
            plans[f"uncertain@{_sigma_tag(s)}"] = plan
            seeds[f"uncertain@{_sigma_tag(s)}"] = seed
    return plans, seeds


def run_pipeline(cfg: ExperimentConfig, jobs: int = 1, log=lambda msg: None) -> PipelineResult:
    """Run every stage; on failure the manifest records the failed stage."""
    started = time.time()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {"__root__": out}
    timing: dict[str, float] = {}
    test_seed = derive_seed(cfg.seed, "test")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "inputs": {
            "case": sha256_file(cfg.case),
            "dynamics": sha256_file(cfg.dynamics),
        },
        "seeds": {"root": cfg.seed, "test": test_seed},
        "versions": {
            "gridstab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "nonconvergent_threshold": cfg.nonconvergent_threshold,
    }
    if cfg.source is not None:
        manifest["inputs"]["config"] = sha256_file(cfg.source)
    stage = "load"
    cells: list[ReportCell] = []
    plans: dict[str, DampingPlan] = {}
    worst = 0.0
    try:
        t = time.time()
        case = load_case(cfg.case, cfg.dynamics)
        spec = cfg.uncertainty or default_uncertainty(case)
        timing[stage] = time.time() - t

        stage = "optimize"
        t = time.time()
        plans, opt_seeds = _optimize(cfg, case, spec, jobs, log)
        manifest["seeds"]["optimize"] = opt_seeds
        for name, plan in plans.items():
            _write(out / "plans" / f"{name.replace('@', '_opt-')}.json", plan.to_json() + "\n", artifacts)
        timing[stage] = time.time() - t

        stage = "evaluate"
        t = time.time()
        sampler = SeededSampler(test_seed)
        bank = InstanceBank(case, spec, sampler)
        for name, plan in plans.items():
            method, _, opt = name.partition("@")
            sigma_opt = float(opt) if opt else None
            for s in cfg.sigma_test:
                for ch in cfg.channels:
                    dist = test_plan(case, plan, spec.with_beta_sigma(s), ch, cfg.draws, sampler, bank=bank, jobs=jobs)
                    worst = max(worst, dist.nonconvergent_fraction)
                    curve = quantile_curve(dist, cfg.quantile_grid)
                    crit = critical_lambda(dist, cfg.critical_percents)
                    d = out / "cells" / cell_dir(method, sigma_opt, s, ch)
                    _write(d / "distribution.csv", dist.to_csv(), artifacts)
                    _write(d / "quantiles.csv", _rows_csv(["quantile", "lambda_L"], curve.to_rows()), artifacts)
                    _write(
                        d / "histogram.csv",
                        _rows_csv(["bin_center", "count"], histogram(dist, cfg.histogram_bin_width)),
                        artifacts,
                    )
                    crit_doc = {
                        "critical": [{"percent": c.percent, "lambda_c": c.value} for c in crit],
                        "requested": dist.requested,
                        "nonconvergent": dist.nonconvergent,
                    }
                    _write(d / "critical.json", json.dumps(crit_doc, indent=2, sort_keys=True) + "\n", artifacts)
                    cells.append(
                        ReportCell(
                            method, sigma_opt, s, ch.value, curve, crit,
                            dist.requested, dist.nonconvergent, test_seed,
                        )
                    )
                    log(f"tested {name} at sigma={s:g} ({ch.value}): lambda_c(95) = {crit[0].value:.4f}")
        timing[stage] = time.time() - t

        stage = "report"
        doc, table = compare_report(cells)
        _write(out / "report.json", report_json(doc) + "\n", artifacts)
        _write(out / "summary.csv", table, artifacts)
        _write(out / "critical_table.csv", critical_table(cells, cfg.critical_percents), artifacts)
    except Exception as exc:
        manifest["failed_stage"] = stage
        _finish_manifest(out, manifest, artifacts, timing, started)
        raise PipelineError(stage, exc) from exc
    manifest["max_nonconvergent_fraction"] = worst
    _finish_manifest(out, manifest, artifacts, timing, started)
    return PipelineResult(out, manifest, cells, plans, worst)


def critical_table(cells: list[ReportCell], percents) -> str:
    """Critical values per (σ, method) for full-channel tests where the
    optimization noise level matches the test level (or does not apply)."""
    rows = []
    for c in cells:
        if c.channels != Channels.FULL.value:
            continue
        if c.sigma_opt is not None and c.sigma_opt != c.sigma_test:
            continue
        rows.append([repr(c.sigma_test), c.method] + [f"{x.value:.6f}" for x in c.criticals])
    rows.sort(key=lambda r: (-float(r[0]), METHODS.index(r[1])))
    header = ["sigma", "method"] + [f"lc{int(p) if float(p).is_integer() else p}" for p in percents]
    return _rows_csv(header, rows)


def _rows_csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(v) for v in row))
    return "\n".join(lines) + "\n"


def _finish_manifest(out: Path, manifest: dict, artifacts: dict, timing: dict, started: float) -> None:
    manifest["artifacts"] = {k: v for k, v in sorted(artifacts.items()) if k != "__root__"}
    manifest["timing_seconds"] = {**{k: round(v, 3) for k, v in timing.items()}, "total": round(time.time() - started, 3)}
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
