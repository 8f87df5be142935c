"""Experiment configuration and paired multistart campaigns.

Configs are YAML mappings.  Top-level keys::

    model: transmon | two-level | custom
    model_file: path to an .npz with drift, controls, projector, target
    durations: [200.0]          # or a scalar under ``duration``
    dt: 2.0                     # step length; two-level defaults to N = 2
    modes: [newton-exact-hessian, bfgs]
    seeds: 25
    base_seed: 0
    workers: 1
    output: results
    backend: diagonalization | taylor
    taylor_order: 12
    bounds: [lo, hi]            # same box for every control
    histogram_edges: [...]      # log-spaced decades by default
    optimizer: {...}            # OptimizerConfig fields except ``mode``
    transmon: {...}             # TransmonParams fields, GHz

Times are in ns for the transmon and dimensionless for the two-level model.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import models
from .objective import DIAGONALIZATION, TAYLOR, BilinearSystem, ControlPulse, GateObjective
from .optimize import MODES, CampaignResult, OptimizerConfig, SeedRecord, multistart, with_mode

logger = logging.getLogger(__name__)

MODEL_NAMES = ("transmon", "two-level", "custom")
TWO_LEVEL_BOUND = 5.0
DEFAULT_EDGES = tuple(10.0 ** np.arange(-14, 1))
_OPT_FIELDS = {f.name for f in dataclasses.fields(OptimizerConfig)} - {"mode"}
_TRANSMON_FIELDS = {f.name for f in dataclasses.fields(models.TransmonParams)}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    durations: tuple[float, ...]
    dt: float
    modes: tuple[str, ...] = ("newton-exact-hessian", "bfgs")
    seeds: int = 4
    base_seed: int = 0
    workers: int = 1
    output: str = "results"
    backend: str = DIAGONALIZATION
    taylor_order: int = 12
    bounds: tuple[float, float] | None = None
    histogram_edges: tuple[float, ...] = DEFAULT_EDGES
    model_file: str | None = None
    optimizer: dict = field(default_factory=dict)
    transmon: dict = field(default_factory=dict)

    def n_steps(self, duration: float) -> int:
        return int(round(duration / self.dt))

    def optimizer_config(self, mode: str) -> OptimizerConfig:
        return OptimizerConfig(mode=mode, **self.optimizer)

    def transmon_params(self) -> models.TransmonParams:
        return models.TransmonParams(**self.transmon)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["durations"] = list(self.durations)
        d["modes"] = list(self.modes)
        d["histogram_edges"] = list(self.histogram_edges)
        d["bounds"] = None if self.bounds is None else list(self.bounds)
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def replace(self, **changes) -> "ExperimentConfig":
        return from_mapping({**self.to_dict(), **changes})


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _as_float(value, path) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        _fail(path, f"expected a number, got {value!r}")
    if not np.isfinite(out):
        _fail(path, "must be finite")
    return out


def _as_int(value, path, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        _fail(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}")
    return int(value)


def from_mapping(raw: dict) -> ExperimentConfig:
    """Validate a parsed mapping and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = dict(raw)
    if "duration" in raw:
        if "durations" in raw:
            _fail("duration", "give either 'duration' or 'durations', not both")
        raw["durations"] = [raw.pop("duration")]
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    model = raw.get("model")
    if model not in MODEL_NAMES:
        _fail("model", f"expected one of {MODEL_NAMES}, got {model!r}")
    model_file = raw.get("model_file")
    if model == "custom" and not model_file:
        _fail("model_file", "required for model 'custom'")

    durs = raw.get("durations")
    if durs is None:
        _fail("durations", "required")
    if np.isscalar(durs):
        durs = [durs]
    durations = tuple(_as_float(d, f"durations[{i}]") for i, d in enumerate(durs))
    if not durations:
        _fail("durations", "need at least one duration")
    if any(d <= 0 for d in durations):
        _fail("durations", "must be positive")

    if raw.get("dt") is None:
        if model == "two-level":
            if len(set(durations)) != 1:
                _fail("dt", "required when the two-level model sweeps durations")
            dt = durations[0] / 2
        else:
            dt = 2.0
    else:
        dt = _as_float(raw["dt"], "dt")
    if dt <= 0:
        _fail("dt", "must be positive")
    for i, d in enumerate(durations):
        n = d / dt
        if round(n) < 1 or abs(n - round(n)) > 1e-9:
            _fail(f"durations[{i}]", f"dt = {dt} does not divide duration {d} into an integer number of steps")

    modes = raw.get("modes", ["newton-exact-hessian", "bfgs"])
    if isinstance(modes, str):
        modes = [modes]
    if not modes:
        _fail("modes", "need at least one mode")
    for i, m in enumerate(modes):
        if m not in MODES:
            _fail(f"modes[{i}]", f"unknown mode {m!r}; expected one of {MODES}")

    backend = raw.get("backend", DIAGONALIZATION)
    if backend not in (DIAGONALIZATION, TAYLOR):
        _fail("backend", f"expected {DIAGONALIZATION!r} or {TAYLOR!r}")

    bounds = raw.get("bounds")
    if bounds is not None:
        if len(bounds) != 2:
            _fail("bounds", "expected [lo, hi]")
        bounds = (_as_float(bounds[0], "bounds[0]"), _as_float(bounds[1], "bounds[1]"))
        if not bounds[0] < bounds[1]:
            _fail("bounds", "lo must be below hi")

    edges = tuple(_as_float(e, f"histogram_edges[{i}]")
                  for i, e in enumerate(raw.get("histogram_edges", DEFAULT_EDGES)))
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        _fail("histogram_edges", "need at least two strictly increasing edges")

    opt = dict(raw.get("optimizer") or {})
    bad = sorted(set(opt) - _OPT_FIELDS)
    if bad:
        raise ConfigError(f"unknown optimizer keys: {', '.join(bad)}")
    try:
        OptimizerConfig(mode=modes[0], **opt)
    except (TypeError, ValueError) as exc:
        _fail("optimizer", str(exc))

    tp = dict(raw.get("transmon") or {})
    bad = sorted(set(tp) - _TRANSMON_FIELDS)
    if bad:
        raise ConfigError(f"unknown transmon keys: {', '.join(bad)}")
    try:
        models.derived_couplings(models.TransmonParams(**tp))
    except (TypeError, ValueError) as exc:
        _fail("transmon", str(exc))

    return ExperimentConfig(
        model=model,
        durations=durations,
        dt=dt,
        modes=tuple(modes),
        seeds=_as_int(raw.get("seeds", 4), "seeds", 1),
        base_seed=_as_int(raw.get("base_seed", 0), "base_seed", 0),
        workers=_as_int(raw.get("workers", 1), "workers", 1),
        output=str(raw.get("output", "results")),
        backend=backend,
        taylor_order=_as_int(raw.get("taylor_order", 12), "taylor_order", 1),
        bounds=bounds,
        histogram_edges=edges,
        model_file=model_file,
        optimizer=opt,
        transmon=tp,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return from_mapping(raw if raw is not None else {})


def build_system(cfg: ExperimentConfig) -> tuple[BilinearSystem, np.ndarray]:
    """The controlled system and the per-control ``(M, 2)`` bounds."""
    if cfg.model == "transmon":
        p = cfg.transmon_params()
        system, bounds = models.transmon_effective_system(p), models.drive_bounds(p)
    elif cfg.model == "two-level":
        system = models.two_level_example()
        bounds = np.array([[-TWO_LEVEL_BOUND, TWO_LEVEL_BOUND]])
    else:
        try:
            data = np.load(cfg.model_file)
            system = BilinearSystem(data["drift"], data["controls"], data["projector"], data["target"])
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"model_file: {exc}") from exc
        bounds = np.array([[-np.inf, np.inf]] * system.n_controls)
    if cfg.bounds is not None:
        bounds = np.array([cfg.bounds] * system.n_controls)
    return system, bounds


def build_objective(cfg: ExperimentConfig, duration: float) -> tuple[GateObjective, ControlPulse]:
    system, bounds = build_system(cfg)
    n = cfg.n_steps(duration)
    template = ControlPulse(np.zeros((n, system.n_controls)), cfg.dt, bounds)
    obj = GateObjective(system, template, backend=cfg.backend, taylor_order=cfg.taylor_order)
    return obj, template


@dataclass
class DurationResult:
    duration: float
    campaign: CampaignResult
    template: ControlPulse


@dataclass
class CampaignSummary:
    config: ExperimentConfig
    results: list[DurationResult]

    def rows(self):
        for res in self.results:
            for rec in res.campaign.records:
                yield res.duration, rec

    def stats(self) -> list[dict]:
        edges = np.asarray(self.config.histogram_edges)
        out = []
        for res in self.results:
            for mode in res.campaign.modes:
                recs = res.campaign.for_mode(mode)
                ok = [r.report for r in recs if r.report is not None]
                finals = res.campaign.finals(mode)
                out.append({
                    "duration": res.duration,
                    "mode": mode,
                    "n_seeds": len(recs),
                    "n_failed": len(recs) - len(ok),
                    "best_J": float(np.nanmin(finals)) if ok else None,
                    "mean_J": float(np.nanmean(finals)) if ok else None,
                    "mean_n_fun": float(np.mean([r.n_fun for r in ok])) if ok else None,
                    "mean_n_grad": float(np.mean([r.n_grad for r in ok])) if ok else None,
                    "mean_n_hess": float(np.mean([r.n_hess for r in ok])) if ok else None,
                    "mean_iterations": float(np.mean([r.iterations for r in ok])) if ok else None,
                    "mean_wall_time": float(np.mean([r.wall_time for r in ok])) if ok else None,
                    "histogram_edges": list(map(float, edges)),
                    "histogram_counts": res.campaign.histogram(mode, edges).tolist(),
                })
        return out

    @property
    def all_failed(self) -> bool:
        return all(rec.report is None for _, rec in self.rows())

    def best_record(self, duration_result: DurationResult, mode: str) -> SeedRecord | None:
        ok = [r for r in duration_result.campaign.for_mode(mode) if r.report is not None]
        return min(ok, key=lambda r: r.J) if ok else None


def run_experiment(cfg: ExperimentConfig, write: bool = True, progress=None) -> CampaignSummary:
    """Run the paired campaign for every duration and optionally write results."""
    results = []
    for duration in cfg.durations:
        obj, template = build_objective(cfg, duration)
        configs = [cfg.optimizer_config(m) for m in cfg.modes]
        logger.info("duration %g: %d seeds x %d modes", duration, cfg.seeds, len(configs))
        campaign = multistart(obj, template.flat_bounds(), cfg.seeds, cfg.base_seed, configs,
                              workers=cfg.workers, on_record=progress)
        results.append(DurationResult(duration, campaign, template))
    summary = CampaignSummary(cfg, results)
    if write:
        write_outputs(summary, Path(cfg.output))
    return summary


SEED_COLUMNS = ("duration", "seed_index", "seed", "mode", "J", "iterations", "n_fun", "n_grad",
                "n_hess", "reason", "error", "wall_time")


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_outputs(summary: CampaignSummary, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "seeds.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SEED_COLUMNS)
        for duration, rec in summary.rows():
            r = rec.report
            w.writerow([_fmt(duration), rec.seed_index, rec.seed, rec.mode,
                        _fmt(rec.J), r.iterations if r else "", r.n_fun if r else "",
                        r.n_grad if r else "", r.n_hess if r else "", r.reason if r else "failed",
                        rec.error or "", _fmt(r.wall_time) if r else ""])
    written.append(path)

    stats = summary.stats()
    path = out / "summary.json"
    path.write_text(json.dumps({"config": summary.config.to_dict(), "results": stats}, indent=2))
    written.append(path)

    path = out / "histogram.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("duration", "mode", "bin_lo", "bin_hi", "count"))
        for s in stats:
            e = s["histogram_edges"]
            for i, c in enumerate(s["histogram_counts"]):
                w.writerow([_fmt(s["duration"]), s["mode"], _fmt(e[i]), _fmt(e[i + 1]), c])
    written.append(path)

    path = out / "vs_duration.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("duration", "mode", "best_J", "mean_J", "mean_n_fun", "mean_wall_time"))
        for s in stats:
            w.writerow([_fmt(s["duration"]), s["mode"], s["best_J"], s["mean_J"], s["mean_n_fun"],
                        s["mean_wall_time"]])
    written.append(path)

    for res in summary.results:
        for mode in res.campaign.modes:
            best = summary.best_record(res, mode)
            if best is None:
                continue
            pulse = res.template.with_flat(best.report.x)
            path = out / f"best_pulse_T{res.duration:g}_{mode}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "t_start"] + [f"control_{k}" for k in range(pulse.n_controls)])
                for j, row in enumerate(pulse.amplitudes):
                    w.writerow([j, _fmt(j * pulse.dt)] + [_fmt(v) for v in row])
            written.append(path)
    return written
