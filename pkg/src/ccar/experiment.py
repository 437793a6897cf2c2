"""Experiment runner, omega sweep and figure-data emitters.

Every CSV written here has a fixed column order, LF line endings and floats
printed with 17 significant digits, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import data, tinynet, weighting
from .losses import LossConfig

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["row", "seed", "status", "overall", "many", "medium", "few", "final_train_loss"]
SWEEP_COLUMNS = [
    "omega",
    "n_ok",
    "overall_mean",
    "overall_std",
    "many_mean",
    "medium_mean",
    "few_mean",
    "final_train_loss_mean",
]
SURFACE_COLUMNS = ["p_t", "f_c", "omega_weight"]
GRADCURVE_COLUMNS = ["p_t", "f_c", "psi", "psi_ce_baseline", "phase", "amplified"]
DEFAULT_OMEGAS = (0.25, 0.5, 0.75, 1.0)
DEFAULT_F_LIST = (0.01, 0.1, 0.5, 0.9)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment cell.

    ``seed`` is the base seed; repeat ``i`` runs with seed ``seed + i`` and
    overrides the seeds inside ``dataset`` and ``optimizer``.
    """

    dataset: data.DatasetSpec = field(default_factory=data.DatasetSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: tinynet.SGDConfig = field(default_factory=tinynet.SGDConfig)
    hidden: Tuple[int, ...] = (64, 64)
    groups: data.GroupThresholds = field(default_factory=data.GroupThresholds)
    repeats: int = 10
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not 0 <= self.seed or self.seed + self.repeats > 2**64:
            raise ConfigError("seed range must fit in an unsigned 64-bit integer")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def seeds(self) -> List[int]:
        return [self.seed + i for i in range(self.repeats)]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss"]["base"] = self.loss.base.value
        d["hidden"] = list(self.hidden)
        del d["dataset"]["seed"], d["optimizer"]["seed"]
        return d


_SECTIONS = {"dataset": data.DatasetSpec, "loss": LossConfig, "optimizer": tinynet.SGDConfig, "groups": data.GroupThresholds}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from a (possibly partial) nested dict; unknown keys are errors."""
    base = ExperimentConfig()
    kwargs = {}
    unknown = set(raw) - {f.name for f in dataclasses.fields(ExperimentConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        for key, value in raw.items():
            if key in _SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                cls = _SECTIONS[key]
                names = {f.name for f in dataclasses.fields(cls)} - {"seed"}
                bad = set(value) - names
                if bad:
                    raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
                kwargs[key] = dataclasses.replace(getattr(base, key), **value)
            else:
                kwargs[key] = value
        return dataclasses.replace(base, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(raw)


def write_resolved_config(cfg: ExperimentConfig, out_dir) -> Path:
    path = Path(out_dir) / "resolved_config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class MetricsReport:
    seed: int
    status: str = "ok"
    overall: Optional[float] = None
    many: Optional[float] = None
    medium: Optional[float] = None
    few: Optional[float] = None
    final_train_loss: Optional[float] = None
    wall_time_ms: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_seed(cfg: ExperimentConfig, seed: int) -> MetricsReport:
    """Generate data, train and evaluate one repeat."""
    t0 = time.perf_counter()
    spec = dataclasses.replace(cfg.dataset, seed=seed)
    train_set, test_set, stats = data.generate(spec)
    init_seed, shuffle_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64))
    dims = [spec.input_dim, *cfg.hidden, spec.num_classes]
    params = tinynet.init_params(dims, init_seed)
    sgd = dataclasses.replace(cfg.optimizer, seed=shuffle_seed)
    try:
        params, trace = tinynet.train(params, train_set.features, train_set.labels, stats, cfg.loss, sgd)
    except tinynet.TrainingDiverged as exc:
        log.warning("seed %d failed: %s", seed, exc)
        return MetricsReport(seed, status=f"diverged@epoch{exc.epoch}/batch{exc.batch}",
                             wall_time_ms=1e3 * (time.perf_counter() - t0))
    acc = tinynet.evaluate(params, test_set.features, test_set.labels, data.assign_groups(stats, cfg.groups))
    return MetricsReport(
        seed,
        overall=acc.overall,
        many=acc.many,
        medium=acc.medium,
        few=acc.few,
        final_train_loss=trace[-1],
        wall_time_ms=1e3 * (time.perf_counter() - t0),
    )


def _run_task(task):
    return run_seed(*task)


def _map(tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def aggregate(reports: Sequence[MetricsReport]) -> Tuple[dict, dict]:
    """Mean and sample std over successful seeds; a metric absent on every seed stays absent."""
    ok = [r for r in reports if r.ok]
    mean, std = {}, {}
    for name in ("overall", "many", "medium", "few", "final_train_loss"):
        vals = [getattr(r, name) for r in ok if getattr(r, name) is not None]
        mean[name] = float(np.mean(vals)) if vals else None
        std[name] = _std(vals) if vals else None
    return mean, std


def write_metrics_csv(reports: Sequence[MetricsReport], path) -> None:
    rows = [
        ("seed", r.seed, r.status, r.overall, r.many, r.medium, r.few, r.final_train_loss) for r in reports
    ]
    mean, std = aggregate(reports)
    n_ok = sum(r.ok for r in reports)
    for label, agg in (("mean", mean), ("std", std)):
        rows.append((label, "", f"ok={n_ok}/{len(reports)}", *(agg[k] for k in METRICS_COLUMNS[3:])))
    _write_rows(path, METRICS_COLUMNS, rows)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, out_dir=None) -> List[MetricsReport]:
    """Run every repeat of ``cfg``; optionally write ``metrics.csv`` and the resolved config."""
    reports = _map([(cfg, s) for s in cfg.seeds()], jobs)
    for r in reports:
        log.info("seed %d %s overall=%s few=%s (%.0f ms)", r.seed, r.status, r.overall, r.few, r.wall_time_ms)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(reports, out / "metrics.csv")
        write_resolved_config(cfg, out)
    return reports


@dataclass(frozen=True)
class SweepRow:
    omega: float
    n_ok: int
    overall_mean: Optional[float]
    overall_std: Optional[float]
    many_mean: Optional[float]
    medium_mean: Optional[float]
    few_mean: Optional[float]
    final_train_loss_mean: Optional[float]


@dataclass(frozen=True)
class SweepResult:
    rows: List[SweepRow]
    cells: List[List[MetricsReport]]


def sweep_omega(cfg: ExperimentConfig, omegas: Iterable[float] = DEFAULT_OMEGAS, jobs: int = 1, out_dir=None) -> SweepResult:
    """Weighted-loss runs at each pivot, every cell on the same seed list."""
    omegas = [float(w) for w in omegas]
    if not omegas:
        raise ConfigError("empty omega grid")
    try:
        cell_cfgs = [dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, ccar=True, omega=w)) for w in omegas]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seeds = cfg.seeds()
    flat = _map([(c, s) for c in cell_cfgs for s in seeds], jobs)
    cells = [flat[i * len(seeds) : (i + 1) * len(seeds)] for i in range(len(omegas))]
    rows = []
    for w, reports in zip(omegas, cells):
        mean, std = aggregate(reports)
        rows.append(
            SweepRow(w, sum(r.ok for r in reports), mean["overall"], std["overall"], mean["many"], mean["medium"],
                     mean["few"], mean["final_train_loss"])
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "sweep.csv", SWEEP_COLUMNS, [dataclasses.astuple(r) for r in rows])
        write_resolved_config(cfg, out)
        for w, reports in zip(omegas, cells):
            cell_dir = out / f"omega={_fmt(w)}"
            cell_dir.mkdir(exist_ok=True)
            write_metrics_csv(reports, cell_dir / "metrics.csv")
    return SweepResult(rows, cells)


def _grid(n: int) -> np.ndarray:
    # i / (n - 1) keeps exact values like 0.75 on a 101-point grid
    return np.arange(n) / (n - 1)


def emit_surface_grid(omega: float = 0.75, p_points: int = 101, f_points: int = 99, path=None):
    """Weight over ``p_t in [0, 1]`` x ``f_c in [0.01, 0.99]``; rows ordered f-major."""
    weighting.PivotOmega(omega)
    if p_points < 2 or f_points < 2:
        raise ConfigError("grid resolution must be at least 2 per axis")
    ps = _grid(p_points)
    fs = 0.01 + 0.98 * _grid(f_points)
    P, F = np.meshgrid(ps, fs)
    W = weighting.omega_weight(P, F, omega)
    rows = list(zip(P.ravel().tolist(), F.ravel().tolist(), W.ravel().tolist()))
    if path is not None:
        _write_rows(path, SURFACE_COLUMNS, rows)
    return rows


def emit_gradient_curves(omega: float = 0.75, f_list: Sequence[float] = DEFAULT_F_LIST, points: int = 200, path=None):
    """Modulation factor against confidence on ``(0, 1]`` for each class frequency.

    ``phase`` follows the pivot (``explore`` below it); ``amplified`` marks
    rows where the weighted gradient exceeds plain cross-entropy.
    """
    weighting.PivotOmega(omega)
    if points < 2:
        raise ConfigError("need at least 2 points per curve")
    if not f_list:
        raise ConfigError("empty frequency list")
    for f in f_list:
        if not 0.0 < f < 1.0:
            raise ConfigError(f"class frequency outside (0, 1): {f}")
    ps = np.arange(1, points + 1) / points
    rows = []
    for f in f_list:
        psi = weighting.modulation_factor(ps, np.full_like(ps, f), omega)
        for p, s in zip(ps.tolist(), psi.tolist()):
            rows.append((p, float(f), s, 1.0, "explore" if p < omega else "consolidate", int(s > 1.0)))
    if path is not None:
        _write_rows(path, GRADCURVE_COLUMNS, rows)
    return rows
