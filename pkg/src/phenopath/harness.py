"""Seeded mission batches, MAE curves, parameter sweeps and CSV output."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .field import FieldGrid, GroundTruthField, generate_synthetic, load_dataset, model_features, test_split
from .gp import NoiseModel
from .planner import MissionLog, Strategy, run_mission

log = logging.getLogger(__name__)

SERIES_HEADER = ("strategy", "seed", "iteration", "distance", "mae", "n_static", "n_mobile")
SWEEP_HEADER = ("param", "value", "mae_mean", "mae_std", "n_seeds")
CHECKPOINT_STEP = 10

# independent random streams derived from one experiment seed
_SPLIT_STREAM = 1
_SENSOR_STREAM = 2


def compute_mae(model, test_points, truth_values) -> float:
    """Mean absolute error of the posterior mean on held-out points."""
    truth_values = np.asarray(truth_values, dtype=float).reshape(-1)
    if truth_values.size == 0:
        raise InvalidInputError("test set is empty")
    pred = model.predict_mean(np.asarray(test_points, dtype=float).reshape(truth_values.size, -1))
    return math.fsum(np.abs(pred - truth_values)) / truth_values.size


@dataclass(frozen=True)
class ExperimentConfig:
    """One batch of missions.

    ``field`` is ``"synthetic"`` (a fresh synthetic field per seed),
    ``"synthetic:S"`` (one synthetic field built from seed S, shared by all
    seeds) or the path of a per-plot CSV dataset. ``sigma_m`` wins over ``k``
    when both are given. Naive strategies ignore a positive ``iterations`` and
    run until ``distance_cap`` or until their route is exhausted.
    """

    field: str = "synthetic"
    strategies: tuple[str, ...] = ("maxent",)
    seeds: tuple[int, ...] = tuple(range(20))
    iterations: int | None = 8
    p: int = 4
    sigma_s: float = 0.5
    sigma_m: float | None = 2.5
    k: float | None = None
    xi: int = 0
    n_test: int = 40
    distance_cap: int | None = 250
    mobile_avg_variance: str = "fixed"
    refit: bool = True
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(Strategy(s).value for s in self.strategies))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidInputError("seeds must be distinct")
        if self.iterations is not None and self.iterations < 0:
            raise InvalidInputError("iterations must be >= 0")
        if self.p < 1 or self.xi < 0 or self.n_test < 1:
            raise InvalidInputError("need p >= 1, xi >= 0 and n_test >= 1")
        if self.distance_cap is not None and self.distance_cap < 0:
            raise InvalidInputError("distance_cap must be >= 0")
        if self.k is not None and self.k < 1:
            raise InvalidInputError(f"noise ratio k must be >= 1, got {self.k}")
        if self.mobile_avg_variance not in ("fixed", "scaled"):
            raise InvalidInputError(f"unknown mobile averaging mode {self.mobile_avg_variance!r}")
        self.noise  # validates the standard deviations

    @property
    def noise(self) -> NoiseModel:
        if self.sigma_m is not None:
            return NoiseModel(self.sigma_s, self.sigma_m)
        if self.k is None:
            raise InvalidInputError("give either sigma_m or the noise ratio k")
        return NoiseModel.from_ratio(self.sigma_s, self.k)

    def with_noise_ratio(self, k: float) -> "ExperimentConfig":
        return replace(self, sigma_m=None, k=k)


def resolve_field(source: str, seed: int) -> tuple[FieldGrid, GroundTruthField]:
    if source == "synthetic":
        return generate_synthetic(seed=seed)
    if source.startswith("synthetic:"):
        try:
            fixed = int(source.split(":", 1)[1])
        except ValueError:
            raise InvalidInputError(f"bad synthetic field seed in {source!r}") from None
        return generate_synthetic(seed=fixed)
    return load_dataset(Path(source))


@dataclass(frozen=True)
class SeriesRow:
    strategy: str
    seed: int
    iteration: int
    distance: int
    mae: float
    n_static: int
    n_mobile: int

    @property
    def n_samples(self) -> int:
        return self.n_static + self.n_mobile

    def as_tuple(self):
        return (self.strategy, self.seed, self.iteration, self.distance, self.mae, self.n_static, self.n_mobile)


@dataclass(frozen=True)
class StepRecord:
    """Planner bookkeeping for one informative iteration."""

    strategy: str
    seed: int
    iteration: int
    c_min: int
    cost: int
    n_candidates: int
    n_states: int


@dataclass
class MetricSeries:
    rows: list[SeriesRow] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    errors: dict[tuple[str, int], str] = field(default_factory=dict)

    def keys(self) -> list[tuple[str, int]]:
        seen = {}
        for r in self.rows:
            seen.setdefault((r.strategy, r.seed), None)
        return list(seen)

    def series(self, strategy: str, seed: int) -> list[SeriesRow]:
        return [r for r in self.rows if r.strategy == strategy and r.seed == seed]

    def final(self, strategy: str) -> dict[int, float]:
        """Last recorded MAE per seed."""
        out = {}
        for r in self.rows:
            if r.strategy == strategy:
                out[r.seed] = r.mae
        return out

    def at_distance(self, strategy: str, distance: float, quantity: str = "mae") -> dict[int, float]:
        """Per-seed value interpolated at ``distance`` (seeds whose series reaches it)."""
        out = {}
        for strat, seed in self.keys():
            if strat != strategy:
                continue
            d, v = _curve(self.series(strat, seed), quantity)
            if d[-1] >= distance:
                out[seed] = float(np.interp(distance, d, v))
        return out


def _curve(rows, quantity):
    d = np.array([r.distance for r in rows], dtype=float)
    v = np.array([r.mae if quantity == "mae" else r.n_samples for r in rows], dtype=float)
    return d, v


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    values = list(values)
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((x - mean) ** 2 for x in values) / (n - 1))


@dataclass(frozen=True)
class AggregatePoint:
    strategy: str
    distance: int
    mae_mean: float
    mae_std: float
    samples_mean: float
    n_seeds: int


def aggregate(series: MetricSeries, step: int = CHECKPOINT_STEP) -> list[AggregatePoint]:
    """Interpolate every series onto a common distance grid and average over seeds.

    A seed contributes to a checkpoint only if its series reaches that distance.
    """
    curves: dict[str, list] = {}
    for strat, seed in series.keys():
        rows = series.series(strat, seed)
        curves.setdefault(strat, []).append((_curve(rows, "mae"), _curve(rows, "samples")[1]))
    out = []
    for strat, items in curves.items():
        reach = max(d[-1] for (d, _), _ in items)
        for cp in range(0, int(reach) + 1, step):
            maes, counts = [], []
            for (d, mae), cnt in items:
                if d[-1] >= cp:
                    maes.append(float(np.interp(cp, d, mae)))
                    counts.append(float(np.interp(cp, d, cnt)))
            mean, std = mean_std(maes)
            out.append(AggregatePoint(strat, cp, mean, std, math.fsum(counts) / len(counts), len(maes)))
    return out


def _record(series: MetricSeries, strategy: str, seed: int, mission: MissionLog, X, test, truth):
    T = list(test)
    y = truth.values[T]
    series.rows.append(SeriesRow(strategy, seed, 0, 0, compute_mae(mission.prior_model, X[T], y), 0, 0))
    for rec in mission.records:
        series.rows.append(
            SeriesRow(strategy, seed, rec.iteration, rec.distance, compute_mae(rec.model, X[T], y),
                      rec.n_static, rec.n_mobile)
        )
        if Strategy(strategy).informative:
            plan = rec.plan
            series.steps.append(StepRecord(strategy, seed, rec.iteration, plan.c_min, plan.chosen_path.cost,
                                           plan.n_candidates, plan.n_states))


def run_cell(config: ExperimentConfig, strategy: str, seed: int, series: MetricSeries) -> None:
    """One (strategy, seed) mission; failures are recorded, never raised."""
    try:
        grid, truth = resolve_field(config.field, seed)
        _, test = test_split(grid, config.n_test, seed=[seed, _SPLIT_STREAM])
        iterations = config.iterations
        if not Strategy(strategy).informative and iterations:
            iterations = None
        mission = run_mission(
            strategy, grid, truth, config.noise, [seed, _SENSOR_STREAM], iterations=iterations, p=config.p,
            xi=config.xi, test_ids=test, distance_cap=config.distance_cap, refit=config.refit,
            mobile_avg_variance=config.mobile_avg_variance,
        )
        _record(series, strategy, seed, mission, model_features(grid), test, truth)
        if mission.error:
            series.errors[(strategy, seed)] = mission.error
    except Exception as exc:  # batch continues past any single cell
        log.warning("cell (%s, %d) failed: %s", strategy, seed, exc)
        series.errors[(strategy, seed)] = f"{type(exc).__name__}: {exc}"


def run_batch(config: ExperimentConfig) -> MetricSeries:
    """Every (strategy, seed) cell; each cell depends only on its own seed."""
    series = MetricSeries()
    for strategy in config.strategies:
        for seed in config.seeds:
            run_cell(config, strategy, seed, series)
    return series


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    mae_mean: float
    mae_std: float
    n_seeds: int

    def as_tuple(self):
        return (self.param, self.value, self.mae_mean, self.mae_std, self.n_seeds)


@dataclass
class SweepTable:
    rows: list[SweepRow] = field(default_factory=list)
    batches: dict[float, MetricSeries] = field(default_factory=dict)

    def format(self) -> str:
        head = " | ".join(f"{r.param}={_short(r.value)}" for r in self.rows)
        cells = " | ".join(format_cell(r.mae_mean, r.mae_std) for r in self.rows)
        return f"{head}\n{cells}"


def _short(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(value)


def format_cell(mean: float, std: float) -> str:
    return f"{mean:.2f}({std:.2f})"


def _sweep_row(param, value, batch: MetricSeries, strategy: str) -> SweepRow:
    finals = batch.final(strategy)
    mean, std = mean_std(finals[s] for s in sorted(finals))
    return SweepRow(param, float(value), mean, std, len(finals))


def sweep_noise_ratio(config: ExperimentConfig, ks=(1, 2, 5, 10)) -> SweepTable:
    """Final MAE of the first configured strategy with sigma_m = k * sigma_s."""
    table = SweepTable()
    strategy = config.strategies[0]
    for k in ks:
        if not k >= 1:
            raise InvalidInputError(f"noise ratio k must be >= 1, got {k}")
        cfg = replace(config.with_noise_ratio(k), strategies=(strategy,))
        batch = run_batch(cfg)
        table.batches[float(k)] = batch
        table.rows.append(_sweep_row("k", k, batch, strategy))
    return table


def sweep_slack(config: ExperimentConfig, xis=(0, 5, 10, 15)) -> SweepTable:
    """Final MAE of the first configured strategy for each slack value."""
    table = SweepTable()
    strategy = config.strategies[0]
    for xi in xis:
        if xi < 0:
            raise InvalidInputError(f"slack must be nonnegative, got {xi}")
        batch = run_batch(replace(config, xi=int(xi), strategies=(strategy,)))
        table.batches[float(xi)] = batch
        table.rows.append(_sweep_row("xi", xi, batch, strategy))
        for st in batch.steps:
            log.info("xi=%d seed=%d iter=%d c_min=%d cost=%d states=%d", xi, st.seed, st.iteration,
                     st.c_min, st.cost, st.n_states)
    return table


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(data) -> str:
    """CSV for a ``MetricSeries`` or ``SweepTable`` (LF endings, repr floats)."""
    if isinstance(data, MetricSeries):
        header, rows = SERIES_HEADER, [r.as_tuple() for r in data.rows]
    elif isinstance(data, SweepTable):
        header, rows = SWEEP_HEADER, [r.as_tuple() for r in data.rows]
    else:
        raise InvalidInputError(f"cannot write {type(data).__name__} as CSV")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return out.getvalue()


def emit_csv(data, path) -> Path:
    path = Path(path)
    text = csv_text(data)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_series_csv(source) -> MetricSeries:
    """Parse a series CSV (path or text) back into a ``MetricSeries``."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != SERIES_HEADER:
        raise InvalidInputError(f"unexpected series header {header!r}")
    series = MetricSeries()
    for f in reader:
        if f:
            series.rows.append(SeriesRow(f[0], int(f[1]), int(f[2]), int(f[3]), float(f[4]), int(f[5]), int(f[6])))
    return series


def format_aggregate(points: list[AggregatePoint], every: int = 50) -> str:
    lines = ["strategy  distance  mae  samples  n_seeds"]
    for pt in points:
        if pt.distance % every == 0:
            lines.append(f"{pt.strategy}  {pt.distance}  {format_cell(pt.mae_mean, pt.mae_std)}  "
                         f"{pt.samples_mean:.1f}  {pt.n_seeds}")
    return "\n".join(lines)
