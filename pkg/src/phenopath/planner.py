"""Two-step informative planning, the baseline strategies, and the mission loop.

Each informative iteration first picks ``p`` static sites greedily by
conditional entropy, then chooses, among all no-U-turn routes through their
waypoints within ``c_min + xi``, the route whose mobile readings carry the
most information given the sites and the data so far.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .corridor import (
    DEFAULT_MAX_STATES,
    CandidatePath,
    CorridorGraph,
    build_graph,
    enumerate_feasible,
    final_heading,
    heading_index,
    path_cells,
    shortest_cover_cost,
    traversal_plots,
)
from .errors import InvalidInputError, NumericalError, PlanningError, RouteExhausted
from .field import FieldGrid, GroundTruthField, SensorSim, model_features
from .fusion import FusedObservation, Measurement, ingest
from .gp import FitSettings, GPModel, KernelParams, NoiseModel, TrainingSet, fit_hyperparameters, gaussian_entropy

log = logging.getLogger(__name__)

TIE_RTOL = 1e-10


class Strategy(str, enum.Enum):
    MAXENT = "maxent"
    SHORTEST = "shortest"
    EQUISAMPLE = "equisample"
    NAIVE_STATIC = "naive-static"
    NAIVE_MOBILE = "naive-mobile"

    @property
    def informative(self) -> bool:
        return self in (Strategy.MAXENT, Strategy.SHORTEST, Strategy.EQUISAMPLE)


@dataclass(frozen=True, eq=False)
class PlanResult:
    static_sites: tuple[int, ...]
    chosen_path: CandidatePath
    mobile_plots: frozenset
    score: float
    graph: CorridorGraph = field(repr=False)
    c_min: int = 0
    n_candidates: int = 1
    n_states: int = 0
    readings_order: tuple[int, ...] = ()  # plots read during the leg, in order (naive routes)


def _first_max(values) -> int:
    values = np.asarray(values, dtype=float)
    best = np.max(values)
    if not np.isfinite(best):
        return int(np.argmax(values))
    tol = TIE_RTOL * max(abs(best), 1.0)
    return int(np.flatnonzero(values >= best - tol)[0])


def select_static_sites(model: GPModel, candidates, features: np.ndarray, p: int,
                        static_var: float) -> list[int]:
    """Greedy max-entropy static sites among ``candidates`` (plot ids).

    Each pick maximizes the entropy of a noisy static reading given the
    model's data and the sites already picked; ties go to the smallest id.
    ``features`` holds model inputs for every plot, indexed by plot id.
    """
    ids = sorted(int(c) for c in candidates)
    if p < 1 or len(ids) < p:
        raise InvalidInputError(f"cannot select {p} sites from {len(ids)} candidates")
    cov = model.conditional_covariance(features[ids]).copy()
    taken = np.zeros(len(ids), dtype=bool)
    chosen = []
    for _ in range(p):
        var = np.where(taken, -np.inf, np.diag(cov))
        k = _first_max(var)
        chosen.append(ids[k])
        taken[k] = True
        col = cov[:, k].copy()
        cov -= np.outer(col, col) / (col[k] + static_var)
    return chosen


class PathScorer:
    """Conditional entropy of a path's mobile readings given data and static sites."""

    def __init__(self, model: GPModel, static_sites, features: np.ndarray, noise: NoiseModel, observable=None):
        self.static_sites = frozenset(int(s) for s in static_sites)
        n = len(features)
        self.observable = frozenset(range(n)) if observable is None else frozenset(observable)
        self.ids = np.array(sorted(self.observable), dtype=int)
        self.col = {int(pid): k for k, pid in enumerate(self.ids)}
        sites = sorted(self.static_sites)
        self.cov = model.conditional_covariance(features[self.ids], features[sites], noise.static_var)
        self.mobile_var = noise.mobile_var
        self._cache: dict[frozenset, float] = {}

    def mobile_set(self, path: CandidatePath) -> frozenset:
        return frozenset(path.mobile_plots - self.static_sites) & self.observable

    def __call__(self, path: CandidatePath) -> float:
        return self.score_set(self.mobile_set(path))

    def score_set(self, mobile: frozenset) -> float:
        if not mobile:
            return -math.inf
        cached = self._cache.get(mobile)
        if cached is None:
            idx = [self.col[p] for p in sorted(mobile)]
            sub = self.cov[np.ix_(idx, idx)] + self.mobile_var * np.eye(len(idx))
            cached = gaussian_entropy(sub)
            self._cache[mobile] = cached
        return cached


def score_path(model: GPModel, static_sites, path: CandidatePath, features: np.ndarray,
               noise: NoiseModel, observable=None) -> float:
    """H(mobile readings | static sites, data); -inf when the path reads nothing new."""
    return PathScorer(model, static_sites, features, noise, observable)(path)


@dataclass(frozen=True, eq=False)
class PlanningContext:
    """Per-mission constants shared by every planning call."""

    grid: FieldGrid
    features: np.ndarray
    noise: NoiseModel
    observable: frozenset
    p: int = 4
    xi: int = 0
    sides: str = "single"
    pruning: str = "bbox"
    max_states: int = DEFAULT_MAX_STATES

    @classmethod
    def for_grid(cls, grid: FieldGrid, noise: NoiseModel, test_ids=(), **kw) -> "PlanningContext":
        observable = frozenset(range(grid.n_plots)) - frozenset(test_ids)
        return cls(grid, model_features(grid), noise, observable, **kw)


def _nodes_from_cells(graph: CorridorGraph, cells) -> tuple[int, ...]:
    return tuple(graph.index[c] for c in cells if c in graph.index)


def _ordered_route(grid: FieldGrid, start, heading, targets, sides) -> tuple[CorridorGraph, CandidatePath]:
    """Shortest route visiting ``targets`` in the given order (lexicographic ties)."""
    cells = [tuple(start)]
    cur, h = tuple(start), heading_index(heading)
    for target in targets:
        g = build_graph(grid, cur, [target], sides)
        c = shortest_cover_cost(g, heading=h)
        leg = enumerate_feasible(g, c, h)[0]
        cells.extend(path_cells(g, leg)[1:])
        h = final_heading(g, leg, h)
        cur = tuple(target)
    graph = build_graph(grid, start, list(targets), sides)
    return graph, graph.make_path(_nodes_from_cells(graph, cells))


def _plan_naive(strategy, model, ctx: PlanningContext, agent_pos, heading, leg_index) -> PlanResult:
    columns = ctx.grid.column_plots()
    if leg_index >= len(columns):
        raise RouteExhausted(f"coverage route has {len(columns)} legs")
    column = columns[leg_index] if leg_index % 2 == 0 else columns[leg_index][::-1]
    entry = ctx.grid.waypoint_cell(column[0])
    exit_ = ctx.grid.waypoint_cell(column[-1])
    graph, path = _ordered_route(ctx.grid, agent_pos, heading, [entry, exit_], ctx.sides)
    read = tuple(pid for pid in column if pid in ctx.observable)
    if strategy is Strategy.NAIVE_STATIC:
        sites, mobile = read, frozenset()
    else:
        sites, mobile = (), frozenset(read)
    score = PathScorer(model, sites, ctx.features, ctx.noise, ctx.observable).score_set(mobile)
    return PlanResult(sites, path, mobile, score, graph, c_min=path.cost, readings_order=read)


def plan_iteration(strategy: Strategy, model: GPModel, ctx: PlanningContext, agent_pos, heading=None,
                   static_done=frozenset(), leg_index: int = 0) -> PlanResult:
    """Plan one iteration from ``agent_pos`` for any strategy.

    ``static_done`` lists plots that already have a static reading (never
    re-selected); ``leg_index`` is the next leg of the naive coverage route.
    """
    strategy = Strategy(strategy)
    if not strategy.informative:
        return _plan_naive(strategy, model, ctx, agent_pos, heading, leg_index)

    candidates = sorted(ctx.observable - frozenset(static_done))
    if not candidates:
        raise RouteExhausted("every observable plot already has a static reading")
    p = min(ctx.p, len(candidates))
    sites = select_static_sites(model, candidates, ctx.features, p, ctx.noise.static_var)
    waypoints = [ctx.grid.waypoint_cell(s) for s in sites]
    graph = build_graph(ctx.grid, agent_pos, waypoints, ctx.sides)
    h = heading_index(heading)
    c_min = shortest_cover_cost(graph, heading=h)
    stats: dict = {}
    paths = enumerate_feasible(graph, c_min + ctx.xi, h, max_states=ctx.max_states,
                               pruning=ctx.pruning, stats=stats)
    if not paths:
        raise PlanningError("no feasible path within the budget")
    scorer = PathScorer(model, sites, ctx.features, ctx.noise, ctx.observable)
    scores = [scorer(path) for path in paths]
    best = _first_max(scores)
    if strategy is Strategy.MAXENT:
        pick = best
    elif strategy is Strategy.SHORTEST:
        pick = int(np.argmin([path.cost for path in paths]))
    else:
        target = len(scorer.mobile_set(paths[best]))
        gaps = [abs(len(scorer.mobile_set(path)) - target) for path in paths]
        pick = int(np.argmin(gaps))
    chosen = paths[pick]
    return PlanResult(tuple(sites), chosen, scorer.mobile_set(chosen), scores[pick], graph,
                      c_min=c_min, n_candidates=len(paths), n_states=stats.get("states", 0))


def traverse(plan: PlanResult, sim: SensorSim, observable) -> list[Measurement]:
    """Readings collected while executing ``plan``, in driving order."""
    if plan.readings_order:
        if plan.static_sites:
            return [sim.static(pid) for pid in plan.readings_order]
        return [sim.mobile(pid) for pid in plan.readings_order]
    sites = set(plan.static_sites)
    out = []
    for pid in traversal_plots(plan.graph, plan.chosen_path):
        if pid in sites:
            out.append(sim.static(pid))
            sites.discard(pid)
        elif pid in observable and pid not in plan.static_sites:
            out.append(sim.mobile(pid))
    # a site whose waypoint is the start cell is read in place
    out.extend(sim.static(pid) for pid in plan.static_sites if pid in sites)
    return out


def training_set(fused: dict[int, FusedObservation], features: np.ndarray) -> TrainingSet:
    ids = sorted(fused)
    return TrainingSet(
        features[ids].reshape(len(ids), features.shape[1]),
        [fused[i].value for i in ids],
        [fused[i].variance for i in ids],
    )


def default_init_params(dim: int = 4) -> KernelParams:
    return KernelParams(10.0, (0.2, 0.2) + (1.0,) * (dim - 2))


@dataclass(frozen=True, eq=False)
class IterationRecord:
    iteration: int
    distance: int  # cumulative, cells
    plan: PlanResult
    model: GPModel
    n_static: int  # plots with a static reading
    n_mobile: int  # plots with mobile readings only
    n_readings: int


@dataclass(eq=False)
class MissionLog:
    strategy: Strategy
    prior_model: GPModel
    records: list[IterationRecord] = field(default_factory=list)
    measurements: list[Measurement] = field(default_factory=list)
    completed: bool = False
    error: str | None = None

    @property
    def final_model(self) -> GPModel:
        return self.records[-1].model if self.records else self.prior_model

    @property
    def distance(self) -> int:
        return self.records[-1].distance if self.records else 0


def run_mission(strategy, grid: FieldGrid, truth: GroundTruthField, noise: NoiseModel, seed, iterations=8,
                p: int = 4, xi: int = 0, *, test_ids=(), distance_cap=None, init_params: KernelParams | None = None,
                fit_settings: FitSettings = FitSettings(), refit: bool = True,
                mobile_avg_variance: str = "fixed", sides: str = "single", start=None,
                pruning: str = "bbox", max_states: int = DEFAULT_MAX_STATES) -> MissionLog:
    """Alternate planning, driving, fusion and model updates.

    Stops after ``iterations`` iterations (``None`` = no limit), once the
    cumulative distance reaches ``distance_cap``, or when the route is
    exhausted. Hyperparameters are refitted after every iteration, warm
    started from the previous values; with ``refit=False`` they are fitted
    once on the first iteration's data and frozen. Planning or numerical failures end the mission early
    with ``error`` set; completed iterations are kept.
    """
    strategy = Strategy(strategy)
    if (strategy.informative and p < 1) or xi < 0:
        raise InvalidInputError("need p >= 1 and xi >= 0")
    ctx = PlanningContext.for_grid(grid, noise, test_ids, p=p, xi=xi, sides=sides, pruning=pruning,
                                   max_states=max_states)
    params = init_params or default_init_params(ctx.features.shape[1])
    sim = SensorSim.from_noise(truth, noise, seed)
    mission = MissionLog(strategy, GPModel.prior(params))
    model = mission.prior_model
    pos = tuple(start) if start is not None else grid.waypoint_cell(0)
    heading = None
    distance = 0
    fitted = False
    it = 0
    while iterations is None or it < iterations:
        if distance_cap is not None and distance >= distance_cap:
            break
        static_done = frozenset(m.plot_id for m in mission.measurements if m.kind == "static")
        try:
            plan = plan_iteration(strategy, model, ctx, pos, heading, static_done, leg_index=it)
        except RouteExhausted:
            mission.completed = True
            break
        except (PlanningError, NumericalError) as exc:
            mission.error = f"iteration {it + 1}: {exc}"
            log.warning("mission aborted: %s", mission.error)
            break
        it += 1
        readings = traverse(plan, sim, ctx.observable)
        mission.measurements.extend(readings)
        distance += plan.chosen_path.cost
        pos = plan.graph.positions[plan.chosen_path.nodes[-1]]
        heading = final_heading(plan.graph, plan.chosen_path, heading)
        fused = ingest(mission.measurements, noise, mobile_avg_variance=mobile_avg_variance)
        train = training_set(fused, ctx.features)
        try:
            if (refit or not fitted) and len(train) >= 2:
                centered, _ = train.centered()
                params = fit_hyperparameters(centered, params, fit_settings)
                fitted = True
            model = GPModel.centered(train, params)
        except NumericalError as exc:
            mission.error = f"iteration {it}: {exc}"
            log.warning("mission aborted: %s", mission.error)
            break
        n_static = sum(1 for f in fused.values() if f.has_static)
        mission.records.append(
            IterationRecord(it, distance, plan, model, n_static, len(fused) - n_static, len(mission.measurements))
        )
    return mission
