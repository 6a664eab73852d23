import math

import numpy as np
import pytest

from phenopath.corridor import build_graph, enumerate_feasible, shortest_cover_cost
from phenopath.errors import InvalidInputError
from phenopath.field import default_layout, generate_synthetic, model_features
from phenopath.field import test_split as split_plots
from phenopath.gp import GPModel, KernelParams, NoiseModel, TrainingSet
from phenopath.planner import (
    PathScorer,
    PlanningContext,
    Strategy,
    plan_iteration,
    run_mission,
    score_path,
    select_static_sites,
)

import oracles

NOISE = NoiseModel(0.5, 2.5)
PARAMS = KernelParams(3.0, (0.3, 0.3, 1.0, 1.0))


def toy_model(seed, grid, n_train=3):
    rng = np.random.default_rng(seed)
    X = model_features(grid)
    ids = sorted(rng.choice(grid.n_plots, n_train, replace=False).tolist())
    train = TrainingSet(X[ids], rng.normal(50, 5, n_train), rng.choice([0.25, 6.25], n_train))
    return GPModel.centered(train, PARAMS), ids


def oracle_score(model, sites, mobile, X):
    D = model.train
    cond_X = np.vstack([D.points, X[sorted(sites)]])
    cond_s2 = np.concatenate([D.noise_variances, np.full(len(sites), NOISE.static_var)])
    idx = sorted(mobile)
    cov = oracles.dense_cond_cov(cond_X, cond_s2, X[idx], PARAMS.output_scale, PARAMS.length_scales, 1e-8)
    return oracles.dense_entropy(cov + NOISE.mobile_var * np.eye(len(idx)))


# --- greedy selection -----------------------------------------------------------


def test_uniform_prior_ties_go_to_smallest_id():
    grid, _ = generate_synthetic(width=3, height=4, seed=0)
    X = np.zeros((grid.n_plots, 4))
    X[:, 0] = np.arange(grid.n_plots) * 100.0  # far apart: all prior variances equal
    model = GPModel.prior(PARAMS)
    assert select_static_sites(model, [7, 3, 9], X, 1, 0.25) == [3]


@pytest.mark.parametrize("seed", range(10))
def test_greedy_matches_brute_force(seed):
    grid, _ = generate_synthetic(width=3, height=4, seed=seed)
    X = model_features(grid)
    model, ids = toy_model(seed, grid)
    rng = np.random.default_rng(100 + seed)
    cands = sorted(rng.choice([i for i in range(grid.n_plots) if i not in ids], 6, replace=False).tolist())
    got = select_static_sites(model, cands, X, 2, NOISE.static_var)
    # the dense oracle works on uncentered inputs; only covariances matter here
    expect = oracles.brute_greedy(X[ids], model.train.noise_variances, X[cands], 2,
                                  PARAMS.output_scale, PARAMS.length_scales, NOISE.static_var)
    assert got == [cands[i] for i in expect]


@pytest.mark.parametrize("seed", range(10))
def test_greedy_pair_within_submodular_bound(seed):
    grid, _ = generate_synthetic(width=3, height=3, seed=seed)
    X = model_features(grid)
    model, ids = toy_model(seed, grid)
    rng = np.random.default_rng(200 + seed)
    cands = sorted(rng.choice([i for i in range(grid.n_plots) if i not in ids], 5, replace=False).tolist())
    pair = select_static_sites(model, cands, X, 2, NOISE.static_var)
    cov = oracles.dense_cond_cov(X[ids], model.train.noise_variances, X[pair], PARAMS.output_scale,
                                 PARAMS.length_scales)
    greedy = oracles.dense_entropy(cov + NOISE.static_var * np.eye(2))
    best = oracles.best_pair_entropy(X[ids], model.train.noise_variances, X[cands], PARAMS.output_scale,
                                     PARAMS.length_scales, NOISE.static_var)
    assert greedy > 0
    assert greedy >= (1 - 1 / math.e) * best


def test_too_few_candidates():
    model = GPModel.prior(PARAMS)
    with pytest.raises(InvalidInputError):
        select_static_sites(model, [1], np.zeros((3, 4)), 2, 0.25)


# --- path scoring ---------------------------------------------------------------


def test_scores_match_dense_oracle():
    grid, _ = generate_synthetic(width=2, height=6, seed=4)
    X = model_features(grid)
    model, _ = toy_model(4, grid)
    g = build_graph(grid, (0, 0), [grid.waypoint_cell(5), grid.waypoint_cell(8)])
    paths = enumerate_feasible(g, shortest_cover_cost(g) + 16)
    assert len(paths) >= 3
    sites = [5, 8]
    for path in paths[:3]:
        mobile = path.mobile_plots - set(sites)
        got = score_path(model, sites, path, X, NOISE)
        if not mobile:
            assert got == -math.inf
        else:
            assert got == pytest.approx(oracle_score(model, sites, mobile, X), abs=1e-8)


def test_superset_path_scores_higher():
    grid, _ = generate_synthetic(width=2, height=6, seed=4)
    X = model_features(grid)
    model, _ = toy_model(1, grid)
    scorer = PathScorer(model, [], X, NOISE)
    small = frozenset({0, 2})
    assert scorer.score_set(small | {4}) >= scorer.score_set(small)
    assert scorer.score_set(frozenset()) == -math.inf


def test_degenerate_score_is_pure_noise():
    grid, truth = generate_synthetic(width=2, height=4, seed=2)
    X = model_features(grid)
    model = GPModel(PARAMS, TrainingSet(X, truth.values - truth.values.mean(), np.full(grid.n_plots, 1e-8)))
    scorer = PathScorer(model, [], X, NOISE)
    k = 3
    expect = 0.5 * k * math.log(2 * math.pi * math.e * NOISE.mobile_var)
    assert scorer.score_set(frozenset({0, 1, 2})) == pytest.approx(expect, abs=1e-6)


# --- plan_iteration ---------------------------------------------------------------


def toy_plans(n):
    for seed in range(n):
        grid, _ = generate_synthetic(width=2, height=8, seed=seed)  # 10 x 5 cells
        _, test = split_plots(grid, 3, seed=seed)
        model, _ = toy_model(seed, grid)
        ctx = PlanningContext.for_grid(grid, NOISE, test, p=1 + seed % 3, xi=seed % 5, pruning="none")
        yield seed, grid, model, ctx


def test_maxent_path_maximizes_score_by_rescoring():
    for seed, grid, model, ctx in toy_plans(12):
        plan = plan_iteration(Strategy.MAXENT, model, ctx, (0, 0))
        paths = enumerate_feasible(plan.graph, plan.c_min + ctx.xi, pruning="none")
        scorer = PathScorer(model, plan.static_sites, ctx.features, NOISE, ctx.observable)
        best = max(scorer(p) for p in paths)
        assert plan.score == best
        assert plan.chosen_path.cost <= plan.c_min + ctx.xi
        mobile = scorer.mobile_set(plan.chosen_path)
        if mobile:
            assert plan.score == pytest.approx(oracle_score(model, plan.static_sites, mobile, ctx.features), abs=1e-8)
        assert set(plan.static_sites) <= ctx.observable
        for site in plan.static_sites:
            assert grid.waypoint_cell(site) in [plan.graph.positions[u] for u in plan.chosen_path.nodes]


def test_shortest_and_equisample_rules():
    for seed, grid, model, ctx in toy_plans(12):
        paths_plan = plan_iteration(Strategy.MAXENT, model, ctx, (0, 0))
        paths = enumerate_feasible(paths_plan.graph, paths_plan.c_min + ctx.xi)
        shortest = plan_iteration(Strategy.SHORTEST, model, ctx, (0, 0))
        cheapest = min(p.cost for p in paths)
        assert shortest.chosen_path == next(p for p in paths if p.cost == cheapest)
        equi = plan_iteration(Strategy.EQUISAMPLE, model, ctx, (0, 0))
        scorer = PathScorer(model, paths_plan.static_sites, ctx.features, NOISE, ctx.observable)
        target = len(scorer.mobile_set(paths_plan.chosen_path))
        gaps = [abs(len(scorer.mobile_set(p)) - target) for p in paths]
        assert equi.chosen_path == paths[gaps.index(min(gaps))]


def test_zero_slack_shortest_tie_is_lexicographic():
    grid = default_layout()
    X = model_features(grid)
    model = GPModel.prior(PARAMS)
    ctx = PlanningContext(grid, X, NOISE, frozenset(range(grid.n_plots)), p=2, xi=0)
    plan = plan_iteration(Strategy.SHORTEST, model, ctx, (13, 0))
    paths = enumerate_feasible(plan.graph, plan.c_min)
    assert plan.chosen_path == paths[0]
    assert plan.chosen_path.cost == plan.c_min


def test_naive_static_first_leg():
    grid = default_layout()
    ctx = PlanningContext.for_grid(grid, NOISE)
    plan = plan_iteration(Strategy.NAIVE_STATIC, GPModel.prior(PARAMS), ctx, grid.waypoint_cell(0))
    first_col = grid.column_plots()[0]
    assert plan.static_sites == tuple(first_col) and len(first_col) == 25
    assert plan.chosen_path.cost == 24
    mobile = plan_iteration(Strategy.NAIVE_MOBILE, GPModel.prior(PARAMS), ctx, grid.waypoint_cell(0))
    assert mobile.static_sites == () and mobile.mobile_plots == frozenset(first_col)


def test_naive_second_leg_runs_north_two_columns_east():
    grid, truth = generate_synthetic(seed=0)
    m = run_mission("naive-static", grid, truth, NOISE, 0, iterations=2, refit=False)
    second = m.records[1].plan
    assert second.static_sites == tuple(grid.column_plots()[1][::-1])
    start = second.graph.positions[second.chosen_path.nodes[0]]
    end = second.graph.positions[second.chosen_path.nodes[-1]]
    assert start == (25, 0) and end == (1, 2)
    assert second.chosen_path.cost == 28


# --- run_mission ------------------------------------------------------------------


def test_zero_iterations_gives_prior():
    grid, truth = generate_synthetic(seed=0)
    m = run_mission("maxent", grid, truth, NOISE, 0, iterations=0)
    assert m.records == [] and m.final_model is m.prior_model and m.distance == 0


def test_default_maxent_mission():
    grid, truth = generate_synthetic(seed=1)
    _, test = split_plots(grid, 40, seed=1)
    m = run_mission("maxent", grid, truth, NOISE, 1, test_ids=test)
    assert m.error is None
    assert len(m.records) == 8
    statics = [x.plot_id for x in m.measurements if x.kind == "static"]
    assert len(statics) == 32 and len(set(statics)) == 32
    assert not set(x.plot_id for x in m.measurements) & set(test)
    for rec in m.records:
        assert rec.plan.c_min <= rec.plan.chosen_path.cost <= rec.plan.c_min
    distances = [r.distance for r in m.records]
    assert distances == sorted(distances)


def test_mission_is_deterministic():
    grid, truth = generate_synthetic(seed=2)
    a = run_mission("maxent", grid, truth, NOISE, 5, iterations=3)
    b = run_mission("maxent", grid, truth, NOISE, 5, iterations=3)
    assert a.measurements == b.measurements
    assert [r.plan.chosen_path for r in a.records] == [r.plan.chosen_path for r in b.records]
    assert [r.model.params for r in a.records] == [r.model.params for r in b.records]


def test_distance_cap_and_route_exhaustion():
    grid, truth = generate_synthetic(width=3, height=4, seed=0)
    m = run_mission("naive-mobile", grid, truth, NOISE, 0, iterations=None)
    assert m.completed and len(m.records) == 3
    capped = run_mission("maxent", grid, truth, NOISE, 0, iterations=None, p=2, distance_cap=10)
    assert capped.distance >= 10
    assert capped.records[-2].distance < 10 if len(capped.records) > 1 else True


def test_invalid_parameters():
    grid, truth = generate_synthetic(width=3, height=4, seed=0)
    with pytest.raises(InvalidInputError):
        run_mission("maxent", grid, truth, NOISE, 0, p=0)
    with pytest.raises(InvalidInputError):
        run_mission("maxent", grid, truth, NOISE, 0, xi=-1)
    with pytest.raises(ValueError):
        run_mission("random", grid, truth, NOISE, 0)
