import math

import numpy as np
import pytest

from phenopath import cli
from phenopath.errors import InvalidInputError
from phenopath.gp import GPModel, KernelParams, TrainingSet
from phenopath.harness import (
    SERIES_HEADER,
    SWEEP_HEADER,
    ExperimentConfig,
    MetricSeries,
    SeriesRow,
    SweepTable,
    aggregate,
    compute_mae,
    csv_text,
    emit_csv,
    format_cell,
    read_series_csv,
    run_batch,
    sweep_noise_ratio,
    sweep_slack,
)

STRATEGIES = ("maxent", "shortest", "equisample", "naive-static", "naive-mobile")


class ConstantModel:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def predict_mean(self, X):
        return self.values[: len(X)]


def test_mae_examples():
    truth = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    X = np.zeros((5, 1))
    assert compute_mae(ConstantModel(truth), X, truth) == 0.0
    assert compute_mae(ConstantModel(truth + 1.5), X, truth) == pytest.approx(1.5)
    pred = [1.5, 1.0, 3.0, 6.0, 4.0]  # residuals 0.5, 1, 0, 2, 1
    assert compute_mae(ConstantModel(pred), X, truth) == pytest.approx(4.5 / 5)
    with pytest.raises(InvalidInputError):
        compute_mae(ConstantModel([]), np.zeros((0, 1)), [])


def test_mae_on_gp_model():
    model = GPModel.centered(TrainingSet([[0.0]], [10.0], [0.1]), KernelParams(1.0, (1.0,)))
    assert compute_mae(model, [[100.0], [200.0]], [12.0, 7.0]) == pytest.approx(2.5)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        ExperimentConfig(k=0, sigma_m=None)
    with pytest.raises(InvalidInputError):
        ExperimentConfig(sigma_m=0.1)
    with pytest.raises(InvalidInputError):
        ExperimentConfig(seeds=(1, 1))
    with pytest.raises(ValueError):
        ExperimentConfig(strategies=("random",))
    cfg = ExperimentConfig(sigma_m=None, k=5)
    assert cfg.noise.mobile_std == 2.5


def test_zero_iterations_gives_prior_point():
    series = run_batch(ExperimentConfig(seeds=(0,), iterations=0))
    assert [(r.iteration, r.distance, r.n_static, r.n_mobile) for r in series.rows] == [(0, 0, 0, 0)]
    assert series.rows[0].mae > 0


def test_five_strategies_twenty_seeds():
    cfg = ExperimentConfig(strategies=STRATEGIES, seeds=tuple(range(20)), distance_cap=1, p=1)
    series = run_batch(cfg)
    assert not series.errors
    assert len(series.keys()) == 100
    for key in series.keys():
        rows = series.series(*key)
        assert [r.iteration for r in rows] == list(range(len(rows)))
        assert rows[-1].distance >= 1 and all(r.distance == 0 for r in rows[:-1])


def test_reordered_seeds_give_identical_cells():
    a = run_batch(ExperimentConfig(strategies=("maxent",), seeds=(0, 1, 2), iterations=2))
    b = run_batch(ExperimentConfig(strategies=("maxent",), seeds=(2, 0, 1), iterations=2))
    for seed in (0, 1, 2):
        assert a.series("maxent", seed) == b.series("maxent", seed)


def test_errors_recorded_per_cell(tmp_path):
    series = run_batch(ExperimentConfig(field=str(tmp_path / "missing.csv"), seeds=(0, 1), iterations=1))
    assert set(series.errors) == {("maxent", 0), ("maxent", 1)}
    assert series.rows == []


def test_empty_and_two_row_csv(tmp_path):
    path = emit_csv(MetricSeries(), tmp_path / "empty.csv")
    assert path.read_bytes() == (",".join(SERIES_HEADER) + "\n").encode()
    assert csv_text(SweepTable()) == ",".join(SWEEP_HEADER) + "\n"
    series = MetricSeries([SeriesRow("maxent", 3, 1, 40, 0.1, 4, 20), SeriesRow("maxent", 1, 0, 0, 2.5, 0, 0)])
    lines = csv_text(series).splitlines()
    assert lines[1:] == ["maxent,3,1,40,0.1,4,20", "maxent,1,0,0,2.5,0,0"]
    assert b"\r" not in emit_csv(series, tmp_path / "two.csv").read_bytes()


def test_emit_csv_reports_path(tmp_path):
    with pytest.raises(OSError, match="nowhere"):
        emit_csv(MetricSeries(), tmp_path / "nowhere" / "x.csv")
    with pytest.raises(InvalidInputError):
        csv_text([1, 2])


def test_round_trip_reaggregation(tmp_path):
    series = run_batch(ExperimentConfig(strategies=("maxent", "naive-static"), seeds=(0, 1), iterations=2,
                                        distance_cap=120))
    path = emit_csv(series, tmp_path / "s.csv")
    back = read_series_csv(path)
    assert back.rows == series.rows
    assert aggregate(back) == aggregate(series)


def test_aggregate_matches_independent_pass():
    series = run_batch(ExperimentConfig(strategies=("maxent", "naive-mobile"), seeds=(0, 1, 2), iterations=2,
                                        distance_cap=150))
    for pt in aggregate(series):
        vals = []
        for seed in (0, 1, 2):
            rows = series.series(pt.strategy, seed)
            d = [r.distance for r in rows]
            if d[-1] >= pt.distance:
                vals.append(np.interp(pt.distance, d, [r.mae for r in rows]))
        assert pt.n_seeds == len(vals)
        assert abs(pt.mae_mean - np.mean(vals)) <= 1e-12
        expect_std = np.std(vals, ddof=1) if len(vals) > 1 else 0.0
        assert abs(pt.mae_std - expect_std) <= 1e-12


def test_naive_static_has_more_samples_at_equal_distance():
    series = run_batch(ExperimentConfig(strategies=("maxent", "naive-static"), seeds=(0, 1)))
    for cp in range(50, 251, 10):
        m = series.at_distance("maxent", cp, "samples")
        n = series.at_distance("naive-static", cp, "samples")
        for seed in m:
            assert n[seed] > m[seed]


def test_sweeps_small():
    cfg = ExperimentConfig(seeds=(0, 1), iterations=1, distance_cap=None)
    table = sweep_noise_ratio(cfg, ks=(1, 10))
    assert [r.value for r in table.rows] == [1.0, 10.0]
    assert all(r.n_seeds == 2 and r.param == "k" for r in table.rows)
    assert "k=1 | k=10" in table.format()
    with pytest.raises(InvalidInputError):
        sweep_noise_ratio(cfg, ks=(0,))
    slack = sweep_slack(cfg, xis=(0, 5))
    for xi, batch in slack.batches.items():
        for st in batch.steps:
            assert st.c_min <= st.cost <= st.c_min + xi
    with pytest.raises(InvalidInputError):
        sweep_slack(cfg, xis=(-1,))


def test_format_cell():
    assert format_cell(4.0812, 0.7011) == "4.08(0.70)"


# --- command line ----------------------------------------------------------------


def test_cli_generate_field(tmp_path, capsys):
    out = tmp_path / "f.csv"
    assert cli.main(["generate-field", "--field", "synthetic:4", "--out", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("row,col,vegetation_index,leaf_angle_density,stalk_height\n")
    assert len(text.splitlines()) == 376
    assert cli.main(["generate-field", "--field", "oops"]) == 2


def test_cli_run_and_dataset_field(tmp_path, capsys):
    field = tmp_path / "f.csv"
    cli.main(["generate-field", "--field", "synthetic:4", "--out", str(field)])
    out = tmp_path / "run.csv"
    code = cli.main(["run", "--field", str(field), "--strategy", "maxent,naive-mobile", "--seeds", "1",
                     "--iterations", "1", "--distance-cap", "60", "--out", str(out)])
    assert code == 0
    rows = read_series_csv(out).rows
    assert {r.strategy for r in rows} == {"maxent", "naive-mobile"}
    assert "strategy  distance" in capsys.readouterr().out


def test_cli_rejects_bad_noise(capsys):
    assert cli.main(["run", "--k", "0", "--seeds", "1"]) == 2
    assert "noise ratio" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["run", "--strategy", "nope"])
    with pytest.raises(SystemExit):
        cli.main(["run", "--k", "2", "--sigma-m", "1.0"])


def test_cli_sweep_slack_csv(tmp_path):
    out = tmp_path / "slack.csv"
    assert cli.main(["sweep-slack", "--seeds", "1", "--iterations", "1", "--xis", "0,5", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER)
    assert [l.split(",")[:2] for l in lines[1:]] == [["xi", "0.0"], ["xi", "5.0"]]
    assert not math.isnan(float(lines[1].split(",")[2]))


def test_cli_byte_identical_reruns(tmp_path):
    args = ["run", "--strategy", "maxent", "--seeds", "2", "--iterations", "2"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
