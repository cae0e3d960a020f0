import csv
import json
import math

import numpy as np
import pytest

from gru_snf.cli import build_parser, cmd_compare, main
from gru_snf.config import HORIZON_PRESETS, ModelSpec, RunConfig, TrainConfig
from gru_snf.data import evaluation_windows, load_keypoints
from gru_snf.metrics import mode_coverage, mode_references, read_samples_jsonl


def _options(out_dir, *extra):
    settings = [
        "data.keypoints=1",
        "data.train_trajectories=20",
        "data.val_trajectories=10",
        "data.test_trajectories=20",
        "model.hidden_size=4",
        "model.flow_layers=2",
        "model.conditioner_width=4",
        "train.epochs=1",
        "train.batch_size=8",
        "samples=6",
        "metrics.keep=3",
        *extra,
    ]
    options = ["--out-dir", str(out_dir), "--seed", "1", "--horizon", "3,2"]
    for setting in settings:
        options += ["--set", setting]
    return options


def _values(path):
    return [json.loads(line)["values"] for line in path.read_text().splitlines()]


@pytest.fixture
def trained_run(tmp_path):
    run = tmp_path / "run"
    assert main(["gen-data", *_options(run)]) == 0
    assert main(["train", *_options(run)]) == 0
    return run


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["sample", "--mode", "plain", "--horizon", "4,5"])
    assert args.horizon == [(4, 5)]
    assert args.mode == "plain"


def test_gen_data_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", *_options(tmp_path / name)]) == 0
    for filename in ("train.csv", "val.csv", "test.csv", "dataset.json"):
        first = (tmp_path / "a" / "data" / filename).read_bytes()
        assert first == (tmp_path / "b" / "data" / filename).read_bytes()
    rows = (tmp_path / "a" / "data" / "train.csv").read_text().splitlines()
    assert rows[0] == "seq_id,frame,kp0_x,kp0_y"
    assert len(rows) == 1 + 20 * 5


def test_gen_data_records_generator_settings(tmp_path):
    run = tmp_path / "run"
    assert main(["gen-data", *_options(run, "data.modes=3")]) == 0
    sidecar = json.loads((run / "data" / "dataset.json").read_text())
    assert sidecar["params"]["modes"] == 3
    assert sidecar["seed"] == 1
    assert sidecar["format"] == "csv"
    assert (run / "data" / "config.yaml").exists()


def test_train_writes_artifacts(trained_run):
    assert (trained_run / "checkpoint.gsnf").exists()
    curve = (trained_run / "loss_curve.csv").read_text().splitlines()
    assert curve[0] == "epoch,train_nll,val_nll"
    assert len(curve) == 2


def test_refined_without_steps_matches_plain(trained_run):
    assert main(["sample", "--mode", "plain", *_options(trained_run)]) == 0
    refined = _options(trained_run, "sampler.m=0")
    assert main(["sample", "--mode", "refined", *refined]) == 0
    plain_values = _values(trained_run / "samples_plain.jsonl")
    assert plain_values == _values(trained_run / "samples_refined.jsonl")
    # 2 families of 10 test trajectories, 6 samples each
    assert len(plain_values) == 12
    assert (trained_run / "diagnostics_refined.jsonl").exists()


def test_evaluating_identical_samples(trained_run):
    assert main(["sample", "--mode", "plain", *_options(trained_run)]) == 0
    samples = str(trained_run / "samples_plain.jsonl")
    options = [*_options(trained_run), "--plain", samples, "--refined", samples]
    assert main(["evaluate", *options]) == 0
    summary = json.loads((trained_run / "summary.json").read_text())
    assert summary["space"] == "keypoint"
    assert summary["windows"] == 2
    assert summary["improvement_pct"] == {"energy_distance": 0.0, "ratio": 0.0}
    report = (trained_run / "report.csv").read_text().splitlines()
    assert len(report) == 1 + 2 * 2


def test_exit_codes(tmp_path, trained_run):
    missing = str(tmp_path / "absent.gsnf")
    sample = ["sample", "--checkpoint", missing, *_options(trained_run)]
    assert main(sample) == 5
    assert main(["train", *_options(trained_run, "train.momentum=0.9")]) == 2
    assert main(["train", *_options(tmp_path / "empty")]) == 5


def test_unwritable_output_exits_with_io_code(tmp_path, trained_run):
    blocker = tmp_path / "occupied"
    blocker.write_text("not a directory")
    assert main(["gen-data", *_options(blocker)]) == 5
    data_option = ["--data", str(blocker)]
    assert main(["gen-data", *_options(tmp_path / "other"), *data_option]) == 5
    (trained_run / "samples_plain.jsonl").mkdir()
    assert main(["sample", "--mode", "plain", *_options(trained_run)]) == 5
    (trained_run / "diagnostics_refined.jsonl").mkdir()
    refined = _options(trained_run, "sampler.m=0")
    assert main(["sample", "--mode", "refined", *refined]) == 5


def test_compare_is_deterministic(tmp_path):
    summaries = []
    for name in ("a", "b"):
        run = tmp_path / name
        assert main(["compare", *_options(run, "sampler.m=1")]) == 0
        summaries.append((run / "summary.json").read_text())
        assert (run / "h3-2" / "report.csv").exists()
    assert summaries[0] == summaries[1]
    overview = json.loads(summaries[0])
    assert list(overview["horizons"]) == ["h3-2"]


BENCHMARK_SEEDS = (1, 2, 3, 4, 5)
BENCHMARK_TAGS = [f"h{m}-{n}" for m, n in HORIZON_PRESETS["voxceleb"]]
LONGEST = BENCHMARK_TAGS[-1]


@pytest.fixture(scope="module")
def benchmark_runs(tmp_path_factory):
    """Full compare pipeline on the forked benchmark, once per seed."""
    runs = {}
    for seed in BENCHMARK_SEEDS:
        cfg = RunConfig(
            seed=seed,
            out_dir=tmp_path_factory.mktemp(f"seed{seed}"),
            horizons=HORIZON_PRESETS["voxceleb"],
            model=ModelSpec(hidden_size=32, conditioner_width=32),
            train=TrainConfig(epochs=30),
        )
        runs[seed] = (cfg.out_dir, cmd_compare(cfg))
    return runs


def _report_rows(path):
    with path.open(newline="") as f:
        return list(csv.DictReader(f))


@pytest.mark.slow
def test_benchmark_reports_improvement_per_horizon(benchmark_runs):
    for out_dir, overview in benchmark_runs.values():
        assert list(overview["horizons"]) == BENCHMARK_TAGS
        for tag in BENCHMARK_TAGS:
            entry = overview["horizons"][tag]
            assert math.isfinite(entry["energy_distance_improvement_pct"])
            assert math.isfinite(entry["ratio_improvement_pct"])
            summary = json.loads((out_dir / tag / "summary.json").read_text())
            assert summary["improvement_pct"]["ratio"] == entry["ratio_improvement_pct"]


@pytest.mark.slow
@pytest.mark.parametrize("tag", BENCHMARK_TAGS)
def test_refined_energy_distance_wins_most_seeds(benchmark_runs, tag):
    gains = [
        overview["horizons"][tag]["energy_distance_improvement_pct"]
        for _, overview in benchmark_runs.values()
    ]
    assert sum(gain >= 0.0 for gain in gains) >= 4, gains


@pytest.mark.slow
def test_refined_ratio_wins_longest_horizon(benchmark_runs):
    wins = []
    for out_dir, _ in benchmark_runs.values():
        rows = _report_rows(out_dir / LONGEST / "report.csv")
        ratios = {"plain": [], "refined": []}
        for row in rows:
            norm_apd, norm_mae = float(row["norm_apd"]), float(row["norm_mae"])
            ratio = float(row["ratio"])
            assert ratio == pytest.approx(norm_apd / max(norm_mae, 1e-6), rel=1e-6)
            ratios[row["model"]].append(ratio)
        # the floored MAE of the best window dominates a plain mean
        wins.append(np.median(ratios["refined"]) > np.median(ratios["plain"]))
    assert sum(wins) >= 4, wins


@pytest.mark.slow
def test_refined_samples_cover_both_modes(benchmark_runs):
    prefix, suffix = HORIZON_PRESETS["voxceleb"][-1]
    plain_full, refined_full = 0, 0
    for out_dir, _ in benchmark_runs.values():
        run = out_dir / LONGEST
        split = load_keypoints(run / "data")
        windows = {
            w.window_id: w for w in evaluation_windows(split.test, prefix, suffix)
        }
        covered = {}
        for mode in ("plain", "refined"):
            fractions = []
            for sample_set in read_samples_jsonl(run / f"samples_{mode}.jsonl"):
                window = windows[sample_set.window_id]
                references = mode_references(window.truth_set, window.truth_modes)
                if len(references) < 2:
                    continue
                coverage = mode_coverage(sample_set.samples, references, min_share=0.1)
                fractions.append(coverage.covered)
            covered[mode] = float(np.mean(fractions))
        plain_full += covered["plain"] == 1.0
        refined_full += covered["refined"] == 1.0
        assert covered["refined"] >= 0.5, covered
    assert refined_full >= plain_full
