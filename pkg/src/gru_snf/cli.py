import argparse
import logging
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from . import __version__
from ._checkpoint import load_checkpoint, save_checkpoint
from ._training import train, write_loss_curve
from .config import (
    HORIZON_PRESETS,
    Horizon,
    RunConfig,
    load_run_config,
    parse_override,
    write_run_config,
)
from .data import (
    DatasetSplit,
    EvaluationWindow,
    evaluation_windows,
    gen_forked,
    load_keypoints,
    save_keypoints,
)
from .errors import (
    ConfigError,
    ContractError,
    GruSnfError,
    PipelineIOError,
    StageError,
    TrainingError,
)
from .metrics import (
    SampleSet,
    density_curve,
    evaluate_window,
    mode_coverage,
    mode_references,
    normalized_ratio_report,
    read_samples_jsonl,
    summarize,
    write_density_csv,
    write_json,
    write_report_csv,
    write_samples_jsonl,
)
from .model import init_model, sample_plain
from .sampler import (
    sample_refined_with_diagnostics,
    summarize_diagnostics,
    write_diagnostics_jsonl,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
CHECKPOINT_NAME = "checkpoint.gsnf"
LAST_FINITE_NAME = "checkpoint.last_finite.gsnf"
MODES = ("plain", "refined")

T = TypeVar("T")


def _horizon(cfg: RunConfig) -> Horizon:
    return cfg.horizons[0]


def _data_dir(cfg: RunConfig, data_dir: Optional[Path]) -> Path:
    return Path(data_dir) if data_dir is not None else cfg.out_dir / "data"


def _samples_path(out_dir: Path, mode: str) -> Path:
    return out_dir / f"samples_{mode}.jsonl"


def cmd_gen_data(cfg: RunConfig, out_dir: Optional[Path] = None) -> Path:
    """Generate the synthetic forked dataset for the first configured horizon."""
    prefix, suffix = _horizon(cfg)
    spec = cfg.data
    directory = _data_dir(cfg, out_dir)
    split = gen_forked(
        spec.train_trajectories,
        spec.keypoints,
        prefix,
        suffix,
        spec.modes,
        spec.noise_std,
        cfg.seed,
        val_trajectories=spec.val_trajectories,
        test_trajectories=spec.test_trajectories,
        family_size=spec.family_size,
        speed=spec.speed,
        articulation=spec.articulation,
        mode_angle=spec.mode_angle,
    )
    save_keypoints(split, directory, data_format=cfg.data_format)
    write_run_config(cfg, directory)
    return directory


def cmd_train(
    cfg: RunConfig, data_dir: Optional[Path] = None, out_dir: Optional[Path] = None
) -> Path:
    """Train from a fresh initialization; writes the checkpoint and the loss curve."""
    out_dir = cfg.out_dir if out_dir is None else Path(out_dir)
    split = load_keypoints(_data_dir(cfg, data_dir))
    if not split.train:
        raise ContractError("Dataset has no training sequences")
    model = init_model(
        split.dim,
        hidden_size=cfg.model.hidden_size,
        flow_layers=cfg.model.flow_layers,
        conditioner_width=cfg.model.conditioner_width,
        scale_cap=cfg.model.scale_cap,
        seed=cfg.seed,
    )
    write_run_config(cfg, out_dir)
    try:
        model, curve = train(model, split.train, cfg.train, val_sequences=split.val)
    except TrainingError as e:
        if e.last_model is not None:
            save_checkpoint(e.last_model, out_dir / LAST_FINITE_NAME)
        if e.curve:
            write_loss_curve(out_dir / "loss_curve.csv", e.curve)
        logger.warning(f"Training aborted, last finite model kept in {out_dir}")
        raise
    write_loss_curve(out_dir / "loss_curve.csv", curve)
    path = save_checkpoint(model, out_dir / CHECKPOINT_NAME)
    logger.info(
        f"Trained {model.metadata.epochs} epochs "
        f"(NLL {model.metadata.initial_nll} -> {model.metadata.final_nll}); "
        f"wrote {path}"
    )
    return path


def _windows(cfg: RunConfig, split: DatasetSplit) -> List[EvaluationWindow]:
    prefix, suffix = _horizon(cfg)
    windows = evaluation_windows(split.test, prefix, suffix, limit=cfg.test_windows)
    if not windows:
        raise ContractError("Dataset has no test sequences")
    return windows


def cmd_sample(
    cfg: RunConfig,
    mode: str,
    checkpoint: Optional[Path] = None,
    data_dir: Optional[Path] = None,
    out_dir: Optional[Path] = None,
) -> Path:
    """Draw `samples` trajectories per test window with the plain or refined sampler."""
    if mode not in MODES:
        raise ConfigError(f"Unknown sampling mode: {mode}")
    out_dir = cfg.out_dir if out_dir is None else Path(out_dir)
    if checkpoint is None:
        checkpoint = out_dir / CHECKPOINT_NAME
    model = load_checkpoint(checkpoint)
    split = load_keypoints(_data_dir(cfg, data_dir))
    if split.dim != model.dims.d:
        raise ConfigError(f"Checkpoint has d={model.dims.d}, dataset has d={split.dim}")
    _, suffix = _horizon(cfg)
    seed = cfg.sampler.seed if cfg.sampler.seed is not None else cfg.seed
    sample_sets: List[SampleSet] = []
    records: List[Dict[str, Any]] = []
    started = time.perf_counter()
    for window in _windows(cfg, split):
        if mode == "plain":
            sample_sets.append(
                sample_plain(
                    model, window, suffix, cfg.samples, seed, scheduler=cfg.scheduler
                )
            )
        else:
            sample_set, chains = sample_refined_with_diagnostics(
                model,
                window,
                suffix,
                cfg.samples,
                cfg.sampler,
                seed=seed,
                scheduler=cfg.scheduler,
            )
            sample_sets.append(sample_set)
            records.extend(summarize_diagnostics(chains, window.window_id))
    elapsed = time.perf_counter() - started
    logger.info(
        f"Sampled {len(sample_sets)} windows in {mode} mode: "
        f"{elapsed / len(sample_sets):.3f} s per window"
    )
    path = _samples_path(out_dir, mode)
    write_samples_jsonl(path, sample_sets)
    if mode == "refined":
        write_diagnostics_jsonl(out_dir / "diagnostics_refined.jsonl", records)
    write_run_config(cfg, out_dir)
    return path


def _coverage(
    sample_sets: Sequence[SampleSet],
    windows: Dict[str, EvaluationWindow],
    share: float,
) -> Optional[float]:
    covered = []
    for sample_set in sample_sets:
        window = windows[sample_set.window_id]
        references = mode_references(window.truth_set, window.truth_modes)
        if references:
            covered.append(mode_coverage(sample_set, references, share).covered)
    return float(np.mean(covered)) if covered else None


def cmd_evaluate(
    cfg: RunConfig,
    plain_path: Optional[Path] = None,
    refined_path: Optional[Path] = None,
    data_dir: Optional[Path] = None,
    out_dir: Optional[Path] = None,
) -> Dict[str, Any]:
    """Score both sample files against the test windows and write the reports."""
    out_dir = cfg.out_dir if out_dir is None else Path(out_dir)
    plain_sets = read_samples_jsonl(plain_path or _samples_path(out_dir, "plain"))
    refined_sets = read_samples_jsonl(refined_path or _samples_path(out_dir, "refined"))
    split = load_keypoints(_data_dir(cfg, data_dir))
    windows = {w.window_id: w for w in _windows(cfg, split)}
    sample_ids = {s.window_id for s in [*plain_sets, *refined_sets]}
    missing = sorted(sample_ids.difference(windows))
    if missing:
        raise ContractError(f"Samples refer to unknown windows: {missing}")

    def score(sample_sets: Sequence[SampleSet]) -> List[Any]:
        scored = []
        for sample_set in sample_sets:
            window = windows[sample_set.window_id]
            if sample_set.samples.shape[1:] != window.truth.shape:
                raise ContractError(
                    f"Window {sample_set.window_id}: samples of shape "
                    f"{sample_set.samples.shape[1:]}, truth {window.truth.shape}"
                )
            scored.append(
                evaluate_window(
                    sample_set,
                    window.truth,
                    window.truth_set,
                    keep=cfg.metrics.keep,
                    energy_mode=cfg.metrics.energy_mode,
                )
            )
        return scored

    plain_report, refined_report = normalized_ratio_report(
        score(plain_sets), score(refined_sets)
    )
    write_report_csv(out_dir / "report.csv", [plain_report, refined_report])
    for report in (plain_report, refined_report):
        ratios = [row.ratio for row in report.rows]
        try:
            curve = density_curve(ratios, cfg.metrics.density_points)
        except ContractError as e:
            logger.warning(f"No density curve for {report.model_tag}: {e}")
            continue
        write_density_csv(out_dir / f"density_{report.model_tag}.csv", curve)
    coverage = {
        tag: _coverage(sets, windows, cfg.metrics.mode_share)
        for tag, sets in (("plain", plain_sets), ("refined", refined_sets))
    }
    has_labels = any(value is not None for value in coverage.values())
    summary = summarize(plain_report, refined_report, coverage if has_labels else None)
    write_json(out_dir / "summary.json", summary)
    write_run_config(cfg, out_dir)
    logger.info(
        f"Ratio plain={plain_report.mean_ratio:.4f}, "
        f"refined={refined_report.mean_ratio:.4f}, "
        f"improvement={summary['improvement_pct']['ratio']}%"
    )
    return summary


def _stage(name: str, fn: Callable[..., T], *args: Any, **kwargs: Any) -> T:
    logger.info(f"Stage {name}")
    try:
        return fn(*args, **kwargs)
    except GruSnfError as e:
        raise StageError(name, e) from e
    except OSError as e:
        raise StageError(name, PipelineIOError(str(e))) from e


def cmd_compare(cfg: RunConfig) -> Dict[str, Any]:
    """gen-data, train, sample (both modes) and evaluate per configured horizon."""
    results: Dict[str, Any] = {}
    for prefix, suffix in cfg.horizons:
        tag = f"h{prefix}-{suffix}"
        sub = cfg.model_copy(
            update={"out_dir": cfg.out_dir / tag, "horizons": [(prefix, suffix)]}
        )
        _stage(f"{tag}/gen-data", cmd_gen_data, sub)
        _stage(f"{tag}/train", cmd_train, sub)
        for mode in MODES:
            _stage(f"{tag}/sample-{mode}", cmd_sample, sub, mode)
        summary = _stage(f"{tag}/evaluate", cmd_evaluate, sub)
        gains = summary["improvement_pct"]
        results[tag] = {
            "plain_ratio": summary["plain"]["ratio"],
            "refined_ratio": summary["refined"]["ratio"],
            "ratio_improvement_pct": gains["ratio"],
            "energy_distance_improvement_pct": gains["energy_distance"],
        }
    overview = {"space": "keypoint", "horizons": results}
    write_json(cfg.out_dir / "summary.json", overview)
    write_run_config(cfg, cfg.out_dir)
    return overview


def _parse_horizon(text: str) -> Tuple[int, int]:
    try:
        prefix, suffix = (int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"Horizon must look like M,N, got {text!r}")
    return prefix, suffix


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = dict(parse_override(item) for item in args.set)
    if args.preset is not None:
        overrides["horizons"] = [list(h) for h in HORIZON_PRESETS[args.preset]]
    if args.horizon:
        overrides["horizons"] = [list(h) for h in args.horizon]
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = str(args.out_dir)
    return load_run_config(args.config, overrides)


def _run_gen_data(args: argparse.Namespace) -> None:
    cmd_gen_data(_resolve_config(args), out_dir=args.data)


def _run_train(args: argparse.Namespace) -> None:
    cmd_train(_resolve_config(args), data_dir=args.data)


def _run_sample(args: argparse.Namespace) -> None:
    cmd_sample(
        _resolve_config(args),
        args.mode,
        checkpoint=args.checkpoint,
        data_dir=args.data,
    )


def _run_evaluate(args: argparse.Namespace) -> None:
    cmd_evaluate(
        _resolve_config(args),
        plain_path=args.plain,
        refined_path=args.refined,
        data_dir=args.data,
    )


def _run_compare(args: argparse.Namespace) -> None:
    cmd_compare(_resolve_config(args))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gru-snf",
        description="GRU-NF keypoint forecasting with MCMC-refined sampling",
    )
    parser.add_argument("--version", action="version", version=__version__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a dotted config key, e.g. sampler.m=4",
    )
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", type=Path)
    common.add_argument(
        "--horizon", type=_parse_horizon, action="append", metavar="M,N"
    )
    common.add_argument("--preset", choices=sorted(HORIZON_PRESETS))
    common.add_argument("--data", type=Path, help="dataset directory or keypoint file")

    subparsers = parser.add_subparsers(dest="command", required=True)
    gen_data = subparsers.add_parser("gen-data", parents=[common])
    gen_data.set_defaults(func=_run_gen_data)
    train_parser = subparsers.add_parser("train", parents=[common])
    train_parser.set_defaults(func=_run_train)
    sample = subparsers.add_parser("sample", parents=[common])
    sample.add_argument("--mode", choices=MODES, default="refined")
    sample.add_argument("--checkpoint", type=Path)
    sample.set_defaults(func=_run_sample)
    evaluate = subparsers.add_parser("evaluate", parents=[common])
    evaluate.add_argument("--plain", type=Path)
    evaluate.add_argument("--refined", type=Path)
    evaluate.set_defaults(func=_run_evaluate)
    compare = subparsers.add_parser("compare", parents=[common])
    compare.set_defaults(func=_run_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        args.func(args)
    except GruSnfError as e:
        logger.error(str(e))
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return PipelineIOError.exit_code
    return 0


__all__ = [
    "build_parser",
    "cmd_compare",
    "cmd_evaluate",
    "cmd_gen_data",
    "cmd_sample",
    "cmd_train",
    "main",
]
