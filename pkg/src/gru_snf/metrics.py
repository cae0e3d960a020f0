"""Keypoint-space evaluation of sample sets: energy distance, APD, MAE, top-C selection,
pooled min-max normalization, the APD-to-MAE ratio and its kernel density curve.

All functions are pure. Trajectories are compared as flattened N*d vectors.
"""
import csv
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.stats import gaussian_kde

from .errors import (
    ContractError,
    DataError,
    NormalizationError,
    PipelineIOError,
    ShapeError,
)

PathLike = Union[str, os.PathLike]

logger = logging.getLogger(__name__)

MAE_FLOOR = 1e-6
REPORT_COLUMNS = (
    "window_id",
    "model",
    "energy_distance",
    "mae",
    "apd",
    "norm_mae",
    "norm_apd",
    "ratio",
)


@dataclass(frozen=True)
class SampleSet:
    # D x N x d
    samples: np.ndarray
    window_id: str
    model_tag: str

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 3:
            raise ShapeError(f"Samples must be D x N x d, got {samples.shape}")
        if samples.shape[0] < 1:
            raise ContractError("A sample set needs at least one trajectory")
        object.__setattr__(self, "samples", samples)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon(self) -> int:
        return self.samples.shape[1]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]


def _as_vectors(values: Any, what: str) -> np.ndarray:
    array = np.asarray(getattr(values, "samples", values), dtype=np.float64)
    if array.ndim == 1:
        array = array[:, np.newaxis]
    elif array.ndim > 2:
        array = array.reshape(array.shape[0], -1)
    if array.shape[0] == 0:
        raise ContractError(f"{what} is empty")
    return array


def energy_distance(x: Any, y: Any) -> float:
    """V-statistic 2E|X-Y| - E|X-X'| - E|Y-Y'| between two sets of vectors.

    Sets of trajectories are flattened to one vector per trajectory. The result is
    exactly symmetric in its arguments.
    """
    a, b = _as_vectors(x, "First set"), _as_vectors(y, "Second set")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"Vector widths differ: {a.shape[1]} vs {b.shape[1]}")
    # canonical argument order keeps floating point summation order fixed
    if (b.shape[0], b.tobytes()) < (a.shape[0], a.tobytes()):
        a, b = b, a
    cross = cdist(a, b).mean()
    within = cdist(a, a).mean() + cdist(b, b).mean()
    return float(2.0 * cross - within)


def energy_distance_per_timestep(x: Any, y: Any) -> float:
    """Mean over future frames of the energy distance between frame-t vectors."""
    a = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    b = np.asarray(getattr(y, "samples", y), dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(
            f"Per-timestep mode needs D x N x d sets, got {a.shape}, {b.shape}"
        )
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"Trajectory shapes differ: {a.shape[1:]} vs {b.shape[1:]}")
    distances = [energy_distance(a[:, t], b[:, t]) for t in range(a.shape[1])]
    return float(np.mean(distances))


def mae(sample: np.ndarray, truth: np.ndarray) -> float:
    sample = np.asarray(sample, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if sample.shape != truth.shape:
        raise ShapeError(f"Shape mismatch: {sample.shape} vs {truth.shape}")
    return float(np.mean(np.abs(sample - truth)))


def apd(samples: Any) -> float:
    """Mean Euclidean distance over all unordered pairs of trajectories."""
    vectors = _as_vectors(samples, "Sample set")
    if vectors.shape[0] < 2:
        raise ContractError(f"APD needs at least 2 samples, got {vectors.shape[0]}")
    return float(pdist(vectors).mean())


def select_top_c(sample_set: SampleSet, truth: np.ndarray, keep: int) -> SampleSet:
    """The `keep` lowest-MAE samples in original order; ties keep the lower index."""
    if keep < 1 or keep > sample_set.count:
        raise ContractError(f"Cannot keep C={keep} of D={sample_set.count} samples")
    errors = np.array([mae(sample, truth) for sample in sample_set.samples])
    chosen = np.sort(np.argsort(errors, kind="stable")[:keep])
    return SampleSet(
        samples=sample_set.samples[chosen],
        window_id=sample_set.window_id,
        model_tag=sample_set.model_tag,
    )


@dataclass(frozen=True)
class WindowMetrics:
    window_id: str
    model_tag: str
    energy_distance: float
    mae: float
    apd: float


def evaluate_window(
    sample_set: SampleSet,
    truth: np.ndarray,
    truth_set: Optional[np.ndarray] = None,
    keep: int = 20,
    energy_mode: str = "trajectory",
) -> WindowMetrics:
    """Energy distance of all D samples to the truth set, MAE and APD of the top C."""
    truth_set = np.asarray(truth)[np.newaxis] if truth_set is None else truth_set
    if energy_mode == "per_timestep":
        distance = energy_distance_per_timestep(sample_set, truth_set)
    elif energy_mode == "trajectory":
        distance = energy_distance(sample_set, truth_set)
    else:
        raise ContractError(f"Unknown energy mode: {energy_mode}")
    top = select_top_c(sample_set, truth, keep)
    return WindowMetrics(
        window_id=sample_set.window_id,
        model_tag=sample_set.model_tag,
        energy_distance=distance,
        mae=float(np.mean([mae(sample, truth) for sample in top.samples])),
        apd=apd(top),
    )


@dataclass(frozen=True)
class ReportRow:
    window_id: str
    model: str
    energy_distance: float
    mae: float
    apd: float
    norm_mae: float
    norm_apd: float
    ratio: float


@dataclass(frozen=True)
class MetricsReport:
    model_tag: str
    rows: Tuple[ReportRow, ...]

    def _mean(self, name: str) -> float:
        return float(np.mean([getattr(row, name) for row in self.rows]))

    @property
    def means(self) -> Dict[str, float]:
        return {name: self._mean(name) for name in REPORT_COLUMNS[2:]}

    @property
    def mean_ratio(self) -> float:
        return self._mean("ratio")


def _pooled_range(values: Sequence[float], metric: str) -> Tuple[float, float]:
    low, high = float(min(values)), float(max(values))
    if high == low:
        raise NormalizationError(metric, low)
    return low, high


def normalized_ratio_report(
    plain: Sequence[WindowMetrics], refined: Sequence[WindowMetrics]
) -> Tuple[MetricsReport, MetricsReport]:
    """Min-max normalize MAE and APD over the windows of both models, then APD / MAE."""
    if not plain or not refined:
        raise ContractError("Both models need at least one evaluated window")
    plain_ids = [m.window_id for m in plain]
    refined_ids = [m.window_id for m in refined]
    if sorted(plain_ids) != sorted(refined_ids):
        missing = sorted(set(plain_ids).symmetric_difference(refined_ids))
        raise ContractError(f"Window sets differ, unmatched ids: {missing}")
    pooled = [*plain, *refined]
    mae_low, mae_high = _pooled_range([m.mae for m in pooled], "mae")
    apd_low, apd_high = _pooled_range([m.apd for m in pooled], "apd")

    def report(metrics: Sequence[WindowMetrics], tag: str) -> MetricsReport:
        rows = []
        for m in metrics:
            norm_mae = (m.mae - mae_low) / (mae_high - mae_low)
            norm_apd = (m.apd - apd_low) / (apd_high - apd_low)
            rows.append(
                ReportRow(
                    window_id=m.window_id,
                    model=tag,
                    energy_distance=m.energy_distance,
                    mae=m.mae,
                    apd=m.apd,
                    norm_mae=norm_mae,
                    norm_apd=norm_apd,
                    ratio=norm_apd / max(norm_mae, MAE_FLOOR),
                )
            )
        return MetricsReport(model_tag=tag, rows=tuple(rows))

    return report(plain, "plain"), report(refined, "refined")


def improvement(
    baseline: float, candidate: float, lower_is_better: bool = False
) -> Optional[float]:
    """Relative change of `candidate` over `baseline` in percent, positive if better."""
    if candidate == baseline:
        return 0.0
    if baseline == 0:
        return None
    change = (candidate - baseline) / abs(baseline) * 100.0
    return -change if lower_is_better else change


def density_curve(values: Iterable[float], points: int = 200) -> np.ndarray:
    """Gaussian KDE (Silverman bandwidth b) on `points` x's over [min - 3b, max + 3b].

    Returns a (points, 2) array of (x, density) rows.
    """
    data = np.asarray(list(values), dtype=np.float64)
    if data.size < 2:
        raise ContractError(f"Density needs at least 2 values, got {data.size}")
    if np.ptp(data) == 0:
        raise ContractError("Values have zero spread; use a histogram instead")
    if points < 2:
        raise ContractError(f"Need at least 2 evaluation points, got {points}")
    kde = gaussian_kde(data, bw_method="silverman")
    bandwidth = float(np.sqrt(kde.covariance[0, 0]))
    xs = np.linspace(data.min() - 3 * bandwidth, data.max() + 3 * bandwidth, points)
    return np.column_stack([xs, kde(xs)])


@dataclass(frozen=True)
class ModeCoverage:
    shares: Dict[Any, float]
    covered: float
    min_share: float


def mode_references(
    truth_set: np.ndarray, modes: Sequence[Optional[int]]
) -> Dict[int, np.ndarray]:
    """Mean future per labelled mode of a family."""
    truth_set = np.asarray(truth_set, dtype=np.float64)
    references: Dict[int, List[np.ndarray]] = {}
    for future, mode in zip(truth_set, modes):
        if mode is not None:
            references.setdefault(int(mode), []).append(future)
    return {
        mode: np.mean(futures, axis=0) for mode, futures in sorted(references.items())
    }


def mode_coverage(
    samples: Any, references: Mapping[Any, np.ndarray], min_share: float = 0.1
) -> ModeCoverage:
    """Assign each sample to its nearest reference trajectory and report the shares."""
    if not references:
        raise ContractError("Mode coverage needs at least one reference trajectory")
    keys = sorted(references)
    vectors = _as_vectors(samples, "Sample set")
    centers = np.stack(
        [np.asarray(references[key], dtype=np.float64).ravel() for key in keys]
    )
    if centers.shape[1] != vectors.shape[1]:
        raise ShapeError(
            f"References have width {centers.shape[1]}, samples {vectors.shape[1]}"
        )
    nearest = np.argmin(cdist(vectors, centers), axis=1)
    counts = np.bincount(nearest, minlength=len(keys))
    shares = {key: float(count) / vectors.shape[0] for key, count in zip(keys, counts)}
    covered = sum(share >= min_share for share in shares.values()) / len(keys)
    return ModeCoverage(shares=shares, covered=float(covered), min_share=min_share)


def write_samples_jsonl(path: PathLike, sample_sets: Sequence[SampleSet]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for sample_set in sample_sets:
            for i, trajectory in enumerate(sample_set.samples):
                record = {
                    "window_id": sample_set.window_id,
                    "sample_id": i,
                    "model": sample_set.model_tag,
                    "values": trajectory.tolist(),
                }
                f.write(json.dumps(record) + "\n")
    logger.debug(f"path={path}, windows={len(sample_sets)}")


def read_samples_jsonl(path: PathLike) -> List[SampleSet]:
    path = Path(path)
    grouped: Dict[str, List[np.ndarray]] = {}
    tags: Dict[str, str] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise PipelineIOError(f"Cannot read samples {path}: {e}") from e
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            window_id = str(record["window_id"])
            values = np.array(record["values"], dtype=np.float64)
            tags[window_id] = str(record["model"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(
                f"{path}:{line_number}: malformed sample record: {e}"
            ) from e
        if values.ndim != 2 or values.size == 0:
            raise DataError(
                f"{path}:{line_number}: values must be a non-empty (N, d) array, "
                f"got shape {values.shape}"
            )
        group = grouped.setdefault(window_id, [])
        if group and values.shape != group[0].shape:
            raise DataError(
                f"{path}:{line_number}: sample of shape {values.shape} in window "
                f"{window_id}, earlier samples have {group[0].shape}"
            )
        group.append(values)
    return [
        SampleSet(
            samples=np.stack(values), window_id=window_id, model_tag=tags[window_id]
        )
        for window_id, values in grouped.items()
    ]


def write_report_csv(path: PathLike, reports: Sequence[MetricsReport]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            for row in report.rows:
                values = [getattr(row, name) for name in REPORT_COLUMNS[2:]]
                formatted = [f"{v:.9g}" for v in values]
                writer.writerow([row.window_id, row.model, *formatted])


def write_density_csv(path: PathLike, curve: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("x", "density"))
        for x, density in curve:
            writer.writerow((f"{x:.9g}", f"{density:.9g}"))


def summarize(
    plain: MetricsReport,
    refined: MetricsReport,
    coverage: Optional[Mapping[str, float]] = None,
) -> Dict[str, Any]:
    """Per-model means and the refined-vs-plain improvement in percent."""
    plain_means, refined_means = plain.means, refined.means
    summary: Dict[str, Any] = {
        "space": "keypoint",
        "windows": len(plain.rows),
        "plain": plain_means,
        "refined": refined_means,
        "improvement_pct": {
            "ratio": improvement(plain_means["ratio"], refined_means["ratio"]),
            "energy_distance": improvement(
                plain_means["energy_distance"],
                refined_means["energy_distance"],
                lower_is_better=True,
            ),
        },
    }
    if coverage is not None:
        summary["mode_coverage"] = dict(coverage)
    return summary


def write_json(path: PathLike, payload: Mapping[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    logger.debug(f"path={path}")
