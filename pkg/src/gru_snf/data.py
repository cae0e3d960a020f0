"""Keypoint sequences, the synthetic forked-trajectory generator and dataset I/O."""
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._controller import controller
from .errors import ContractError, DataError, PipelineIOError, ShapeError
from .utils.seeding import substream

PathLike = Union[str, os.PathLike]

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SIDECAR_NAME = "dataset.json"
FORMAT_SUFFIXES = {"csv": ".csv", "h5": ".h5", "zarr": ".zarr"}


@dataclass(frozen=True)
class KeypointSequence:
    # T x d, d = 2K interleaved as kp0_x, kp0_y, kp1_x, ...
    frames: np.ndarray
    seq_id: str
    family: Optional[str] = None
    mode: Optional[int] = None

    def __post_init__(self) -> None:
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ShapeError(f"{self.seq_id}: frames must be T x d, got {frames.shape}")
        if frames.shape[0] < 2:
            raise ContractError(f"{self.seq_id}: needs at least 2 frames")
        if frames.shape[1] == 0 or frames.shape[1] % 2 != 0:
            raise ShapeError(f"{self.seq_id}: d must be even, got {frames.shape[1]}")
        if not np.all(np.isfinite(frames)):
            raise DataError(f"{self.seq_id}: frames contain non-finite values")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def keypoints(self) -> int:
        return self.dim // 2

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KeypointSequence):
            return NotImplemented
        return (
            self.seq_id == other.seq_id
            and self.family == other.family
            and self.mode == other.mode
            and np.array_equal(self.frames, other.frames)
        )

    def __hash__(self) -> int:
        return hash(self.seq_id)


@dataclass(frozen=True)
class DatasetSplit:
    train: Tuple[KeypointSequence, ...] = ()
    val: Tuple[KeypointSequence, ...] = ()
    test: Tuple[KeypointSequence, ...] = ()
    spec: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in SPLITS:
            object.__setattr__(self, name, tuple(getattr(self, name)))
        seen = set()
        dims = set()
        for sequence in self.sequences():
            if sequence.seq_id in seen:
                raise DataError(f"Duplicate sequence id: {sequence.seq_id}")
            seen.add(sequence.seq_id)
            dims.add(sequence.dim)
        if len(dims) > 1:
            raise ShapeError(f"Inconsistent keypoint dimensions: {sorted(dims)}")

    def sequences(self) -> Iterator[KeypointSequence]:
        for name in SPLITS:
            yield from getattr(self, name)

    @property
    def dim(self) -> int:
        for sequence in self.sequences():
            return sequence.dim
        raise ContractError("Dataset holds no sequences")


@dataclass(frozen=True)
class EvaluationWindow:
    window_id: str
    window: np.ndarray
    truth: np.ndarray
    # futures of every member of the window's family, F x N x d
    truth_set: np.ndarray
    truth_modes: Tuple[Optional[int], ...]


def _quantize(values: np.ndarray) -> np.ndarray:
    # 9 significant digits, the precision of the CSV format, keeps save/load exact
    flat = [float(f"{v:.9g}") for v in values.ravel()]
    return np.array(flat, dtype=np.float64).reshape(values.shape)


def _mode_angles(modes: int, mode_angle: float) -> np.ndarray:
    return np.deg2rad(np.linspace(-mode_angle, mode_angle, modes))


def _forked_family(
    rng: np.random.Generator,
    keypoints: int,
    fork: int,
    length: int,
    speed: float,
    articulation: float,
    angles: np.ndarray,
) -> List[np.ndarray]:
    """Noise-free trajectories (T, K, 2) of one prefix family, one per mode."""
    base = rng.uniform(-0.5, 0.5, size=(keypoints, 2))
    heading = rng.uniform(0.0, 2.0 * math.pi)
    velocity = speed * np.array([math.cos(heading), math.sin(heading)])
    phase = rng.uniform(0.0, 2.0 * math.pi, size=keypoints)
    omega = rng.uniform(0.3, 0.6)
    direction_angle = rng.uniform(0.0, 2.0 * math.pi, size=keypoints)
    direction = np.stack([np.cos(direction_angle), np.sin(direction_angle)], axis=1)

    t = np.arange(length, dtype=np.float64)
    wobble = articulation * np.sin(omega * t[:, None] + phase[None, :])
    wobble = wobble[:, :, None] * direction[None, :, :]
    trajectories = []
    for angle in angles:
        rotation = np.array(
            [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
        )
        branch_velocity = rotation @ velocity
        before = np.minimum(t, fork - 1)[:, None] * velocity
        after = np.maximum(t - (fork - 1), 0.0)[:, None] * branch_velocity
        drift = before + after
        trajectories.append(base[None, :, :] + drift[:, None, :] + wobble)
    return trajectories


def _generate_split(
    name: str,
    count: int,
    seed: int,
    keypoints: int,
    fork: int,
    length: int,
    modes: int,
    noise_std: float,
    family_size: int,
    speed: float,
    articulation: float,
    mode_angle: float,
) -> List[KeypointSequence]:
    split_code = SPLITS.index(name)
    angles = _mode_angles(modes, mode_angle)
    sequences = []
    for family in range(math.ceil(count / family_size)):
        family_rng = substream(seed, "data", split_code, family)
        branches = _forked_family(
            family_rng, keypoints, fork, length, speed, articulation, angles
        )
        members = min(family_size, count - family * family_size)
        for member in range(members):
            member_rng = substream(seed, "data", split_code, family, member + 1)
            mode = int(member_rng.integers(modes))
            frames = branches[mode]
            if noise_std > 0:
                frames = frames + member_rng.normal(0.0, noise_std, size=frames.shape)
            sequences.append(
                KeypointSequence(
                    frames=_quantize(frames.reshape(length, 2 * keypoints)),
                    seq_id=f"{name}-{family:04d}-{member:02d}",
                    family=f"{name}-{family:04d}",
                    mode=mode,
                )
            )
    return sequences


def gen_forked(
    trajectories: int,
    keypoints: int,
    prefix: int,
    suffix: int,
    modes: int,
    noise_std: float,
    seed: int,
    *,
    val_trajectories: Optional[int] = None,
    test_trajectories: Optional[int] = None,
    family_size: int = 10,
    speed: float = 0.03,
    articulation: float = 0.05,
    mode_angle: float = 35.0,
) -> DatasetSplit:
    """Synthetic keypoint trajectories forking into `modes` futures after `prefix`.

    Each family shares one smooth prefix (constant velocity plus sinusoidal
    articulation of the K points); every member then follows its own mode, the
    prefix velocity rotated by a mode-specific angle in [-mode_angle, mode_angle].
    """
    if val_trajectories is None:
        val_trajectories = max(trajectories // 10, 1)
    if test_trajectories is None:
        test_trajectories = max(trajectories // 10, 1)
    counts = {"train": trajectories, "val": val_trajectories, "test": test_trajectories}
    if modes < 2:
        raise ContractError(f"modes must be >= 2, got {modes}")
    if min(counts.values()) < 1 or keypoints < 1 or family_size < 1:
        raise ContractError(f"Counts must be positive: {counts}, K={keypoints}")
    if prefix < 1 or suffix < 1:
        raise ContractError(
            f"Prefix and suffix need a frame each: ({prefix}, {suffix})"
        )
    if noise_std < 0:
        raise ContractError(f"noise_std must be >= 0, got {noise_std}")
    logger.debug(f"counts={counts}, K={keypoints}, M={prefix}, N={suffix}, seed={seed}")
    params = dict(
        keypoints=keypoints,
        fork=prefix,
        length=prefix + suffix,
        modes=modes,
        noise_std=noise_std,
        family_size=family_size,
        speed=speed,
        articulation=articulation,
        mode_angle=mode_angle,
    )
    parts = {
        name: _generate_split(name, count, seed, **params)
        for name, count in counts.items()
    }
    spec = {
        "generator": "forked",
        "params": {
            **{
                key: value
                for key, value in params.items()
                if key not in ("fork", "length")
            },
            "prefix": prefix,
            "suffix": suffix,
            **{f"{name}_trajectories": count for name, count in counts.items()},
        },
        "seed": seed,
    }
    return DatasetSplit(spec=spec, **parts)


def window_split(
    sequence: Union[KeypointSequence, np.ndarray], prefix: int, suffix: int
) -> Tuple[np.ndarray, np.ndarray]:
    frames = np.asarray(getattr(sequence, "frames", sequence))
    if prefix < 1 or suffix < 1:
        raise ContractError(f"Need M >= 1 and N >= 1, got ({prefix}, {suffix})")
    if frames.shape[0] < prefix + suffix:
        raise ContractError(
            f"Sequence of {frames.shape[0]} frames is shorter than "
            f"M+N={prefix + suffix}"
        )
    return frames[:prefix], frames[prefix : prefix + suffix]


def evaluation_windows(
    sequences: Sequence[KeypointSequence],
    prefix: int,
    suffix: int,
    limit: Optional[int] = None,
) -> List[EvaluationWindow]:
    """One window per family: the first member conditions, all members' futures
    form the ground-truth set. Unlabelled sequences are their own family."""
    families: Dict[str, List[KeypointSequence]] = {}
    for sequence in sequences:
        families.setdefault(sequence.family or sequence.seq_id, []).append(sequence)
    windows = []
    for family_id, members in families.items():
        window, truth = window_split(members[0], prefix, suffix)
        truth_set = np.stack([window_split(m, prefix, suffix)[1] for m in members])
        windows.append(
            EvaluationWindow(
                window_id=family_id,
                window=window,
                truth=truth,
                truth_set=truth_set,
                truth_modes=tuple(member.mode for member in members),
            )
        )
        if limit is not None and len(windows) >= limit:
            break
    return windows


def save_keypoints(
    split: DatasetSplit, path: PathLike, data_format: str = "csv"
) -> None:
    """Write train/val/test files and the `dataset.json` sidecar into `path`."""
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise PipelineIOError(
            f"Cannot create dataset directory {directory}: {e}"
        ) from e
    suffix = FORMAT_SUFFIXES[data_format]
    logger.debug(f"path={directory}, format={data_format}")
    for name in SPLITS:
        controller.write_keypoints(directory / f"{name}{suffix}", getattr(split, name))
    labels = {
        sequence.seq_id: {"family": sequence.family, "mode": sequence.mode}
        for sequence in split.sequences()
    }
    sidecar = {**split.spec, "format": data_format, "labels": labels}
    text = json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    try:
        (directory / SIDECAR_NAME).write_text(text, encoding="utf-8")
    except OSError as e:
        raise PipelineIOError(f"Cannot write {directory / SIDECAR_NAME}: {e}") from e
    logger.info(f"Wrote dataset ({', '.join(_counts(split))}) to {directory}")


def load_keypoints(path: PathLike) -> DatasetSplit:
    """Read a dataset directory, or ingest one keypoint file as a test-only split."""
    path = Path(path)
    logger.debug(f"path={path}")
    if not path.is_dir() or path.suffix.lower() == ".zarr":
        sequences = controller.read_keypoints(path)
        return DatasetSplit(
            test=tuple(sequences), spec={"generator": "external", "source": str(path)}
        )
    sidecar_path = path / SIDECAR_NAME
    sidecar: Dict[str, Any] = {}
    if sidecar_path.exists():
        try:
            sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"Malformed sidecar {sidecar_path}: {e}") from e
    labels = sidecar.pop("labels", {})
    sidecar.pop("format", None)
    parts: Dict[str, List[KeypointSequence]] = {}
    for name in SPLITS:
        candidates = [path / f"{name}{suffix}" for suffix in FORMAT_SUFFIXES.values()]
        existing = [c for c in candidates if c.exists()]
        if not existing:
            raise DataError(f"Dataset {path} has no {name} split")
        parts[name] = [
            _apply_label(sequence, labels.get(sequence.seq_id))
            for sequence in controller.read_keypoints(existing[0])
        ]
    return DatasetSplit(spec=sidecar, **parts)


def _apply_label(
    sequence: KeypointSequence, label: Optional[Dict[str, Any]]
) -> KeypointSequence:
    if not label:
        return sequence
    return KeypointSequence(
        frames=sequence.frames,
        seq_id=sequence.seq_id,
        family=label.get("family"),
        mode=label.get("mode"),
    )


def _counts(split: DatasetSplit) -> List[str]:
    return [f"{name}={len(getattr(split, name))}" for name in SPLITS]
