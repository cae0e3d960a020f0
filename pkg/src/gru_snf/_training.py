import csv
import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import TrainConfig
from .errors import ContractError, NumericError, ShapeError, TrainingError
from .model import GruNfModel, TrainingMetadata, batch_objective, nll_loss
from .numeric import GradTape
from .utils.seeding import substream

PathLike = Union[str, os.PathLike]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_nll: float
    val_nll: Optional[float]


LossCurve = List[EpochRecord]


class AdamOptimizer:
    """Adaptive-moment gradient descent over a named parameter mapping."""

    def __init__(
        self,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}
        self._step = 0

    def step(
        self, parameters: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]
    ) -> Dict[str, np.ndarray]:
        self._step += 1
        updated = {}
        for name, value in parameters.items():
            g = grads[name]
            m = self._m.get(name, np.zeros_like(g))
            v = self._v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * (g * g)
            self._m[name], self._v[name] = m, v
            m_hat = m / (1 - self.beta1**self._step)
            v_hat = v / (1 - self.beta2**self._step)
            step = self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            updated[name] = value - step
        return updated


def clip_by_global_norm(
    grads: Mapping[str, np.ndarray], max_norm: float
) -> Tuple[Dict[str, np.ndarray], float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


def _frames_by_length(sequences: Sequence) -> Dict[int, np.ndarray]:
    buckets: Dict[int, List[np.ndarray]] = {}
    for sequence in sequences:
        frames = np.asarray(getattr(sequence, "frames", sequence), dtype=np.float64)
        buckets.setdefault(frames.shape[0], []).append(frames)
    return {length: np.stack(group) for length, group in sorted(buckets.items())}


def _batches(
    buckets: Mapping[int, np.ndarray], batch_size: int, rng: np.random.Generator
) -> List[np.ndarray]:
    batches = []
    for frames in buckets.values():
        order = rng.permutation(frames.shape[0])
        for start in range(0, len(order), batch_size):
            batches.append(frames[order[start : start + batch_size]])
    return [batches[i] for i in rng.permutation(len(batches))]


def train(
    model: GruNfModel,
    train_sequences: Sequence,
    cfg: TrainConfig,
    val_sequences: Optional[Sequence] = None,
) -> Tuple[GruNfModel, LossCurve]:
    """Teacher-forced maximum likelihood with Adam and global-norm gradient clipping.

    Returns the trained model and one curve entry per epoch. A non-finite loss or
    gradient raises TrainingError carrying the last finite model and the curve so far.
    """
    if len(train_sequences) == 0:
        raise ContractError("Training set is empty")
    buckets = _frames_by_length(train_sequences)
    for frames in buckets.values():
        if frames.shape[2] != model.dims.d:
            raise ShapeError(
                f"Training data has d={frames.shape[2]}, model d={model.dims.d}"
            )
    seed = 0 if cfg.seed is None else cfg.seed
    logger.debug(f"epochs={cfg.epochs}, batch_size={cfg.batch_size}, seed={seed}")
    curve: LossCurve = []
    if cfg.epochs == 0:
        return model, curve

    rng = substream(seed, "train")
    optimizer = AdamOptimizer(learning_rate=cfg.learning_rate)
    parameters = {name: np.asarray(v) for name, v in model.parameters().items()}
    initial_nll = _held_out_nll(model, val_sequences)
    last_finite = model
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for b, frames in enumerate(_batches(buckets, cfg.batch_size, rng)):
            tape = GradTape()
            candidate = model.with_parameters(tape.watch_all(parameters))
            try:
                objective, batch_nll = batch_objective(
                    candidate.gru, candidate.flow, frames, cfg.readout_weight
                )
            except NumericError as e:
                raise TrainingError(
                    f"Numeric failure: {e}",
                    epoch,
                    b,
                    last_model=last_finite,
                    curve=curve,
                ) from e
            grads = tape.backward(objective)
            if not math.isfinite(batch_nll) or not all(
                np.all(np.isfinite(g)) for g in grads.values()
            ):
                raise TrainingError(
                    "Loss diverged", epoch, b, last_model=last_finite, curve=curve
                )
            last_finite = model
            grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
            parameters = optimizer.step(parameters, grads)
            model = model.with_parameters(parameters)
            steps = frames.shape[0] * (frames.shape[1] - 1)
            total += batch_nll * steps
            count += steps
        record = EpochRecord(
            epoch=epoch,
            train_nll=total / count,
            val_nll=_held_out_nll(
                model, val_sequences, epoch=epoch, curve=curve, fallback=last_finite
            ),
        )
        curve.append(record)
        logger.info(
            f"epoch {epoch}/{cfg.epochs}: train_nll={record.train_nll:.4f}, "
            f"val_nll={record.val_nll}"
        )
    final = curve[-1]
    metadata = TrainingMetadata(
        epochs=model.metadata.epochs + cfg.epochs,
        initial_nll=initial_nll,
        final_nll=final.val_nll if final.val_nll is not None else final.train_nll,
        seed=seed,
    )
    return replace(model, metadata=metadata), curve


def _held_out_nll(
    model: GruNfModel,
    sequences: Optional[Sequence],
    epoch: int = 0,
    curve: Optional[LossCurve] = None,
    fallback: Optional[GruNfModel] = None,
) -> Optional[float]:
    if sequences is None or len(sequences) == 0:
        return None
    try:
        return nll_loss(model, sequences)
    except NumericError as e:
        raise TrainingError(
            f"Validation loss diverged: {e}", epoch, last_model=fallback, curve=curve
        ) from e


def write_loss_curve(path: PathLike, curve: Sequence[EpochRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("epoch", "train_nll", "val_nll"))
        for record in curve:
            val = "" if record.val_nll is None else f"{record.val_nll:.9g}"
            writer.writerow((record.epoch, f"{record.train_nll:.9g}", val))
    logger.debug(f"path={path}, epochs={len(curve)}")
