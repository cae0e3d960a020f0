"""The GRU-NF composite: a GRU summarizes the history, a conditional flow models the
next frame. Provides the teacher-forced likelihood and the plain autoregressive sampler.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import dask
import numpy as np

from . import flow as fl
from . import numeric as nm
from .errors import ContractError, NumericError, ShapeError
from .metrics import SampleSet
from .numeric import Tensor
from .recurrent import (
    GruParams,
    GruState,
    encode_window,
    gru_cell,
    init_gru_params,
    readout,
    zero_state,
)
from .utils.seeding import substream

logger = logging.getLogger(__name__)

# (z, h, trajectory index, step) -> (y, per-step record)
Draw = Callable[[np.ndarray, np.ndarray, int, int], Tuple[np.ndarray, Any]]

GRU_PREFIX = "gru."
FLOW_PREFIX = "flow."


@dataclass(frozen=True)
class ModelDims:
    d: int
    hidden: int
    n: int


@dataclass(frozen=True)
class TrainingMetadata:
    epochs: int = 0
    initial_nll: Optional[float] = None
    final_nll: Optional[float] = None
    seed: Optional[int] = None


@dataclass(frozen=True)
class GruNfModel:
    gru: GruParams
    flow: fl.FlowStack
    metadata: TrainingMetadata = field(default_factory=TrainingMetadata)

    def __post_init__(self) -> None:
        if self.flow.dim != self.gru.input_dim:
            raise ShapeError(
                f"Flow acts on d={self.flow.dim}, GRU reads d={self.gru.input_dim}"
            )
        if self.flow.condition_width != self.gru.hidden_size:
            raise ShapeError(
                "Flow conditioners expect a state of width "
                f"{self.flow.condition_width}, "
                f"GRU has H={self.gru.hidden_size}"
            )

    @property
    def dims(self) -> ModelDims:
        return ModelDims(
            d=self.gru.input_dim, hidden=self.gru.hidden_size, n=self.flow.n
        )

    def parameters(self) -> Dict[str, Tensor]:
        parameters = {GRU_PREFIX + name: v for name, v in self.gru.as_dict().items()}
        for name, value in fl.flow_parameters(self.flow).items():
            parameters[FLOW_PREFIX + name] = value
        return parameters

    def with_parameters(
        self,
        parameters: Mapping[str, Tensor],
        metadata: Optional[TrainingMetadata] = None,
    ) -> "GruNfModel":
        gru = GruParams.from_dict(
            {
                k[len(GRU_PREFIX) :]: v
                for k, v in parameters.items()
                if k.startswith(GRU_PREFIX)
            }
        )
        flow = fl.with_flow_parameters(
            self.flow,
            {
                k[len(FLOW_PREFIX) :]: v
                for k, v in parameters.items()
                if k.startswith(FLOW_PREFIX)
            },
        )
        return GruNfModel(
            gru=gru, flow=flow, metadata=self.metadata if metadata is None else metadata
        )


def init_model(
    dim: int,
    hidden_size: int = 64,
    flow_layers: int = 4,
    conditioner_width: int = 64,
    scale_cap: float = 2.0,
    seed: int = 0,
) -> GruNfModel:
    """Fresh model whose flow is the identity map."""
    logger.debug(f"d={dim}, H={hidden_size}, n={flow_layers}, seed={seed}")
    rng = substream(seed, "init")
    gru = init_gru_params(dim, hidden_size, rng)
    flow = fl.build_flow(
        dim,
        hidden_size,
        flow_layers,
        rng,
        hidden_width=conditioner_width,
        scale_cap=scale_cap,
    )
    return GruNfModel(gru=gru, flow=flow, metadata=TrainingMetadata(seed=seed))


def _batch_terms(
    gru: GruParams, flow: fl.FlowStack, frames: np.ndarray
) -> Tuple[Tensor, Tensor, int]:
    """Teacher-forced sums over a (B, T, d) batch.

    Returns -log p, the squared readout error and the number of predicted steps.
    """
    batch, length, _ = frames.shape
    h: GruState = zero_state(gru, rows=batch)
    nll: Tensor = np.zeros((1, 1))
    squared_error: Tensor = np.zeros((1, 1))
    for t in range(1, length):
        h = gru_cell(frames[:, t - 1, :], h, gru)
        target = frames[:, t, :]
        nll = nll - nm.sum(fl.log_prob(target, h, flow))
        squared_error = squared_error + nm.sum(nm.square(readout(h, gru) - target))
    return nll, squared_error, batch * (length - 1)


def batch_objective(
    gru: GruParams, flow: fl.FlowStack, frames: np.ndarray, readout_weight: float
) -> Tuple[Tensor, float]:
    """Per-timestep mean of NLL + beta * readout error, and the pure per-step NLL."""
    nll, squared_error, steps = _batch_terms(gru, flow, frames)
    objective = (nll + readout_weight * squared_error) * (1.0 / steps)
    return objective, float(nm.value_of(nll).reshape(())) / steps


SequenceLike = Union[np.ndarray, Any]


def _as_frames(item: SequenceLike) -> np.ndarray:
    frames = np.asarray(getattr(item, "frames", item), dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[np.newaxis]
    if frames.ndim != 3:
        raise ShapeError(f"Expected (T, d) or (B, T, d) frames, got {frames.shape}")
    if frames.shape[1] < 2:
        raise ContractError(
            f"Likelihood needs sequences of length >= 2, got {frames.shape[1]}"
        )
    return frames


def length_buckets(
    sequences: Union[SequenceLike, Sequence[SequenceLike]]
) -> List[np.ndarray]:
    """Stack sequences of equal length into (B, T, d) batches, shortest first."""
    if isinstance(sequences, np.ndarray) or hasattr(sequences, "frames"):
        return [_as_frames(sequences)]
    buckets: Dict[int, List[np.ndarray]] = {}
    for item in sequences:
        for frames in _as_frames(item):
            buckets.setdefault(frames.shape[0], []).append(frames)
    if not buckets:
        raise ContractError("No sequences to evaluate")
    return [np.stack(buckets[length]) for length in sorted(buckets)]


def nll_loss(
    model: GruNfModel,
    sequences: Union[SequenceLike, Sequence[SequenceLike]],
    readout_weight: float = 0.0,
) -> float:
    """Teacher-forced negative log-likelihood per predicted timestep.

    With `readout_weight` > 0 the readout head's squared error is added, as in training.
    """
    total, steps = 0.0, 0
    for frames in length_buckets(sequences):
        if frames.shape[2] != model.dims.d:
            raise ShapeError(
                f"Sequences have d={frames.shape[2]}, model d={model.dims.d}"
            )
        nll, squared_error, count = _batch_terms(model.gru, model.flow, frames)
        total += float(nm.value_of(nll + readout_weight * squared_error).reshape(()))
        steps += count
    loss = total / steps
    if not math.isfinite(loss):
        raise NumericError("Non-finite likelihood")
    return loss


def make_loss_fn(
    model: GruNfModel, frames: np.ndarray, readout_weight: float = 0.0
) -> Callable[[Mapping[str, Tensor]], Tensor]:
    """The training objective as a function of the parameter mapping."""
    batch = _as_frames(frames)

    def loss_fn(parameters: Mapping[str, Tensor]) -> Tensor:
        candidate = model.with_parameters(parameters)
        objective, _ = batch_objective(
            candidate.gru, candidate.flow, batch, readout_weight
        )
        return objective

    return loss_fn


def _window_frames(window: Any, dim: int) -> np.ndarray:
    frames = np.asarray(getattr(window, "window", getattr(window, "frames", window)))
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ContractError("Conditioning window must be a non-empty (M, d) array")
    if frames.shape[1] != dim:
        raise ShapeError(f"Window has d={frames.shape[1]}, model expects d={dim}")
    return frames


def window_id_of(window: Any) -> str:
    return str(getattr(window, "window_id", getattr(window, "seq_id", "window")))


def _trajectory(
    model: GruNfModel,
    h0: np.ndarray,
    horizon: int,
    seed: int,
    index: int,
    draw: Draw,
) -> Tuple[np.ndarray, List[Any]]:
    rng = substream(seed, "sampling", index)
    h = h0
    frames, records = [], []
    for step in range(horizon):
        z = rng.standard_normal((1, model.dims.d))
        y, record = draw(z, h, index, step)
        frames.append(y[0])
        records.append(record)
        h = gru_cell(y, h, model.gru)
    return np.stack(frames), records


def rollout(
    model: GruNfModel,
    window: Any,
    horizon: int,
    count: int,
    seed: int,
    draw: Draw,
    scheduler: str = "synchronous",
) -> Tuple[np.ndarray, List[List[Any]]]:
    """Free-running generation of `count` trajectories fed by their own frames.

    Trajectory i draws its latents from its own substream, so the result does not
    depend on the dask scheduler.
    """
    if horizon < 1 or count < 1:
        raise ContractError(f"Need horizon >= 1 and count >= 1, got {horizon}, {count}")
    frames = _window_frames(window, model.dims.d)
    h0 = np.asarray(encode_window(frames, model.gru))
    tasks = [
        dask.delayed(
            partial(_trajectory, model, h0, horizon, seed, i, draw), pure=False
        )()
        for i in range(count)
    ]
    results = dask.compute(*tasks, scheduler=scheduler)
    samples = np.stack([trajectory for trajectory, _ in results])
    return samples, [records for _, records in results]


def sample_plain(
    model: GruNfModel,
    window: Any,
    horizon: int,
    count: int,
    seed: int,
    scheduler: str = "synchronous",
) -> SampleSet:
    logger.debug(f"window={window_id_of(window)}, N={horizon}, D={count}, seed={seed}")

    def draw(
        z: np.ndarray, h: np.ndarray, index: int, step: int
    ) -> Tuple[np.ndarray, Any]:
        return np.asarray(fl.inverse(z, h, model.flow)), None

    samples, _ = rollout(model, window, horizon, count, seed, draw, scheduler=scheduler)
    return SampleSet(samples=samples, window_id=window_id_of(window), model_tag="plain")
