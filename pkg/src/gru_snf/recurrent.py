"""GRU cell, window encoding and the linear readout head.

Row-vector convention: inputs are (B, d) matrices and weights act from the right,
so the gate pre-activation W y + U h + b is computed as y @ w + h @ u + b.
"""
import logging
from dataclasses import dataclass, fields
from typing import Dict, Mapping, Optional

import numpy as np

from . import numeric as nm
from .errors import ContractError, ShapeError
from .numeric import Tensor

logger = logging.getLogger(__name__)

# rows of hidden vectors h_t, one row per trajectory
GruState = Tensor


@dataclass(frozen=True)
class GruParams:
    w_r: Tensor
    w_z: Tensor
    w_h: Tensor
    u_r: Tensor
    u_z: Tensor
    u_h: Tensor
    b_r: Tensor
    b_z: Tensor
    b_h: Tensor
    w_o: Tensor
    b_o: Tensor

    def __post_init__(self) -> None:
        d, hidden = self.input_dim, self.hidden_size
        expected = {
            "w_r": (d, hidden),
            "w_z": (d, hidden),
            "w_h": (d, hidden),
            "u_r": (hidden, hidden),
            "u_z": (hidden, hidden),
            "u_h": (hidden, hidden),
            "b_r": (1, hidden),
            "b_z": (1, hidden),
            "b_h": (1, hidden),
            "w_o": (hidden, d),
            "b_o": (1, d),
        }
        for name, shape in expected.items():
            actual = nm.value_of(getattr(self, name)).shape
            if actual != shape:
                raise ShapeError(
                    f"GRU parameter {name} has shape {actual}, not {shape}"
                )

    @property
    def input_dim(self) -> int:
        return nm.value_of(self.w_r).shape[0]

    @property
    def hidden_size(self) -> int:
        return nm.value_of(self.w_r).shape[1]

    def as_dict(self) -> Dict[str, Tensor]:
        return {field.name: getattr(self, field.name) for field in fields(self)}

    @classmethod
    def from_dict(cls, mapping: Mapping[str, Tensor]) -> "GruParams":
        return cls(**{field.name: mapping[field.name] for field in fields(cls)})


def init_gru_params(
    input_dim: int, hidden_size: int, rng: np.random.Generator
) -> GruParams:
    bound = 1.0 / np.sqrt(hidden_size)
    shapes = {
        "w_r": (input_dim, hidden_size),
        "w_z": (input_dim, hidden_size),
        "w_h": (input_dim, hidden_size),
        "u_r": (hidden_size, hidden_size),
        "u_z": (hidden_size, hidden_size),
        "u_h": (hidden_size, hidden_size),
        "b_r": (1, hidden_size),
        "b_z": (1, hidden_size),
        "b_h": (1, hidden_size),
        "w_o": (hidden_size, input_dim),
        "b_o": (1, input_dim),
    }
    return GruParams(
        **{
            name: rng.uniform(-bound, bound, size=shape)
            for name, shape in shapes.items()
        }
    )


def zero_state(params: GruParams, rows: int = 1) -> np.ndarray:
    return np.zeros((rows, params.hidden_size))


def gru_cell(y_prev: Tensor, h_prev: GruState, params: GruParams) -> GruState:
    y_shape, h_shape = nm.value_of(y_prev).shape, nm.value_of(h_prev).shape
    if len(y_shape) != 2 or y_shape[1] != params.input_dim:
        raise ShapeError(f"GRU input has shape {y_shape}, width {params.input_dim}")
    if len(h_shape) != 2 or h_shape[1] != params.hidden_size:
        raise ShapeError(f"GRU state has shape {h_shape}, width {params.hidden_size}")
    if y_shape[0] != h_shape[0]:
        raise ShapeError(f"GRU input rows {y_shape[0]} != state rows {h_shape[0]}")
    r = nm.sigmoid(y_prev @ params.w_r + h_prev @ params.u_r + params.b_r)
    z = nm.sigmoid(y_prev @ params.w_z + h_prev @ params.u_z + params.b_z)
    h_hat = nm.tanh(y_prev @ params.w_h + (r * h_prev) @ params.u_h + params.b_h)
    h_next = (1.0 - z) * h_prev + z * h_hat
    return nm.check_finite(h_next, "GRU state")


def readout(h: GruState, params: GruParams) -> Tensor:
    """Deterministic point prediction of the next frame from the hidden state."""
    return h @ params.w_o + params.b_o


def encode_window(
    window, params: GruParams, h0: Optional[GruState] = None
) -> GruState:
    """Fold `gru_cell` over the frames of a (M, d) window or a (B, M, d) batch."""
    frames = np.asarray(getattr(window, "frames", window), dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[np.newaxis]
    if frames.ndim != 3:
        raise ShapeError(f"Window must be (M, d) or (B, M, d), got {frames.shape}")
    if frames.shape[1] == 0:
        raise ContractError("Cannot encode an empty window")
    h = zero_state(params, rows=frames.shape[0]) if h0 is None else h0
    for t in range(frames.shape[1]):
        h = gru_cell(frames[:, t, :], h, params)
    return h
