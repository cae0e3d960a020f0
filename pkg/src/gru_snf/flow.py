"""Conditional affine coupling flow f(. | h) between data and latent space."""
import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Mapping, Tuple

import numpy as np

from . import numeric as nm
from .errors import ContractError, ShapeError
from .numeric import Tensor
from .recurrent import GruState

logger = logging.getLogger(__name__)

# z for one or more trajectories, (B, d)
LatentVector = Tensor


@dataclass(frozen=True)
class Conditioner:
    """One-hidden-layer tanh perceptron over [masked coordinates, h]."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __call__(self, inputs: Tensor) -> Tensor:
        hidden = nm.tanh(inputs @ self.w1 + self.b1)
        return hidden @ self.w2 + self.b2

    @property
    def input_width(self) -> int:
        return nm.value_of(self.w1).shape[0]

    @property
    def output_width(self) -> int:
        return nm.value_of(self.w2).shape[1]

    def as_dict(self) -> Dict[str, Tensor]:
        return {field.name: getattr(self, field.name) for field in fields(self)}


@dataclass(frozen=True)
class CouplingLayer:
    # True marks pass-through coordinates, which condition the transform of the rest
    mask: np.ndarray
    scale: Conditioner
    shift: Conditioner
    scale_cap: float = 2.0

    def __post_init__(self) -> None:
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 1 or mask.all() or not mask.any():
            raise ContractError(
                "Coupling mask must be 1-D, neither all-one nor all-zero"
            )
        object.__setattr__(self, "mask", mask)
        for net in (self.scale, self.shift):
            if net.output_width != self.transformed.size:
                raise ShapeError(
                    f"Conditioner outputs {net.output_width} values for "
                    f"{self.transformed.size} transformed coordinates"
                )
        if self.scale.input_width != self.shift.input_width:
            raise ShapeError("Scale and shift conditioners disagree on input width")

    @property
    def dim(self) -> int:
        return self.mask.size

    @property
    def passed(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def transformed(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)


@dataclass(frozen=True)
class FlowStack:
    layers: Tuple[CouplingLayer, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 2:
            raise ContractError(
                f"A flow stack needs n >= 2 layers, got {len(self.layers)}"
            )
        for previous, layer in zip(self.layers, self.layers[1:]):
            alternates = np.array_equal(layer.mask, ~previous.mask)
            if layer.dim != previous.dim or not alternates:
                raise ContractError(
                    "Masks of consecutive coupling layers must alternate"
                )

    @property
    def n(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[0].dim

    @property
    def condition_width(self) -> int:
        layer = self.layers[0]
        return layer.scale.input_width - layer.passed.size


def mask_pattern(dim: int, k: int) -> np.ndarray:
    """Pass-through mask of layer k: even coordinates first, complement next."""
    mask = np.arange(dim) % 2 == 0
    return mask if k % 2 == 0 else ~mask


def build_flow(
    dim: int,
    condition_width: int,
    n: int,
    rng: np.random.Generator,
    hidden_width: int = 64,
    scale_cap: float = 2.0,
) -> FlowStack:
    """Stack of coupling layers whose output layers start at zero (identity flow)."""
    if dim < 2:
        raise ContractError(f"Coupling flows need d >= 2, got {dim}")
    layers = []
    for k in range(n):
        mask = mask_pattern(dim, k)
        n_in = int(mask.sum()) + condition_width
        n_out = int((~mask).sum())

        def conditioner() -> Conditioner:
            bound = 1.0 / np.sqrt(n_in)
            return Conditioner(
                w1=rng.uniform(-bound, bound, size=(n_in, hidden_width)),
                b1=rng.uniform(-bound, bound, size=(1, hidden_width)),
                w2=np.zeros((hidden_width, n_out)),
                b2=np.zeros((1, n_out)),
            )

        layers.append(
            CouplingLayer(
                mask=mask, scale=conditioner(), shift=conditioner(), scale_cap=scale_cap
            )
        )
    return FlowStack(layers=tuple(layers))


def _scale_shift(
    x_passed: Tensor, h: GruState, layer: CouplingLayer
) -> Tuple[Tensor, Tensor]:
    inputs = nm.concat([x_passed, h])
    s = layer.scale_cap * nm.tanh(layer.scale(inputs))
    t = layer.shift(inputs)
    nm.check_finite(s, "coupling scale")
    nm.check_finite(t, "coupling shift")
    return s, t


def _check_rows(x: Tensor, h: GruState, dim: int) -> None:
    x_shape, h_shape = nm.value_of(x).shape, nm.value_of(h).shape
    if len(x_shape) != 2 or x_shape[1] != dim:
        raise ShapeError(f"Flow input has shape {x_shape}, expected width {dim}")
    if len(h_shape) != 2 or h_shape[0] != x_shape[0]:
        raise ShapeError(f"Condition shape {h_shape} does not match input {x_shape}")


def layer_forward(
    x: Tensor, h: GruState, layer: CouplingLayer
) -> Tuple[Tensor, Tensor]:
    """x' = x on pass-through coordinates, x * exp(s) + t elsewhere; logdet = sum(s)."""
    _check_rows(x, h, layer.dim)
    x_passed = nm.take_cols(x, layer.passed)
    s, t = _scale_shift(x_passed, h, layer)
    y_transformed = nm.take_cols(x, layer.transformed) * nm.exp(s) + t
    y = nm.embed_cols(x_passed, layer.passed, layer.dim) + nm.embed_cols(
        y_transformed, layer.transformed, layer.dim
    )
    return y, nm.sum(s, axis=1)


def layer_inverse(y: Tensor, h: GruState, layer: CouplingLayer) -> Tensor:
    _check_rows(y, h, layer.dim)
    y_passed = nm.take_cols(y, layer.passed)
    s, t = _scale_shift(y_passed, h, layer)
    x_transformed = (nm.take_cols(y, layer.transformed) - t) * nm.exp(-s)
    x = nm.embed_cols(y_passed, layer.passed, layer.dim) + nm.embed_cols(
        x_transformed, layer.transformed, layer.dim
    )
    return nm.check_finite(x, "inverse flow output")


def forward(
    x: Tensor, h: GruState, stack: FlowStack
) -> Tuple[LatentVector, Tensor]:
    logdet: Tensor = np.zeros((nm.value_of(x).shape[0], 1))
    for layer in stack.layers:
        x, layer_logdet = layer_forward(x, h, layer)
        logdet = logdet + layer_logdet
    return x, logdet


def inverse(z: LatentVector, h: GruState, stack: FlowStack) -> Tensor:
    for layer in reversed(stack.layers):
        z = layer_inverse(z, h, layer)
    return z


def log_prob(x: Tensor, h: GruState, stack: FlowStack) -> Tensor:
    """log N(f(x); 0, I) + log|det df/dx|, one row per input row."""
    z, logdet = forward(x, h, stack)
    log_normalizer = -0.5 * stack.dim * math.log(2.0 * math.pi)
    return log_normalizer - 0.5 * nm.sum(nm.square(z), axis=1) + logdet


def flow_parameters(stack: FlowStack) -> Dict[str, Tensor]:
    parameters = {}
    for k, layer in enumerate(stack.layers):
        for net_name in ("scale", "shift"):
            for name, value in getattr(layer, net_name).as_dict().items():
                parameters[f"layer{k}.{net_name}.{name}"] = value
    return parameters


def with_flow_parameters(
    stack: FlowStack, parameters: Mapping[str, Tensor]
) -> FlowStack:
    layers: List[CouplingLayer] = []
    for k, layer in enumerate(stack.layers):
        nets = {
            net_name: Conditioner(
                **{
                    name: parameters[f"layer{k}.{net_name}.{name}"]
                    for name in ("w1", "b1", "w2", "b2")
                }
            )
            for net_name in ("scale", "shift")
        }
        layers.append(replace(layer, **nets))
    return FlowStack(layers=tuple(layers))
