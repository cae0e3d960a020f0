"""Binary checkpoint codec.

Layout (little-endian): magic, format version, dimension header (d, H, n, conditioner
width, scale cap), a length-prefixed JSON block of training metadata, then every
parameter as raw float64 in the fixed order of `GruNfModel.parameters()`.
"""
import json
import logging
import os
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from . import flow as fl
from .errors import CheckpointError
from .model import GruNfModel, TrainingMetadata
from .recurrent import GruParams

PathLike = Union[str, os.PathLike]

logger = logging.getLogger(__name__)

MAGIC = b"GRUSNFCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHIIIId")
_LENGTH = struct.Struct("<I")
_GRU_NAMES = (
    "w_r",
    "w_z",
    "w_h",
    "u_r",
    "u_z",
    "u_h",
    "b_r",
    "b_z",
    "b_h",
    "w_o",
    "b_o",
)
_NET_NAMES = ("w1", "b1", "w2", "b2")


def _parameter_shapes(
    d: int, hidden: int, n: int, width: int
) -> List[Tuple[str, Tuple[int, ...]]]:
    shapes = [
        ("gru.w_r", (d, hidden)),
        ("gru.w_z", (d, hidden)),
        ("gru.w_h", (d, hidden)),
        ("gru.u_r", (hidden, hidden)),
        ("gru.u_z", (hidden, hidden)),
        ("gru.u_h", (hidden, hidden)),
        ("gru.b_r", (1, hidden)),
        ("gru.b_z", (1, hidden)),
        ("gru.b_h", (1, hidden)),
        ("gru.w_o", (hidden, d)),
        ("gru.b_o", (1, d)),
    ]
    for k in range(n):
        mask = fl.mask_pattern(d, k)
        n_in, n_out = int(mask.sum()) + hidden, int((~mask).sum())
        for net in ("scale", "shift"):
            prefix = f"flow.layer{k}.{net}"
            shapes += [
                (f"{prefix}.w1", (n_in, width)),
                (f"{prefix}.b1", (1, width)),
                (f"{prefix}.w2", (width, n_out)),
                (f"{prefix}.b2", (1, n_out)),
            ]
    return shapes


def encode_checkpoint(model: GruNfModel) -> bytes:
    dims = model.dims
    first = model.flow.layers[0]
    width = np.asarray(first.scale.w1).shape[1]
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, dims.d, dims.hidden, dims.n, width, first.scale_cap
    )
    metadata = json.dumps(asdict(model.metadata), sort_keys=True).encode("utf-8")
    parts = [header, _LENGTH.pack(len(metadata)), metadata]
    parameters = model.parameters()
    for name, shape in _parameter_shapes(dims.d, dims.hidden, dims.n, width):
        value = np.asarray(parameters[name], dtype="<f8")
        assert value.shape == shape, name
        parts.append(np.ascontiguousarray(value).tobytes())
    return b"".join(parts)


def decode_checkpoint(payload: bytes, source: str = "<bytes>") -> GruNfModel:
    if payload[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a GRU-NF checkpoint (bad magic bytes)")
    if len(payload) < _HEADER.size:
        raise CheckpointError(f"{source}: truncated header")
    _, version, d, hidden, n, width, scale_cap = _HEADER.unpack_from(payload, 0)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{source}: format version {version}, this build reads {FORMAT_VERSION}"
        )
    if d < 2 or d % 2 or hidden < 1 or n < 2 or width < 1 or not scale_cap > 0:
        raise CheckpointError(
            f"{source}: inconsistent dimensions d={d}, H={hidden}, n={n}, width={width}"
        )
    offset = _HEADER.size
    if len(payload) < offset + _LENGTH.size:
        raise CheckpointError(f"{source}: truncated before metadata")
    (length,) = _LENGTH.unpack_from(payload, offset)
    offset += _LENGTH.size
    try:
        metadata = TrainingMetadata(
            **json.loads(payload[offset : offset + length].decode("utf-8"))
        )
    except (UnicodeDecodeError, ValueError, TypeError) as e:
        raise CheckpointError(f"{source}: corrupt metadata block: {e}") from e
    offset += length
    parameters: Dict[str, np.ndarray] = {}
    for name, shape in _parameter_shapes(d, hidden, n, width):
        size = int(np.prod(shape)) * 8
        if len(payload) < offset + size:
            raise CheckpointError(f"{source}: truncated in parameter block {name}")
        block = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=offset)
        parameters[name] = block.astype(np.float64).reshape(shape)
        offset += size
    if offset != len(payload):
        raise CheckpointError(f"{source}: {len(payload) - offset} trailing bytes")
    gru = GruParams(**{name: parameters[f"gru.{name}"] for name in _GRU_NAMES})
    layers = []
    for k in range(n):
        nets = {
            net: fl.Conditioner(
                **{key: parameters[f"flow.layer{k}.{net}.{key}"] for key in _NET_NAMES}
            )
            for net in ("scale", "shift")
        }
        layers.append(
            fl.CouplingLayer(mask=fl.mask_pattern(d, k), scale_cap=scale_cap, **nets)
        )
    flow = fl.FlowStack(layers=tuple(layers))
    return GruNfModel(gru=gru, flow=flow, metadata=metadata)


def save_checkpoint(model: GruNfModel, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model))
    logger.debug(f"path={path}")
    return path


def load_checkpoint(path: PathLike) -> GruNfModel:
    path = Path(path)
    logger.debug(f"path={path}")
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(payload, source=str(path))
