import os
from typing import List, Union

import numpy as np

from gru_snf.data import KeypointSequence
from gru_snf.errors import KeypointFormatError

try:
    import zarr
except ModuleNotFoundError:
    pass

PathLike = Union[str, os.PathLike]

GROUP_NAME = "sequences"


def read_keypoints_zarr(path: PathLike) -> List[KeypointSequence]:
    root = zarr.open(store=str(path), mode="r")
    if not isinstance(root, zarr.Group) or GROUP_NAME not in root:
        raise KeypointFormatError(f"missing group '{GROUP_NAME}'", path=path)
    group = root[GROUP_NAME]
    order = list(group.attrs.get("order", sorted(group.array_keys())))
    sequences = []
    for seq_id in order:
        if seq_id not in group:
            raise KeypointFormatError(f"missing array {seq_id!r}", path=path)
        frames = np.asarray(group[seq_id][:], dtype=np.float64)
        if frames.ndim != 2 or not np.all(np.isfinite(frames)):
            raise KeypointFormatError(
                f"array {seq_id!r} is not a finite T x d array", path=path
            )
        sequences.append(KeypointSequence(frames=frames, seq_id=seq_id))
    return sequences
