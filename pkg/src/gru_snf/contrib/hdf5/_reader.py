import os
from typing import List, Union

import numpy as np

from gru_snf.data import KeypointSequence
from gru_snf.errors import KeypointFormatError

try:
    import h5py
except ModuleNotFoundError:
    pass

PathLike = Union[str, os.PathLike]

GROUP_NAME = "sequences"


def read_keypoints_hdf5(path: PathLike) -> List[KeypointSequence]:
    with h5py.File(path, mode="r") as f:
        if GROUP_NAME not in f:
            raise KeypointFormatError(f"missing group '{GROUP_NAME}'", path=path)
        group = f[GROUP_NAME]
        order = [
            name.decode("utf-8") if isinstance(name, bytes) else str(name)
            for name in group.attrs.get("order", sorted(group.keys()))
        ]
        sequences = []
        for seq_id in order:
            if seq_id not in group:
                raise KeypointFormatError(f"missing dataset {seq_id!r}", path=path)
            frames = np.asarray(group[seq_id][()], dtype=np.float64)
            if frames.ndim != 2 or not np.all(np.isfinite(frames)):
                raise KeypointFormatError(
                    f"dataset {seq_id!r} is not a finite T x d array", path=path
                )
            sequences.append(KeypointSequence(frames=frames, seq_id=seq_id))
    return sequences
