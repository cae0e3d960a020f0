import os
from typing import Sequence, Union

import numpy as np

from gru_snf.data import KeypointSequence
from gru_snf.errors import KeypointFormatError

from ._reader import GROUP_NAME

try:
    import zarr
except ModuleNotFoundError:
    pass

PathLike = Union[str, os.PathLike]


def write_keypoints_zarr(path: PathLike, sequences: Sequence[KeypointSequence]) -> None:
    z = zarr.open(store=str(path), mode="w")
    assert isinstance(z, zarr.Group)
    group = z.create_group(GROUP_NAME)
    for sequence in sequences:
        if "/" in sequence.seq_id:
            raise KeypointFormatError(
                f"sequence id {sequence.seq_id!r} contains '/'", path=path
            )
        group.create_dataset(name=sequence.seq_id, data=np.asarray(sequence.frames))
    group.attrs["order"] = [sequence.seq_id for sequence in sequences]
