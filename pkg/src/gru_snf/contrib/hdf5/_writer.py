import os
from pathlib import Path
from typing import Sequence, Union

from gru_snf.data import KeypointSequence
from gru_snf.errors import KeypointFormatError

from ._reader import GROUP_NAME

try:
    import h5py
except ModuleNotFoundError:
    pass

PathLike = Union[str, os.PathLike]


def write_keypoints_hdf5(path: PathLike, sequences: Sequence[KeypointSequence]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with h5py.File(path, mode="w") as f:
        group = f.create_group(GROUP_NAME)
        for sequence in sequences:
            if "/" in sequence.seq_id:
                raise KeypointFormatError(
                    f"sequence id {sequence.seq_id!r} contains '/'", path=path
                )
            group.create_dataset(name=sequence.seq_id, data=sequence.frames)
        group.attrs["order"] = [sequence.seq_id for sequence in sequences]
