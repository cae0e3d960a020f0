import os
from pathlib import Path
from typing import Optional, Sequence, Union

from pluggy import HookimplMarker

from gru_snf.data import KeypointSequence
from gru_snf.hookspecs import KeypointsReaderFunction, KeypointsWriterFunction

from ._reader import read_keypoints_hdf5
from ._writer import write_keypoints_hdf5

try:
    import h5py
except ModuleNotFoundError:
    h5py = None


PathLike = Union[str, os.PathLike]

available = h5py is not None
hookimpl = HookimplMarker("gru-snf")

_SUFFIXES = (".h5", ".hdf5")


@hookimpl
def gru_snf_get_keypoints_reader(path: PathLike) -> Optional[KeypointsReaderFunction]:
    if available and Path(path).suffix.lower() in _SUFFIXES:
        return read_keypoints_hdf5
    return None


@hookimpl
def gru_snf_get_keypoints_writer(
    path: PathLike, sequences: Sequence[KeypointSequence]
) -> Optional[KeypointsWriterFunction]:
    if available and Path(path).suffix.lower() in _SUFFIXES:
        return write_keypoints_hdf5
    return None


__all__ = [
    "available",
    "read_keypoints_hdf5",
    "write_keypoints_hdf5",
    "gru_snf_get_keypoints_reader",
    "gru_snf_get_keypoints_writer",
]
