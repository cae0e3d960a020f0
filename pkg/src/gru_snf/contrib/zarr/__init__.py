import os
from pathlib import Path
from typing import Optional, Sequence, Union

from pluggy import HookimplMarker

from gru_snf.data import KeypointSequence
from gru_snf.hookspecs import KeypointsReaderFunction, KeypointsWriterFunction

from ._reader import read_keypoints_zarr
from ._writer import write_keypoints_zarr

try:
    import zarr
except ModuleNotFoundError:
    zarr = None


PathLike = Union[str, os.PathLike]

available = zarr is not None
hookimpl = HookimplMarker("gru-snf")


@hookimpl
def gru_snf_get_keypoints_reader(path: PathLike) -> Optional[KeypointsReaderFunction]:
    if available and Path(path).suffix.lower() == ".zarr":
        return read_keypoints_zarr
    return None


@hookimpl
def gru_snf_get_keypoints_writer(
    path: PathLike, sequences: Sequence[KeypointSequence]
) -> Optional[KeypointsWriterFunction]:
    if available and Path(path).suffix.lower() == ".zarr":
        return write_keypoints_zarr
    return None


__all__ = [
    "available",
    "read_keypoints_zarr",
    "write_keypoints_zarr",
    "gru_snf_get_keypoints_reader",
    "gru_snf_get_keypoints_writer",
]
