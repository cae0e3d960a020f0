import os
from pathlib import Path
from typing import Optional, Sequence, Union

from pluggy import HookimplMarker

from gru_snf.data import KeypointSequence
from gru_snf.hookspecs import KeypointsReaderFunction, KeypointsWriterFunction

from ._reader import read_keypoints_csv
from ._writer import write_keypoints_csv

PathLike = Union[str, os.PathLike]

available = True
hookimpl = HookimplMarker("gru-snf")


@hookimpl
def gru_snf_get_keypoints_reader(path: PathLike) -> Optional[KeypointsReaderFunction]:
    if Path(path).suffix.lower() == ".csv":
        return read_keypoints_csv
    return None


@hookimpl
def gru_snf_get_keypoints_writer(
    path: PathLike, sequences: Sequence[KeypointSequence]
) -> Optional[KeypointsWriterFunction]:
    if Path(path).suffix.lower() == ".csv":
        return write_keypoints_csv
    return None


__all__ = [
    "available",
    "read_keypoints_csv",
    "write_keypoints_csv",
    "gru_snf_get_keypoints_reader",
    "gru_snf_get_keypoints_writer",
]
