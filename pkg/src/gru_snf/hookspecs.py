import os
from typing import TYPE_CHECKING, Callable, List, Optional, Sequence, Union

from pluggy import HookspecMarker

if TYPE_CHECKING:
    from .data import KeypointSequence

PathLike = Union[str, os.PathLike]
KeypointsReaderFunction = Callable[[PathLike], List["KeypointSequence"]]
KeypointsWriterFunction = Callable[[PathLike, Sequence["KeypointSequence"]], None]

hookspec = HookspecMarker("gru-snf")


@hookspec(firstresult=True)
def gru_snf_get_keypoints_reader(
    path: PathLike,
) -> Optional[KeypointsReaderFunction]:
    pass


@hookspec(firstresult=True)
def gru_snf_get_keypoints_writer(
    path: PathLike, sequences: Sequence["KeypointSequence"]
) -> Optional[KeypointsWriterFunction]:
    pass
