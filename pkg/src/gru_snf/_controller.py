import logging
import os
from typing import TYPE_CHECKING, List, Optional, Sequence, Union

from pluggy import PluginManager

from . import hookspecs
from .errors import GruSnfError, PipelineIOError

if TYPE_CHECKING:
    from .data import KeypointSequence

PathLike = Union[str, os.PathLike]

logger = logging.getLogger(__name__)


class PipelineController:
    """Routes keypoint file reads and writes to the plugin that claims the path."""

    def __init__(self) -> None:
        self._pm = PluginManager("gru-snf")
        self._pm.add_hookspecs(hookspecs)
        self._pm.load_setuptools_entrypoints("gru-snf")

    def can_read_keypoints(self, path: PathLike) -> bool:
        return self._get_keypoints_reader_function(path) is not None

    def read_keypoints(self, path: PathLike) -> List["KeypointSequence"]:
        logger.debug(f"path={path}")
        reader_function = self._get_keypoints_reader_function(path)
        if reader_function is None:
            raise PipelineControllerException(f"No keypoints reader found for {path}")
        try:
            return reader_function(path)
        except GruSnfError:
            raise
        except OSError as e:
            raise PipelineIOError(f"Cannot read {path}: {e}") from e
        except Exception as e:
            raise PipelineControllerException(e) from e

    def can_write_keypoints(
        self, path: PathLike, sequences: Sequence["KeypointSequence"]
    ) -> bool:
        return self._get_keypoints_writer_function(path, sequences) is not None

    def write_keypoints(
        self, path: PathLike, sequences: Sequence["KeypointSequence"]
    ) -> None:
        logger.debug(f"path={path}, sequences={len(sequences)}")
        writer_function = self._get_keypoints_writer_function(path, sequences)
        if writer_function is None:
            raise PipelineControllerException(f"No keypoints writer found for {path}")
        try:
            writer_function(path, sequences)
        except GruSnfError:
            raise
        except OSError as e:
            raise PipelineIOError(f"Cannot write {path}: {e}") from e
        except Exception as e:
            raise PipelineControllerException(e) from e

    def _get_keypoints_reader_function(
        self, path: PathLike
    ) -> Optional[hookspecs.KeypointsReaderFunction]:
        return self._pm.hook.gru_snf_get_keypoints_reader(path=path)

    def _get_keypoints_writer_function(
        self, path: PathLike, sequences: Sequence["KeypointSequence"]
    ) -> Optional[hookspecs.KeypointsWriterFunction]:
        return self._pm.hook.gru_snf_get_keypoints_writer(
            path=path, sequences=sequences
        )

    @property
    def pm(self) -> PluginManager:
        return self._pm


class PipelineControllerException(PipelineIOError):
    pass


controller = PipelineController()
