try:
    from ._version import version as __version__
except ImportError:
    __version__ = "unknown"

from ._controller import (
    PipelineController,
    PipelineControllerException,
    controller,
)
from .contrib import csv, hdf5, zarr

if csv.available:
    controller.pm.register(csv, name="gru-snf-csv")
if hdf5.available:
    controller.pm.register(hdf5, name="gru-snf-hdf5")
if zarr.available:
    controller.pm.register(zarr, name="gru-snf-zarr")

__all__ = [
    "controller",
    "PipelineController",
    "PipelineControllerException",
]
