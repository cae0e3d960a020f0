import csv
import os
from pathlib import Path
from typing import Sequence, Union

from gru_snf.data import KeypointSequence
from gru_snf.errors import ShapeError

PathLike = Union[str, os.PathLike]


def write_keypoints_csv(path: PathLike, sequences: Sequence[KeypointSequence]) -> None:
    dims = {sequence.dim for sequence in sequences}
    if len(dims) > 1:
        raise ShapeError(f"Sequences disagree on d: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    header = ["seq_id", "frame"]
    header += [f"kp{i // 2}_{'xy'[i % 2]}" for i in range(dim)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for sequence in sequences:
            for t, frame in enumerate(sequence.frames):
                writer.writerow([sequence.seq_id, t, *(f"{v:.9g}" for v in frame)])
