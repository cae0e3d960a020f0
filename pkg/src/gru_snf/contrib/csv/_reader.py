import csv
import math
import os
import re
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from gru_snf.data import KeypointSequence
from gru_snf.errors import KeypointFormatError

PathLike = Union[str, os.PathLike]

_COLUMN = re.compile(r"^kp(\d+)_([xy])$")


def read_keypoints_csv(path: PathLike) -> List[KeypointSequence]:
    """Parse `seq_id,frame,kp0_x,kp0_y,...` rows; a sequence's rows are contiguous."""
    path = Path(path)
    with path.open("r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise KeypointFormatError("empty file", path=path, line=1)
        width = _check_header(header, path)
        sequences: List[KeypointSequence] = []
        seen = set()
        current: Optional[str] = None
        rows: List[List[float]] = []
        last_line = 1
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if width == 0:
                raise KeypointFormatError(
                    "header has no keypoint columns", path=path, line=1
                )
            if len(row) != width + 2:
                raise KeypointFormatError(
                    f"expected {width + 2} fields, got {len(row)}", path=path, line=line
                )
            seq_id, frame = row[0], _parse_frame(row[1], path, line)
            if seq_id != current:
                if current is not None:
                    sequences.append(_finish(current, rows, path, last_line))
                if seq_id in seen:
                    raise KeypointFormatError(
                        f"rows of sequence {seq_id!r} are not contiguous",
                        path=path,
                        line=line,
                    )
                seen.add(seq_id)
                current, rows = seq_id, []
            if frame != len(rows):
                raise KeypointFormatError(
                    f"sequence {seq_id!r}: expected frame {len(rows)}, got {frame}",
                    path=path,
                    line=line,
                )
            rows.append(_parse_values(row[2:], path, line))
            last_line = line
        if current is not None:
            sequences.append(_finish(current, rows, path, last_line))
    return sequences


def _check_header(header: Sequence[str], path: Path) -> int:
    if len(header) < 2 or header[0] != "seq_id" or header[1] != "frame":
        raise KeypointFormatError(
            "header must start with seq_id,frame followed by keypoint columns",
            path=path,
            line=1,
        )
    columns = header[2:]
    if len(columns) % 2 != 0:
        raise KeypointFormatError(
            f"odd number of coordinate columns ({len(columns)})", path=path, line=1
        )
    for i, column in enumerate(columns):
        expected = f"kp{i // 2}_{'xy'[i % 2]}"
        if not _COLUMN.match(column) or column != expected:
            raise KeypointFormatError(
                f"column {i + 3} is {column!r}, expected {expected!r}",
                path=path,
                line=1,
            )
    return len(columns)


def _parse_frame(text: str, path: Path, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise KeypointFormatError(f"bad frame index {text!r}", path=path, line=line)


def _parse_values(fields: Sequence[str], path: Path, line: int) -> List[float]:
    values = []
    for text in fields:
        try:
            value = float(text)
        except ValueError:
            raise KeypointFormatError(f"bad coordinate {text!r}", path=path, line=line)
        if not math.isfinite(value):
            raise KeypointFormatError(
                f"non-finite coordinate {text!r}", path=path, line=line
            )
        values.append(value)
    return values


def _finish(
    seq_id: str, rows: List[List[float]], path: Path, line: int
) -> KeypointSequence:
    if len(rows) < 2:
        raise KeypointFormatError(
            f"sequence {seq_id!r} has fewer than 2 frames", path=path, line=line
        )
    return KeypointSequence(frames=np.array(rows, dtype=np.float64), seq_id=seq_id)
