"""
frames_bin.py
- FLF1 little-endian binary store of NormalizedFrames
- layout: b"FLF1", uint32 d, then fixed-size records:
    t f8 | frame_index i8 | segment_id i4 | possession i4 (0 H, 1 A, 2 N)
    | frame_mean 2*f8 | frame_std 2*f8 | y d*2*f8
- writes are atomic (temp file + os.replace)
"""
import logging
import os
import tempfile
from typing import List, Sequence

import numpy as np

from Data_loader.data_loader import NormalizedFrame, Possession
from Gauss_core.errors import EmptyInputError, InputFileError, ParseError

logger = logging.getLogger(__name__)

MAGIC = b"FLF1"
_HEADER = np.dtype([("magic", "S4"), ("d", "<u4")])


def record_dtype(d: int) -> np.dtype:
    return np.dtype([
        ("t", "<f8"),
        ("frame_index", "<i8"),
        ("segment_id", "<i4"),
        ("possession", "<i4"),
        ("frame_mean", "<f8", (2,)),
        ("frame_std", "<f8", (2,)),
        ("y", "<f8", (d, 2)),
    ])


def encode_frames(frames: Sequence[NormalizedFrame], d: int = None) -> bytes:
    if d is None:
        if not frames:
            raise EmptyInputError("cannot infer d from an empty frame list")
        d = frames[0].y.shape[0]
    rec = np.zeros(len(frames), dtype=record_dtype(d))
    for i, f in enumerate(frames):
        rec[i]["t"] = f.timestamp
        rec[i]["frame_index"] = f.frame_index
        rec[i]["segment_id"] = f.segment_id
        rec[i]["possession"] = Possession(f.possession).code
        rec[i]["frame_mean"] = f.frame_mean
        rec[i]["frame_std"] = f.frame_std
        rec[i]["y"] = f.y
    header = np.array([(MAGIC, d)], dtype=_HEADER)
    return header.tobytes() + rec.tobytes()


def decode_frames(blob: bytes) -> List[NormalizedFrame]:
    if len(blob) < _HEADER.itemsize or blob[:4] != MAGIC:
        raise ParseError("not an FLF1 frames file (bad magic)")
    d = int(np.frombuffer(blob[:_HEADER.itemsize], dtype=_HEADER)[0]["d"])
    dt = record_dtype(d)
    body = blob[_HEADER.itemsize:]
    if len(body) % dt.itemsize:
        raise ParseError(f"truncated FLF1 file: {len(body)} bytes is not a multiple of record size {dt.itemsize}")
    rec = np.frombuffer(body, dtype=dt)
    return [
        NormalizedFrame(
            y=np.array(r["y"]), frame_mean=np.array(r["frame_mean"]), frame_std=np.array(r["frame_std"]),
            timestamp=float(r["t"]), frame_index=int(r["frame_index"]), segment_id=int(r["segment_id"]),
            possession=Possession.from_code(int(r["possession"])),
        )
        for r in rec
    ]


def write_frames_bin(path: str, frames: Sequence[NormalizedFrame], d: int = None) -> None:
    blob = encode_frames(frames, d)
    dirpath = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirpath, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirpath)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug("Wrote %d frames to %s", len(frames), path)


def read_frames_bin(path: str) -> List[NormalizedFrame]:
    if not os.path.exists(path):
        raise InputFileError(f"frames file not found: {path}", {"path": path})
    with open(path, "rb") as f:
        return decode_frames(f.read())
