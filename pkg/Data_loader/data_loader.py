"""
data_loader.py
- reads tracking data (CSV or JSON-lines) into TrackingFrame lists
- segments by lineup, orients attack to the right, subsamples, normalizes
- returns model-ready NormalizedFrame lists and a per-segment summary table
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from Gauss_core.errors import DegenerateFrameError, EmptyInputError, InputFileError, ParseError
from Schema_mapper.schema_mapper import map_tracking_columns

logger = logging.getLogger(__name__)

N_PLAYERS = 11
DEFAULT_MIN_SEGMENT_SEC = 300.0
DEFAULT_STRIDE = 5
STD_FLOOR = 1e-12


class Possession(str, Enum):
    HOME = "H"
    AWAY = "A"
    UNASSIGNED = "N"

    @property
    def code(self) -> int:
        return {"H": 0, "A": 1, "N": 2}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "Possession":
        return [cls.HOME, cls.AWAY, cls.UNASSIGNED][int(code)]

    @classmethod
    def parse(cls, raw) -> "Possession":
        if isinstance(raw, cls):
            return raw
        if isinstance(raw, (int, np.integer)):
            return cls.from_code(raw)
        token = str(raw).strip().upper()
        aliases = {"H": "H", "HOME": "H", "A": "A", "AWAY": "A", "N": "N", "NONE": "N", "": "N", "UNASSIGNED": "N"}
        if token not in aliases:
            raise ValueError(f"unknown possession value {raw!r}")
        return cls(aliases[token])


@dataclass(frozen=True, eq=False)
class TrackingFrame:
    timestamp: float
    positions: np.ndarray
    possession: Possession
    lineup_id: str
    frame_index: int = -1


@dataclass(eq=False)
class Segment:
    frames: List[TrackingFrame]
    lineup_id: str
    segment_id: int = 0

    @property
    def duration(self) -> float:
        if len(self.frames) < 2:
            return 0.0
        return float(self.frames[-1].timestamp - self.frames[0].timestamp)

    @property
    def start(self) -> float:
        return float(self.frames[0].timestamp) if self.frames else float("nan")

    @property
    def end(self) -> float:
        return float(self.frames[-1].timestamp) if self.frames else float("nan")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True, eq=False)
class NormalizedFrame:
    y: np.ndarray
    frame_mean: np.ndarray
    frame_std: np.ndarray
    timestamp: float = 0.0
    frame_index: int = -1
    segment_id: int = 0
    possession: Possession = Possession.UNASSIGNED


@dataclass
class ParseStats:
    rows: int = 0
    dropped_incomplete: int = 0


@dataclass
class IngestResult:
    frames: List[NormalizedFrame]
    heldout: List[NormalizedFrame]
    segments: List[Segment]
    parse_stats: ParseStats
    degenerate_excluded: int = 0
    segments_discarded: int = 0
    summary: pd.DataFrame = field(default_factory=pd.DataFrame)


# ---------- Parsing ----------
def _check_path(path: str) -> None:
    if not os.path.exists(path):
        raise InputFileError(f"input file not found: {path}", {"path": path})
    if os.path.getsize(path) == 0:
        raise EmptyInputError(f"input file is empty: {path}", {"path": path})


def _coerce_numeric(df: pd.DataFrame, cols: Sequence[str], first_line: int) -> pd.DataFrame:
    """Numeric conversion; a non-empty cell that fails to convert is a parse error naming its line."""
    out = pd.DataFrame(index=df.index)
    for c in cols:
        raw = df[c]
        num = pd.to_numeric(raw, errors="coerce")
        bad = num.isna() & raw.notna() & (raw.astype(str).str.strip() != "")
        if bad.any():
            pos = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(f"non-numeric value {raw.iloc[pos]!r} in column {c!r}", line=first_line + pos)
        out[c] = num.astype(float)
    return out


def _frames_from_table(
    t: np.ndarray, xy: np.ndarray, possession: Sequence, lineup: Sequence, lines: Sequence[int], d: int
) -> Tuple[List[TrackingFrame], ParseStats]:
    stats = ParseStats(rows=len(t))
    frames: List[TrackingFrame] = []
    for i in range(len(t)):
        if not np.isfinite(t[i]):
            raise ParseError("missing or non-finite timestamp", line=lines[i])
        try:
            poss = Possession.parse(possession[i])
        except ValueError as e:
            raise ParseError(str(e), line=lines[i])
        present = np.all(np.isfinite(xy[i]), axis=1)
        if present.sum() < d:
            stats.dropped_incomplete += 1
            continue
        frames.append(TrackingFrame(float(t[i]), xy[i].copy(), poss, str(lineup[i]), frame_index=i))
    order = sorted(range(len(frames)), key=lambda j: frames[j].timestamp)
    frames = [frames[j] for j in order]
    frames = [replace(f, frame_index=j) for j, f in enumerate(frames)]
    return frames, stats


def _parse_csv(path: str, d: int) -> Tuple[List[TrackingFrame], ParseStats]:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"input file has no rows: {path}")
    except pd.errors.ParserError as e:
        raise ParseError(f"malformed CSV: {e}")
    if df.empty:
        raise EmptyInputError(f"input file has a header but no rows: {path}")
    mapping = map_tracking_columns(list(df.columns), d)
    coord_cols = [mapping[f"player{k}_{ax}"] for k in range(1, d + 1) for ax in ("x", "y")]
    df = df.replace({"": np.nan})
    num = _coerce_numeric(df, [mapping["t"]] + coord_cols, first_line=2)
    xy = num[coord_cols].to_numpy().reshape(len(df), d, 2)
    lines = list(range(2, len(df) + 2))
    return _frames_from_table(
        num[mapping["t"]].to_numpy(), xy, df[mapping["possession"]].fillna("N").tolist(),
        df[mapping["lineup"]].fillna("").tolist(), lines, d,
    )


def _parse_jsonl(path: str, d: int) -> Tuple[List[TrackingFrame], ParseStats]:
    records, lines = [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line=lineno)
            if not isinstance(obj, dict) or "t" not in obj or "xy" not in obj:
                raise ParseError("record needs fields 't' and 'xy'", line=lineno)
            records.append(obj)
            lines.append(lineno)
    if not records:
        raise EmptyInputError(f"input file has no records: {path}")
    n = len(records)
    t = np.empty(n)
    xy = np.full((n, d, 2), np.nan)
    for i, rec in enumerate(records):
        try:
            t[i] = float(rec["t"])
            rows = rec["xy"]
            for k, p in enumerate(rows[:d]):
                if p is None or p[0] is None or p[1] is None:
                    continue
                xy[i, k] = [float(p[0]), float(p[1])]
        except (TypeError, ValueError, IndexError) as e:
            raise ParseError(f"bad numeric content: {e}", line=lines[i])
    frame = pd.DataFrame(records)
    possession = frame["possession"].fillna("N").tolist() if "possession" in frame else ["N"] * n
    lineup = frame["lineup"].fillna("").astype(str).tolist() if "lineup" in frame else [""] * n
    return _frames_from_table(t, xy, possession, lineup, lines, d)


def parse_tracking_with_stats(path: str, fmt: str = "csv", d: int = N_PLAYERS) -> Tuple[List[TrackingFrame], ParseStats]:
    _check_path(path)
    fmt = fmt.lower()
    if fmt == "csv":
        frames, stats = _parse_csv(path, d)
    elif fmt in ("jsonl", "json-lines", "ndjson"):
        frames, stats = _parse_jsonl(path, d)
    else:
        raise ParseError(f"unsupported format {fmt!r}; expected csv or jsonl")
    if stats.dropped_incomplete:
        logger.info("Dropped %d of %d rows with fewer than %d tracked players", stats.dropped_incomplete, stats.rows, d)
    return frames, stats


def parse_tracking(path: str, fmt: str = "csv", d: int = N_PLAYERS) -> List[TrackingFrame]:
    frames, _ = parse_tracking_with_stats(path, fmt, d)
    return frames


# ---------- Segmentation ----------
def segment_by_lineup(frames: Sequence[TrackingFrame], min_duration: float = DEFAULT_MIN_SEGMENT_SEC) -> List[Segment]:
    runs: List[List[TrackingFrame]] = []
    for f in frames:
        if runs and runs[-1][-1].lineup_id == f.lineup_id:
            runs[-1].append(f)
        else:
            runs.append([f])
    segments = []
    for run in runs:
        seg = Segment(run, run[0].lineup_id)
        if seg.duration >= min_duration:
            seg.segment_id = len(segments)
            segments.append(seg)
        else:
            logger.info("Discarding lineup run %r of %.1f s (< %.1f s)", seg.lineup_id, seg.duration, min_duration)
    return segments


def subsample(segment: Segment, stride: int = DEFAULT_STRIDE) -> Segment:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return Segment(segment.frames[::stride], segment.lineup_id, segment.segment_id)


def subsample_remainder(segment: Segment, stride: int = DEFAULT_STRIDE) -> Segment:
    """Frames skipped by subsample(segment, stride)."""
    kept = [f for i, f in enumerate(segment.frames) if i % stride != 0]
    return Segment(kept, segment.lineup_id, segment.segment_id)


def orient_attack_right(segment: Segment, attacking_side: str = "right") -> Segment:
    side = str(attacking_side).lower()
    if side not in ("left", "right"):
        raise ValueError(f"attacking_side must be 'left' or 'right', got {attacking_side!r}")
    if side == "right":
        return segment
    flipped = [replace(f, positions=-f.positions) for f in segment.frames]
    return Segment(flipped, segment.lineup_id, segment.segment_id)


# ---------- Normalization ----------
def normalize(frame: TrackingFrame, segment_id: int = 0) -> NormalizedFrame:
    pos = np.asarray(frame.positions, dtype=float)
    mean = pos.mean(axis=0)
    std = pos.std(axis=0)
    if np.any(std <= STD_FLOOR):
        raise DegenerateFrameError(
            f"frame at t={frame.timestamp} has zero spread along an axis",
            {"timestamp": frame.timestamp, "std": std.tolist()},
        )
    return NormalizedFrame(
        y=(pos - mean) / std, frame_mean=mean, frame_std=std, timestamp=float(frame.timestamp),
        frame_index=frame.frame_index, segment_id=segment_id, possession=frame.possession,
    )


def denormalize(nf: NormalizedFrame) -> np.ndarray:
    return nf.y * nf.frame_std + nf.frame_mean


def normalize_segment(segment: Segment) -> Tuple[List[NormalizedFrame], int]:
    out, excluded = [], 0
    for f in segment.frames:
        try:
            out.append(normalize(f, segment.segment_id))
        except DegenerateFrameError:
            excluded += 1
    if excluded:
        logger.warning("Excluded %d degenerate frames from segment %d", excluded, segment.segment_id)
    return out, excluded


def describe_segments(segments: Sequence[Segment]) -> pd.DataFrame:
    rows = [
        {"segment_id": s.segment_id, "lineup": s.lineup_id, "start": s.start, "end": s.end,
         "duration": s.duration, "n_frames": len(s)}
        for s in segments
    ]
    return pd.DataFrame(rows, columns=["segment_id", "lineup", "start", "end", "duration", "n_frames"])


def ingest(
    path: str,
    fmt: str = "csv",
    stride: int = DEFAULT_STRIDE,
    min_segment_sec: float = DEFAULT_MIN_SEGMENT_SEC,
    attack_side: Union[str, Sequence[str], Dict[int, str]] = "right",
    d: int = N_PLAYERS,
) -> IngestResult:
    """
    Full ingestion chain: parse -> segment -> orient -> subsample -> normalize.
    attack_side is one side for every segment, or one per segment (sequence or {segment_id: side}).
    """
    frames, stats = parse_tracking_with_stats(path, fmt, d)
    runs_before = sum(1 for i, f in enumerate(frames) if i == 0 or frames[i - 1].lineup_id != f.lineup_id)
    segments = segment_by_lineup(frames, min_segment_sec)
    kept, heldout, degenerate = [], [], 0
    oriented = []
    for seg in segments:
        if isinstance(attack_side, str):
            side = attack_side
        elif isinstance(attack_side, dict):
            side = attack_side.get(seg.segment_id, "right")
        else:
            side = attack_side[seg.segment_id]
        seg = orient_attack_right(seg, side)
        oriented.append(seg)
        main, n_bad = normalize_segment(subsample(seg, stride))
        rest, n_bad_rest = normalize_segment(subsample_remainder(seg, stride))
        kept.extend(main)
        heldout.extend(rest)
        degenerate += n_bad + n_bad_rest
    logger.info(
        "Ingested %d frames (%d held out) in %d segments from %s", len(kept), len(heldout), len(segments), path
    )
    return IngestResult(
        frames=kept, heldout=heldout, segments=oriented, parse_stats=stats,
        degenerate_excluded=degenerate, segments_discarded=max(runs_before - len(segments), 0),
        summary=describe_segments(oriented),
    )


def expected_subsample_length(n: int, stride: int) -> int:
    return int(math.ceil(n / stride)) if n else 0
