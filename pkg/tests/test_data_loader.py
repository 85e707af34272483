import json
import os

import numpy as np
import pytest

from Data_loader.data_loader import (
    Possession,
    denormalize,
    expected_subsample_length,
    ingest,
    normalize,
    parse_tracking,
    parse_tracking_with_stats,
    segment_by_lineup,
    subsample,
    subsample_remainder,
)
from Data_loader.frames_bin import decode_frames, encode_frames, read_frames_bin, write_frames_bin
from Gauss_core.errors import DegenerateFrameError, EmptyInputError, InputFileError, ParseError
from tests.conftest import write_match_csv


def test_possession_parse_variants():
    assert Possession.parse("h") is Possession.HOME
    assert Possession.parse("away") is Possession.AWAY
    assert Possession.parse("") is Possession.UNASSIGNED
    assert Possession.parse(Possession.AWAY) is Possession.AWAY
    assert Possession.parse(2) is Possession.UNASSIGNED
    with pytest.raises(ValueError):
        Possession.parse("X")


def test_parse_csv_sorted_and_indexed(tmp_path):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 30),))
    frames = parse_tracking(path, "csv", d=3)
    assert len(frames) == 30
    assert [f.frame_index for f in frames] == list(range(30))
    assert frames[0].positions.shape == (3, 2)
    assert frames[0].possession is Possession.HOME
    assert frames[-1].lineup_id == "L1"


def test_incomplete_rows_are_dropped(tmp_path):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 20),), incomplete_rows=(3, 7))
    frames, stats = parse_tracking_with_stats(path, "csv", d=3)
    assert stats.rows == 20
    assert stats.dropped_incomplete == 2
    assert len(frames) == 18


def test_non_numeric_cell_names_line(tmp_path):
    path = os.path.join(tmp_path, "bad.csv")
    with open(path, "w") as f:
        f.write("t,player1_x,player1_y,possession,lineup\n")
        f.write("0,1.0,2.0,H,L\n")
        f.write("1,abc,2.0,H,L\n")
    with pytest.raises(ParseError) as err:
        parse_tracking(path, "csv", d=1)
    assert err.value.line == 3


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(InputFileError):
        parse_tracking(os.path.join(tmp_path, "nope.csv"))
    empty = os.path.join(tmp_path, "empty.csv")
    open(empty, "w").close()
    with pytest.raises(EmptyInputError):
        parse_tracking(empty)


def test_jsonl_parsing(tmp_path):
    path = os.path.join(tmp_path, "m.jsonl")
    with open(path, "w") as f:
        for i in range(5):
            rec = {"t": 4 - i, "xy": [[i, 0.0], [0.0, i + 1.0]], "possession": "A", "lineup": "X"}
            f.write(json.dumps(rec) + "\n")
        f.write("\n")
    frames = parse_tracking(path, "jsonl", d=2)
    assert [f.timestamp for f in frames] == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert frames[0].possession is Possession.AWAY

    bad = os.path.join(tmp_path, "bad.jsonl")
    with open(bad, "w") as f:
        f.write('{"t": 0, "xy": [[0, 0]]}\n{not json}\n')
    with pytest.raises(ParseError) as err:
        parse_tracking(bad, "jsonl", d=1)
    assert err.value.line == 2


def test_segments_drop_short_lineups(tmp_path):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 200), ("L2", 30), ("L3", 150)))
    segments = segment_by_lineup(parse_tracking(path, d=3), min_duration=100.0)
    assert [s.lineup_id for s in segments] == ["L1", "L3"]
    assert [s.segment_id for s in segments] == [0, 1]
    assert segments[0].duration == pytest.approx(199.0)


def test_subsample_and_remainder_partition(tmp_path):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 23),))
    seg = segment_by_lineup(parse_tracking(path, d=3), min_duration=0.0)[0]
    kept = subsample(seg, 5)
    rest = subsample_remainder(seg, 5)
    assert len(kept) == expected_subsample_length(23, 5) == 5
    assert len(kept) + len(rest) == 23
    assert {f.frame_index for f in kept}.isdisjoint({f.frame_index for f in rest})
    with pytest.raises(ValueError):
        subsample(seg, 0)


def test_normalize_zero_mean_unit_std(tmp_path):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 5),))
    frame = parse_tracking(path, d=3)[0]
    nf = normalize(frame, segment_id=4)
    assert np.allclose(nf.y.mean(axis=0), 0.0)
    assert np.allclose(nf.y.std(axis=0), 1.0)
    assert nf.segment_id == 4
    assert np.allclose(denormalize(nf), frame.positions)


def test_normalize_rejects_degenerate(tmp_path):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 5),), degenerate_rows=(0,))
    with pytest.raises(DegenerateFrameError):
        normalize(parse_tracking(path, d=3)[0])


def test_ingest_counts_and_summary(tmp_path):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 400), ("L2", 20)),
                           degenerate_rows=(0, 1))
    result = ingest(path, "csv", stride=5, min_segment_sec=100.0, d=3)
    assert result.segments_discarded == 1
    assert result.degenerate_excluded == 2
    # row 0 is kept by the stride, row 1 is held out
    assert len(result.frames) == 80 - 1
    assert len(result.heldout) == 320 - 1
    assert list(result.summary.columns) == ["segment_id", "lineup", "start", "end", "duration", "n_frames"]
    assert result.summary["n_frames"].tolist() == [400]


def test_ingest_left_attack_mirrors_frames(tmp_path):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 50),))
    right = ingest(path, stride=1, min_segment_sec=0.0, attack_side="right", d=3)
    left = ingest(path, stride=1, min_segment_sec=0.0, attack_side="left", d=3)
    assert np.allclose(left.frames[7].y, -right.frames[7].y)


def test_frames_bin_preserves_frames(tmp_path):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 60),))
    frames = ingest(path, stride=3, min_segment_sec=0.0, d=3).frames
    out = os.path.join(tmp_path, "frames.bin")
    write_frames_bin(out, frames)
    back = read_frames_bin(out)
    assert len(back) == len(frames)
    assert np.array_equal(back[5].y, frames[5].y)
    assert back[5].possession is frames[5].possession
    assert back[5].frame_index == frames[5].frame_index


def test_frames_bin_rejects_bad_input(tmp_path):
    with pytest.raises(ParseError):
        decode_frames(b"NOPE\x03\x00\x00\x00")
    blob = encode_frames([], d=3)
    assert decode_frames(blob) == []
    with pytest.raises(ParseError):
        decode_frames(blob + b"\x00" * 7)
    with pytest.raises(InputFileError):
        read_frames_bin(os.path.join(tmp_path, "missing.bin"))


def test_failed_frames_bin_write_leaves_no_temp_file(tmp_path, monkeypatch):
    path = write_match_csv(os.path.join(tmp_path, "m.csv"), lineups=(("L1", 30),))
    frames = ingest(path, min_segment_sec=0.0, d=3).frames
    out_dir = os.path.join(tmp_path, "out")
    os.makedirs(out_dir)

    def fail(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", fail)
    with pytest.raises(OSError):
        write_frames_bin(os.path.join(out_dir, "frames.bin"), frames)
    assert os.listdir(out_dir) == []
