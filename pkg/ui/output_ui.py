"""
output_ui.py
- JSON / CSV writers (atomic temp file + os.replace, sorted keys, schema_version stamped and validated)
- machine-readable error JSON for stderr
- posteriors table, model initialization from config, and the end-to-end pipeline per segment
"""
import json
import logging
import os
import tempfile
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np
import pandas as pd

from Data_loader.data_loader import NormalizedFrame, ingest
from Data_loader.frames_bin import write_frames_bin
from Dashboard.dashboard_generator import formation_ellipses, regime_timeline
from Gauss_core.errors import FormlabError, InputFileError, ParseError
from Gauss_core.gauss_core import Formation, as_frame_array, naive_formation
from Form_metrics.form_metrics import substitution_distance_report
from Insight.insight_engine import build_report
from Perm_gmm.perm_gmm import (
    InitMode,
    PermDistribution,
    Posteriors,
    Regime,
    RegimeModel,
    aggregate_no_swap,
    e_step,
    fit,
    init_multi_regime,
    init_one_regime,
    model_to_dict,
    posterior_identity,
    identity_half_weights,
)
from Perm_select.perm_select import CandidateSet, SelectionConfig, candidates_to_dict, select_permutations
from Schema_mapper.schema_mapper import SCHEMA_VERSION, validate_document
from Shared_gmm.shared_gmm import SharedFit, build_independent_dataset, fit_shared_gmm, init_shared, shared_to_dict
from Sim_lab.sim_lab import stage_seed
from ui.input_ui import PipelineConfig

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.10g"


# ---------- Writers ----------
def _atomic_write(path: str, text: str) -> None:
    dirpath = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirpath, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirpath, text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, doc: Dict[str, Any], kind: Optional[str] = None) -> Dict[str, Any]:
    doc = {"schema_version": SCHEMA_VERSION, **doc}
    if kind is not None:
        validate_document(kind, doc)
    _atomic_write(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    logger.debug("Wrote %s", path)
    return doc


def read_json(path: str, kind: Optional[str] = None) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise InputFileError(f"file not found: {path}", {"path": path})
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON in {path}: {e.msg}", line=e.lineno)
    if kind is not None:
        validate_document(kind, doc)
    return doc


def write_csv(path: str, df: pd.DataFrame) -> None:
    _atomic_write(path, df.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\r\n"))
    logger.debug("Wrote %s (%d rows)", path, len(df))


def emit_error(err: BaseException, stream: TextIO) -> int:
    """Writes one JSON error object to `stream` and returns the exit code."""
    if isinstance(err, FormlabError):
        payload, code = err.to_dict(), err.exit_code
    else:
        payload, code = {"error": "internal", "message": str(err), "details": {"type": type(err).__name__}}, 1
    stream.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
    return code


# ---------- Tables ----------
def posteriors_table(frames: Sequence, post: Posteriors) -> pd.DataFrame:
    n, l = post.v.shape
    if isinstance(frames, np.ndarray) or not len(frames) or not hasattr(frames[0], "timestamp"):
        index, t = np.arange(n), np.arange(n, dtype=float)
    else:
        index = np.array([f.frame_index for f in frames])
        t = np.array([f.timestamp for f in frames])
    ident = posterior_identity(post)
    data: Dict[str, Any] = {"frame_index": index, "t": t}
    for r in range(l):
        data[f"v_{r}"] = post.v[:, r]
    for r in range(l):
        data[f"w_identity_{r}"] = ident[:, r]
    return pd.DataFrame(data)


def dominant_formation(model: RegimeModel) -> Formation:
    return max(model.regimes, key=lambda reg: reg.v).formation


def regime_ellipses(model: RegimeModel, n_std: float = 1.0) -> pd.DataFrame:
    parts = [formation_ellipses(reg.formation, n_std).assign(regime=r) for r, reg in enumerate(model.regimes)]
    return pd.concat(parts, ignore_index=True)[["regime", "role", "mu_x", "mu_y", "width", "height", "angle_deg"]]


# ---------- Model initialization ----------
def _identity_half_one_regime(frames, cands: CandidateSet, eps: float) -> RegimeModel:
    weights = identity_half_weights(cands.perms)
    return RegimeModel((Regime(naive_formation(frames, eps), PermDistribution(tuple(cands.perms), weights), 1.0),))


def initial_model(cfg: PipelineConfig, frames: Sequence, cands: CandidateSet,
                  shared: Optional[SharedFit] = None) -> RegimeModel:
    mode = cfg.init_mode
    if cfg.regimes == 1:
        if shared is not None and mode != "identity-half":
            return init_one_regime(shared, cands)
        return _identity_half_one_regime(frames, cands, cfg.eps_sigma)
    multi = {
        "shared": InitMode.CHRONOLOGICAL_SPLIT,
        "chrono": InitMode.CHRONOLOGICAL_SPLIT,
        "possession": InitMode.FROM_POSSESSION,
        "identity-half": InitMode.IDENTITY_HALF,
    }[mode]
    return init_multi_regime(frames, cands, cfg.regimes, multi, shared=shared, team_side=cfg.team_side,
                             eps=cfg.eps_sigma)


def selection_config(cfg: PipelineConfig, seed: int) -> SelectionConfig:
    return SelectionConfig(
        p_thresh=cfg.p_thresh, o_thresh=cfg.o_thresh, alpha=cfg.alpha, k_components=cfg.gmm_components,
        seed=seed, max_candidates=cfg.max_candidates, heldout_cap_factor=cfg.heldout_cap_factor,
        eps=cfg.eps_sigma, threads=cfg.threads,
    )


def selection_config_doc(cfg: PipelineConfig) -> Dict[str, Any]:
    return {"p_thresh": cfg.p_thresh, "o_thresh": cfg.o_thresh, "alpha": cfg.alpha,
            "gmm_components": cfg.gmm_components, "seed": cfg.seed}


# ---------- Pipeline ----------
def fit_companion(cfg: PipelineConfig, y: np.ndarray, frames: Sequence, cands: CandidateSet,
                  shared: SharedFit) -> Optional[RegimeModel]:
    """The one-regime fit for a two-regime run and vice versa, for the overlap comparison."""
    if cfg.regimes not in (1, 2):
        return None
    other = cfg.model_copy(update={"regimes": 3 - cfg.regimes})
    try:
        return fit(y, initial_model(other, frames, cands, shared), cfg.max_iter, cfg.tol, cfg.prune,
                   cfg.eps_sigma, cfg.threads)
    except FormlabError as err:
        logger.warning("Comparison fit with %d regime(s) failed (%s); overlap comparison skipped",
                       other.regimes, err)
        return None


def run_segment(cfg: PipelineConfig, frames: List[NormalizedFrame], heldout: List[NormalizedFrame],
                segment_id: int, out_dir: str) -> Tuple[Dict[str, Any], RegimeModel]:
    """Shared fit -> permutation selection -> EM -> posteriors and report, for one segment."""
    logger.info("Segment %d: %d frames, %d held out", segment_id, len(frames), len(heldout))
    os.makedirs(out_dir, exist_ok=True)
    y = as_frame_array(frames)

    shared_seed = stage_seed(cfg.seed, "shared", segment_id)
    shared = fit_shared_gmm(build_independent_dataset(y, shared_seed), init_shared(y, cfg.eps_sigma),
                            cfg.max_iter, cfg.tol, cfg.eps_sigma)
    write_json(os.path.join(out_dir, "shared.json"), shared_to_dict(shared, shared_seed), "shared")

    select_seed = stage_seed(cfg.seed, "select", segment_id)
    cands = select_permutations(y, shared, selection_config(cfg, select_seed), heldout if heldout else None)
    write_json(os.path.join(out_dir, "perms.json"), candidates_to_dict(cands, selection_config_doc(cfg)), "perms")

    model = fit(y, initial_model(cfg, frames, cands, shared), cfg.max_iter, cfg.tol, cfg.prune, cfg.eps_sigma,
                cfg.threads)
    meta = {"segment_id": segment_id, "init": cfg.init, "seed": cfg.seed}
    write_json(os.path.join(out_dir, "model.json"), model_to_dict(model, meta), "model")

    post = e_step(y, model, cfg.threads)
    table = posteriors_table(frames, post)
    write_csv(os.path.join(out_dir, "posteriors.csv"), table)
    write_csv(os.path.join(out_dir, "timeline.csv"), regime_timeline(table))
    write_csv(os.path.join(out_dir, "ellipses.csv"), regime_ellipses(model))

    compare = fit_companion(cfg, y, frames, cands, shared)
    if compare is not None:
        write_json(os.path.join(out_dir, "compare_model.json"),
                   model_to_dict(compare, {**meta, "regimes": compare.n_regimes}), "model")

    report = build_report(model, y, [f.possession for f in frames], compare, cfg.team_side)
    write_json(os.path.join(out_dir, "report.json"), report, "report")

    row = {
        "segment_id": segment_id,
        "n_frames": len(frames),
        "n_heldout": len(heldout),
        "n_perms": len(cands.perms),
        "no_swap_probability": report["no_swap_probability"],
        "no_swap_parameter": report["no_swap_parameter"],
        "dir": os.path.basename(out_dir),
    }
    return row, model


def run_pipeline(cfg: PipelineConfig, input_path: str, out_dir: str) -> Dict[str, Any]:
    """Ingests `input_path` and runs every kept segment; writes frames.bin, segments.csv and summary.json."""
    result = ingest(input_path, cfg.input_format, cfg.stride, cfg.min_segment_sec, cfg.attack_side, cfg.d)
    os.makedirs(out_dir, exist_ok=True)
    write_frames_bin(os.path.join(out_dir, "frames.bin"), result.frames, cfg.d)
    write_csv(os.path.join(out_dir, "segments.csv"), result.summary)

    rows, fitted, starts = [], [], []
    for seg in result.segments:
        frames = [f for f in result.frames if f.segment_id == seg.segment_id]
        heldout = [f for f in result.heldout if f.segment_id == seg.segment_id]
        if not frames:
            logger.warning("Segment %d has no usable frames, skipped", seg.segment_id)
            continue
        row, model = run_segment(cfg, frames, heldout, seg.segment_id,
                                 os.path.join(out_dir, f"segment_{seg.segment_id}"))
        rows.append(row)
        fitted.append(dominant_formation(model))
        starts.append(seg.start)

    if len(fitted) > 1:
        subs = substitution_distance_report(fitted, starts[1:], [r["segment_id"] for r in rows])
        write_csv(os.path.join(out_dir, "substitutions.csv"), subs)

    overall = None
    if rows:
        key = "no_swap_probability" if cfg.no_swap_method == "posterior" else "no_swap_parameter"
        overall = aggregate_no_swap([r[key] for r in rows], [r["n_frames"] for r in rows])
    summary = {
        "segments": rows,
        "no_swap_probability": overall,
        "config": cfg.model_dump(mode="json", exclude={"threads"}),
    }
    write_json(os.path.join(out_dir, "summary.json"), summary, "summary")
    logger.info("Pipeline finished: %d segments written to %s", len(rows), out_dir)
    return summary
