"""
main.py
- formlab command-line entry point: `python main.py <command> [options]`
- logging goes to stderr; failures print one JSON error object there and exit non-zero
"""
import glob
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from Assignment.hungarian import fit_hard_assignment
from Data_loader.data_loader import ingest
from Data_loader.frames_bin import read_frames_bin, write_frames_bin
from Form_metrics.form_metrics import (
    cluster_time_share,
    formation_distance_matrix,
    kmeans,
    mixture_wasserstein,
    sliced_embedding,
)
from Gauss_core.errors import ContractViolationError, FormlabError, InputFileError
from Gauss_core.gauss_core import Formation, as_frame_array, formation_from_dict, formation_to_dict
from Insight.insight_engine import build_report, report_lines
from Perm_gmm.perm_gmm import e_step, fit, model_from_dict, model_to_dict
from Perm_select.perm_select import candidates_from_dict, candidates_to_dict, select_permutations
from Shared_gmm.shared_gmm import (
    build_independent_dataset,
    fit_shared_gmm,
    init_shared,
    shared_from_dict,
    shared_to_dict,
)
from Sim_lab.sim_lab import GeneratorSpec, simulate, stage_seed, two_role_experiment
from ui.input_ui import ENV_LOG_LEVEL, PipelineConfig, build_parser, config_overrides, load_config, parse_delta_grid
from ui.output_ui import (
    emit_error,
    initial_model,
    posteriors_table,
    read_json,
    run_pipeline,
    selection_config,
    selection_config_doc,
    write_csv,
    write_json,
)

logger = logging.getLogger("formlab")


def setup_logging(level: Optional[str]) -> None:
    level = (level or os.environ.get(ENV_LOG_LEVEL) or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s - %(levelname)s - %(name)s - %(message)s",
        stream=sys.stderr,
    )


# ---------- Commands ----------
def cmd_ingest(args, cfg: PipelineConfig) -> int:
    result = ingest(args.input, cfg.input_format, cfg.stride, cfg.min_segment_sec, cfg.attack_side, cfg.d)
    write_frames_bin(args.out, result.frames, cfg.d)
    if args.heldout_out:
        write_frames_bin(args.heldout_out, result.heldout, cfg.d)
    if args.summary_out:
        write_csv(args.summary_out, result.summary)
    logger.info(
        "%d rows parsed, %d incomplete dropped, %d degenerate frames excluded, %d short segments discarded",
        result.parse_stats.rows, result.parse_stats.dropped_incomplete,
        result.degenerate_excluded, result.segments_discarded,
    )
    return 0


def cmd_fit_shared(args, cfg: PipelineConfig) -> int:
    y = as_frame_array(read_frames_bin(args.frames))
    seed = stage_seed(cfg.seed, "shared")
    shared = fit_shared_gmm(build_independent_dataset(y, seed), init_shared(y, cfg.eps_sigma),
                            cfg.max_iter, cfg.tol, cfg.eps_sigma)
    write_json(args.out, shared_to_dict(shared, seed), "shared")
    return 0


def cmd_select_perms(args, cfg: PipelineConfig) -> int:
    y = as_frame_array(read_frames_bin(args.frames))
    shared = shared_from_dict(read_json(args.shared, "shared"))
    heldout = as_frame_array(read_frames_bin(args.heldout)) if args.heldout else None
    if heldout is not None and len(heldout) == 0:
        heldout = None
    cands = select_permutations(y, shared, selection_config(cfg, stage_seed(cfg.seed, "select")), heldout)
    write_json(args.out, candidates_to_dict(cands, selection_config_doc(cfg)), "perms")
    print(f"{len(cands.perms)} candidate permutations kept, {len(cands.discarded)} discarded")
    return 0


def cmd_fit(args, cfg: PipelineConfig) -> int:
    frames = read_frames_bin(args.frames)
    cands = candidates_from_dict(read_json(args.perms, "perms"))
    shared = shared_from_dict(read_json(cfg.init_path, "shared")) if cfg.init_path else None
    init = initial_model(cfg, frames, cands, shared)
    model = fit(as_frame_array(frames), init, cfg.max_iter, cfg.tol, cfg.prune, cfg.eps_sigma, cfg.threads)
    write_json(args.out, model_to_dict(model, {"init": cfg.init, "seed": cfg.seed}), "model")
    return 0


def cmd_fit_hard(args, cfg: PipelineConfig) -> int:
    trace: List[float] = []
    formation = fit_hard_assignment(read_frames_bin(args.frames), cfg.max_iter, cfg.tol, cfg.eps_sigma,
                                    trace, cfg.threads)
    doc = {**formation_to_dict(formation), "metadata": {"method": "hard", "objective_trace": trace}}
    write_json(args.out, doc, "formation")
    return 0


def cmd_posteriors(args, cfg: PipelineConfig) -> int:
    model = model_from_dict(read_json(args.model, "model"))
    frames = read_frames_bin(args.frames)
    write_csv(args.out, posteriors_table(frames, e_step(as_frame_array(frames), model, cfg.threads)))
    return 0


def cmd_report(args, cfg: PipelineConfig) -> int:
    model = model_from_dict(read_json(args.model, "model"))
    compare = model_from_dict(read_json(args.compare, "model")) if args.compare else None
    if args.frames:
        frames = read_frames_bin(args.frames)
        report = build_report(model, as_frame_array(frames), [f.possession for f in frames], compare,
                              cfg.team_side)
    else:
        report = build_report(model, compare_model=compare, team_side=cfg.team_side)
    if args.out:
        write_json(args.out, report, "report")
    print("\n".join(report_lines(report)))
    return 0


def load_formation(path: str) -> Formation:
    """Formation, shared-fit or model document; a model contributes its heaviest regime."""
    doc = read_json(path)
    if "regimes" in doc:
        model = model_from_dict(doc)
        return max(model.regimes, key=lambda reg: reg.v).formation
    if "formation" in doc:
        return formation_from_dict(doc["formation"])
    return formation_from_dict(doc)


def cmd_distance(args, cfg: PipelineConfig) -> int:
    a, b = load_formation(args.a), load_formation(args.b)
    if a.d != b.d:
        raise ContractViolationError(f"formations have different sizes ({a.d} vs {b.d})")
    print(f"{mixture_wasserstein(a, b):.10g}")
    return 0


def _formation_files(directory: str) -> List[Tuple[str, Formation, Dict[str, Any]]]:
    if not os.path.isdir(directory):
        raise InputFileError(f"not a directory: {directory}", {"path": directory})
    found = []
    for path in sorted(glob.glob(os.path.join(directory, "*.json"))):
        meta = read_json(path).get("metadata") or {}
        found.append((os.path.basename(path), load_formation(path), meta))
    return found


def cmd_cluster(args, cfg: PipelineConfig) -> int:
    found = _formation_files(args.formations)
    names = [name for name, _, _ in found]
    formations = [f for _, f, _ in found]
    embeddings = [sliced_embedding(f, cfg.embedding_directions) for f in formations]
    result = kmeans(embeddings, cfg.kmeans_k, cfg.kmeans_restarts, cfg.seed)
    write_json(args.out, {
        "k": result.k,
        "labels": result.labels.tolist(),
        "centroids": result.centroids.tolist(),
        "representatives": result.representatives,
        "inertia": result.inertia,
        "files": names,
    }, "clusters")
    if args.time_share_out:
        teams = [str(meta.get("team", "unknown")) for _, _, meta in found]
        durations = [float(meta.get("duration", 1.0)) for _, _, meta in found]
        write_csv(args.time_share_out, cluster_time_share(result.labels, teams, durations))
    if args.distances_out:
        dist = formation_distance_matrix(formations, cfg.threads)
        write_csv(args.distances_out, pd.DataFrame(dist, columns=names).assign(file=names)[["file", *names]])
    for c, rep in enumerate(result.representatives):
        print(f"cluster {c}: {int(np.sum(result.labels == c))} formations, representative {names[rep]}")
    return 0


def cmd_simulate(args, cfg: PipelineConfig) -> int:
    model = model_from_dict(read_json(args.model, "model"))
    data = simulate(GeneratorSpec(model, args.n, stage_seed(cfg.seed, "simulate")))
    write_frames_bin(args.out, data.frames, model.d)
    return 0


def cmd_bench_two_role(args, cfg: PipelineConfig) -> int:
    table = two_role_experiment(parse_delta_grid(args.deltas), args.swap_p, args.n, args.reps, cfg.seed,
                                cfg.threads, cfg.max_iter, cfg.tol)
    write_csv(args.out, table)
    return 0


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    summary = run_pipeline(cfg, args.input, args.out_dir)
    overall = summary["no_swap_probability"]
    print(f"{len(summary['segments'])} segments fitted; no-swap probability "
          f"{'n/a' if overall is None else f'{overall:.4f}'}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "fit-shared": cmd_fit_shared,
    "select-perms": cmd_select_perms,
    "fit": cmd_fit,
    "fit-hard": cmd_fit_hard,
    "posteriors": cmd_posteriors,
    "report": cmd_report,
    "distance": cmd_distance,
    "cluster": cmd_cluster,
    "simulate": cmd_simulate,
    "bench-two-role": cmd_bench_two_role,
    "pipeline": cmd_pipeline,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = load_config(args.config, config_overrides(args))
        return COMMANDS[args.command](args, cfg)
    except FormlabError as e:
        return emit_error(e, sys.stderr)
    except Exception as e:
        logger.exception("Unexpected failure in %s", args.command)
        return emit_error(e, sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
