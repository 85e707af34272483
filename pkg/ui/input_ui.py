"""
input_ui.py
- argparse surface of the formlab CLI (one sub-command per pipeline stage)
- PipelineConfig: every tunable with its default, validated by pydantic
- resolution order: defaults < TOML file < environment < explicit flags
"""
import argparse
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from Gauss_core.errors import ConfigError, InputFileError

ENV_THREADS = "FORMLAB_THREADS"
ENV_LOG_LEVEL = "FORMLAB_LOG_LEVEL"

INIT_CHOICES = ("shared", "possession", "chrono", "identity-half")


class PipelineConfig(BaseModel):
    """All tunables of the estimation pipeline."""

    model_config = ConfigDict(extra="forbid")

    # ingestion
    input_format: Literal["csv", "jsonl"] = "csv"
    stride: int = Field(5, ge=1)
    min_segment_sec: float = Field(300.0, ge=0.0)
    attack_side: Literal["left", "right"] = "right"
    team_side: Literal["home", "away"] = "home"
    d: int = Field(11, ge=1)

    # permutation selection
    p_thresh: float = 0.025
    o_thresh: float = 0.05
    alpha: float = 0.05
    gmm_components: int = Field(8, ge=1)
    max_candidates: int = Field(10_000, ge=1)
    heldout_cap_factor: int = Field(4, ge=1)

    # EM
    regimes: int = Field(1, ge=1)
    init: str = "shared"
    max_iter: int = Field(200, ge=1)
    tol: float = 1e-7
    prune: float = Field(1e-10, ge=0.0)
    eps_sigma: float = Field(1e-6, gt=0.0)
    no_swap_method: Literal["posterior", "parameter"] = "posterior"

    # formation analytics
    kmeans_k: int = Field(5, ge=1)
    kmeans_restarts: int = Field(10, ge=1)
    embedding_directions: int = Field(12, ge=1)

    seed: int = Field(0, ge=0)
    threads: int = Field(0, ge=0)

    @field_validator("p_thresh", "o_thresh", "alpha")
    @classmethod
    def _open_unit(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("must lie in (0, 1)")
        return v

    @field_validator("tol")
    @classmethod
    def _positive_tol(cls, v: float) -> float:
        if not (v > 0 or math.isinf(v)):
            raise ValueError("tol must be positive")
        return v

    @field_validator("init")
    @classmethod
    def _init_mode(cls, v: str) -> str:
        head = v.split(":", 1)[0]
        if head not in INIT_CHOICES:
            raise ValueError(f"init must be one of {', '.join(INIT_CHOICES)} (shared may carry ':<path>')")
        return v

    @property
    def init_mode(self) -> str:
        return self.init.split(":", 1)[0]

    @property
    def init_path(self) -> Optional[str]:
        parts = self.init.split(":", 1)
        return parts[1] if len(parts) == 2 and parts[1] else None


CONFIG_FIELDS = set(PipelineConfig.model_fields)


def read_toml(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise InputFileError(f"config file not found: {path}", {"path": path})
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}", {"path": path})
    return doc.get("formlab", doc)


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                env: Optional[Dict[str, str]] = None) -> PipelineConfig:
    env = os.environ if env is None else env
    values: Dict[str, Any] = {}
    if path:
        values.update(read_toml(path))
    if env.get(ENV_THREADS):
        try:
            values["threads"] = int(env[ENV_THREADS])
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer, got {env[ENV_THREADS]!r}")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return PipelineConfig(**values)
    except ValidationError as e:
        raise ConfigError("invalid configuration", {"errors": e.errors(include_url=False)})


def config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Config values given explicitly on the command line."""
    return {k: v for k, v in vars(args).items() if k in CONFIG_FIELDS and v is not None}


def parse_delta_grid(raw: str) -> List[float]:
    """'0.1:2.0:0.1' (inclusive range) or '0.1,0.5,2'."""
    raw = raw.strip()
    try:
        if ":" in raw:
            start, stop, step = (float(x) for x in raw.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(n)]
        return [float(x) for x in raw.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"bad delta grid {raw!r}: {e}")


# ---------- Parser ----------
def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=None, help="TOML config file ([formlab] table or top level)")
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    p.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto")
    p.add_argument("--seed", type=int, default=None)
    return p


def _em_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="formlab", description="Team formation estimation with hidden player-role permutations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse, segment and normalize tracking data")
    p.add_argument("--input", required=True)
    p.add_argument("--format", dest="input_format", choices=["csv", "jsonl"], default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--min-segment-sec", dest="min_segment_sec", type=float, default=None)
    p.add_argument("--attack-side", dest="attack_side", choices=["left", "right"], default=None)
    p.add_argument("--players", dest="d", type=int, default=None, help="players per team")
    p.add_argument("--out", required=True, help="frames file (FLF1)")
    p.add_argument("--heldout-out", default=None, help="frames skipped by the stride (FLF1)")
    p.add_argument("--summary-out", default=None, help="per-segment summary CSV")

    p = sub.add_parser("fit-shared", parents=[common], help="fit the shared-component mixture")
    p.add_argument("--frames", required=True)
    _em_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("select-perms", parents=[common], help="select candidate permutations")
    p.add_argument("--frames", required=True)
    p.add_argument("--shared", required=True)
    p.add_argument("--heldout", default=None)
    p.add_argument("--p-thresh", dest="p_thresh", type=float, default=None)
    p.add_argument("--o-thresh", dest="o_thresh", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gmm-components", dest="gmm_components", type=int, default=None)
    p.add_argument("--max-candidates", dest="max_candidates", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit the multi-regime permutation model")
    p.add_argument("--frames", required=True)
    p.add_argument("--perms", required=True)
    p.add_argument("--regimes", type=int, default=None)
    p.add_argument("--init", default=None, help="shared:<shared.json> | possession | chrono | identity-half")
    p.add_argument("--prune", type=float, default=None)
    p.add_argument("--team-side", dest="team_side", choices=["home", "away"], default=None)
    _em_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-hard", parents=[common], help="hard-assignment baseline")
    p.add_argument("--frames", required=True)
    _em_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("posteriors", parents=[common], help="per-frame regime and identity posteriors")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", parents=[common], help="print the model report")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", default=None, help="frames.bin; without it only parameter readings are reported")
    p.add_argument("--compare", default=None, help="model of the other regime count for the overlap comparison")
    p.add_argument("--team-side", dest="team_side", choices=["home", "away"], default=None)
    p.add_argument("--out", default=None, help="report JSON")

    p = sub.add_parser("distance", parents=[common], help="mixture-Wasserstein distance of two formations")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)

    p = sub.add_parser("cluster", parents=[common], help="cluster formations on the sliced embedding")
    p.add_argument("--formations", required=True, help="directory of formation JSON files")
    p.add_argument("--k", dest="kmeans_k", type=int, default=None)
    p.add_argument("--restarts", dest="kmeans_restarts", type=int, default=None)
    p.add_argument("--directions", dest="embedding_directions", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--time-share-out", default=None)
    p.add_argument("--distances-out", default=None, help="pairwise mixture-Wasserstein CSV")

    p = sub.add_parser("simulate", parents=[common], help="sample frames from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench-two-role", parents=[common], help="two-role robustness experiment")
    p.add_argument("--deltas", default="0.1:2.0:0.1")
    p.add_argument("--p", dest="swap_p", type=float, default=0.2)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--reps", type=int, default=100)
    _em_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", parents=[common], help="ingest -> fit-shared -> select-perms -> fit -> report")
    p.add_argument("--input", required=True)
    p.add_argument("--format", dest="input_format", choices=["csv", "jsonl"], default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--min-segment-sec", dest="min_segment_sec", type=float, default=None)
    p.add_argument("--attack-side", dest="attack_side", choices=["left", "right"], default=None)
    p.add_argument("--players", dest="d", type=int, default=None, help="players per team")
    p.add_argument("--regimes", type=int, default=None)
    p.add_argument("--init", default=None)
    p.add_argument("--p-thresh", dest="p_thresh", type=float, default=None)
    p.add_argument("--o-thresh", dest="o_thresh", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gmm-components", dest="gmm_components", type=int, default=None)
    p.add_argument("--team-side", dest="team_side", choices=["home", "away"], default=None)
    _em_flags(p)
    p.add_argument("--out-dir", required=True)
    return parser
