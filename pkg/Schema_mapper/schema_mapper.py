"""
schema_mapper.py
- Maps provider column names onto the canonical tracking layout
  (t, player{k}_x, player{k}_y, possession, lineup)
- Ships the JSON output schemas as pydantic models and validates documents against them
"""
import difflib
import re
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from Gauss_core.errors import ContractViolationError, ParseError

SCHEMA_VERSION = 1

_PLAYER_COL = re.compile(r"^(?:player|pl|p)?_?(\d+)_?([xy])$")
_ALIASES = {
    "t": ["t", "time", "timestamp", "ts", "seconds"],
    "possession": ["possession", "poss", "ball_owner", "team_in_possession"],
    "lineup": ["lineup", "lineup_id", "lineupid", "eleven"],
}


def _norm(name: str) -> str:
    return re.sub(r"[^a-z0-9_]", "", name.strip().lower())


def _find_best_match(desired: str, columns: List[str]) -> Optional[str]:
    """Finds the closest matching column name to the desired field using difflib."""
    lowered = {c.lower(): c for c in columns}
    matches = difflib.get_close_matches(desired.lower(), list(lowered), n=1, cutoff=0.75)
    return lowered[matches[0]] if matches else None


def map_tracking_columns(columns: List[str], d: int = 11) -> Dict[str, str]:
    """
    Maps canonical field -> actual column using:
    1. Exact match (case-insensitive)
    2. Player-coordinate pattern (p1_x, player_1_x, pl1x, ...)
    3. Alias table, then closest name match for the scalar fields
    """
    mapping: Dict[str, str] = {}
    remaining = list(columns)

    wanted = ["t"] + [f"player{k}_{ax}" for k in range(1, d + 1) for ax in ("x", "y")] + ["possession", "lineup"]
    for fld in wanted:
        exact = next((c for c in remaining if c.strip().lower() == fld), None)
        if exact is not None:
            mapping[fld] = exact
            remaining.remove(exact)

    for c in list(remaining):
        m = _PLAYER_COL.match(_norm(c))
        if not m:
            continue
        fld = f"player{int(m.group(1))}_{m.group(2)}"
        if fld in wanted and fld not in mapping:
            mapping[fld] = c
            remaining.remove(c)

    for fld, aliases in _ALIASES.items():
        if fld in mapping:
            continue
        hit = next((c for c in remaining if _norm(c) in aliases), None)
        if hit is None:
            hit = _find_best_match(fld, [c for c in remaining if not _PLAYER_COL.match(_norm(c))])
        if hit is not None:
            mapping[fld] = hit
            remaining.remove(hit)

    missing = [f for f in wanted if f not in mapping and f != "lineup" and f != "possession"]
    if missing:
        raise ParseError(f"missing required columns: {', '.join(missing[:6])}" + (" ..." if len(missing) > 6 else ""),
                         line=1, details={"missing": missing})
    for optional in ("possession", "lineup"):
        if optional not in mapping:
            raise ParseError(f"missing required column {optional!r}", line=1)
    return mapping


# ---------- Output schemas ----------
class _Doc(BaseModel):
    model_config = ConfigDict(extra="allow")

    schema_version: int = SCHEMA_VERSION

    @field_validator("schema_version")
    @classmethod
    def _known_version(cls, v: int) -> int:
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}")
        return v


class RoleDoc(BaseModel):
    mu: List[float] = Field(min_length=2, max_length=2)
    sigma: List[List[float]] = Field(min_length=2, max_length=2)

    @field_validator("sigma")
    @classmethod
    def _symmetric(cls, s: List[List[float]]) -> List[List[float]]:
        if any(len(row) != 2 for row in s):
            raise ValueError("sigma must be 2x2")
        if abs(s[0][1] - s[1][0]) > 1e-9 * max(1.0, abs(s[0][1])):
            raise ValueError("sigma must be symmetric")
        if s[0][0] <= 0 or s[1][1] <= 0 or s[0][0] * s[1][1] - s[0][1] * s[1][0] <= 0:
            raise ValueError("sigma must be positive definite")
        return s


class FormationDoc(_Doc):
    roles: List[RoleDoc] = Field(min_length=1)
    metadata: Optional[Dict[str, Any]] = None


class SharedDoc(_Doc):
    formation: FormationDoc
    pi: List[List[float]]
    loglik_trace: List[float]
    n_iter: int
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _row_stochastic(self):
        d = len(self.formation.roles)
        if len(self.pi) != d or any(len(row) != d for row in self.pi):
            raise ValueError("pi must be d x d")
        for row in self.pi:
            if abs(sum(row) - 1.0) > 1e-8 or min(row) < 0:
                raise ValueError("pi rows must be probability vectors")
        return self


class OverlapDoc(BaseModel):
    error_rate: float
    n_eval: int
    alpha: float
    bound: float
    method: str


class CandidateDoc(BaseModel):
    map: List[int]
    min_pi_entry: float
    qda: Optional[OverlapDoc] = None
    gmm: Optional[OverlapDoc] = None


class PermsDoc(_Doc):
    perms: List[CandidateDoc] = Field(min_length=1)
    discarded: List[CandidateDoc] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _identity_present(self):
        maps = [tuple(p.map) for p in self.perms]
        d = len(maps[0])
        if tuple(range(d)) not in maps:
            raise ValueError("candidate set must contain the identity")
        if len(set(maps)) != len(maps):
            raise ValueError("candidate set has duplicates")
        return self


class RegimeDoc(BaseModel):
    v: float = Field(ge=0.0, le=1.0)
    roles: List[RoleDoc]
    support: List[List[int]]
    weights: List[float]

    @model_validator(mode="after")
    def _weights(self):
        if len(self.support) != len(self.weights):
            raise ValueError("support and weights differ in length")
        if abs(sum(self.weights) - 1.0) > 1e-10 or min(self.weights) < 0:
            raise ValueError("permutation weights must sum to 1")
        return self


class ModelDoc(_Doc):
    regimes: List[RegimeDoc] = Field(min_length=1)
    loglik_trace: List[float]
    n_frames_fit: int
    n_iter: int
    converged: bool
    metadata: Optional[Dict[str, Any]] = None

    @model_validator(mode="after")
    def _regime_weights(self):
        if abs(sum(r.v for r in self.regimes) - 1.0) > 1e-10:
            raise ValueError("regime probabilities must sum to 1")
        return self


class ReportDoc(_Doc):
    regimes: List[Dict[str, Any]]
    no_swap_probability: Optional[float] = Field(None, ge=0.0, le=1.0)
    no_swap_parameter: float = Field(ge=0.0, le=1.0)
    possession_correlation: Optional[List[Dict[str, Any]]] = None
    bhattacharyya: Optional[Dict[str, Any]] = None


class ClustersDoc(_Doc):
    k: int
    labels: List[int]
    centroids: List[List[float]]
    representatives: List[int]
    inertia: float
    files: List[str] = Field(default_factory=list)


class SummaryDoc(_Doc):
    segments: List[Dict[str, Any]]
    no_swap_probability: Optional[float] = None
    config: Dict[str, Any] = Field(default_factory=dict)


SCHEMAS = {
    "summary": SummaryDoc,
    "formation": FormationDoc,
    "shared": SharedDoc,
    "perms": PermsDoc,
    "model": ModelDoc,
    "report": ReportDoc,
    "clusters": ClustersDoc,
}


def validate_document(kind: str, doc: Dict[str, Any]) -> BaseModel:
    if kind not in SCHEMAS:
        raise ContractViolationError(f"unknown document kind {kind!r}")
    try:
        return SCHEMAS[kind].model_validate(doc)
    except ValidationError as e:
        raise ContractViolationError(f"{kind} document failed schema validation", {"errors": e.errors(include_url=False)})


def export_json_schemas() -> Dict[str, Dict[str, Any]]:
    return {kind: model.model_json_schema() for kind, model in SCHEMAS.items()}
