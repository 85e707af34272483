import pytest

from Gauss_core.errors import ContractViolationError, ParseError
from Schema_mapper.schema_mapper import SCHEMAS, export_json_schemas, map_tracking_columns, validate_document


def _role(mu=(0.0, 0.0)):
    return {"mu": list(mu), "sigma": [[1.0, 0.0], [0.0, 1.0]]}


def test_canonical_columns_map_to_themselves():
    cols = ["t", "player1_x", "player1_y", "player2_x", "player2_y", "possession", "lineup"]
    mapping = map_tracking_columns(cols, d=2)
    assert mapping == {c: c for c in cols}


def test_provider_spellings_are_recognised():
    cols = ["Time", "P1_X", "p1_y", "player_2_x", "player_2_y", "poss", "lineup_id"]
    mapping = map_tracking_columns(cols, d=2)
    assert mapping["t"] == "Time"
    assert mapping["player1_x"] == "P1_X"
    assert mapping["player2_y"] == "player_2_y"
    assert mapping["possession"] == "poss"
    assert mapping["lineup"] == "lineup_id"


def test_close_name_falls_back_to_difflib():
    cols = ["t", "player1_x", "player1_y", "possesion", "lineup"]
    assert map_tracking_columns(cols, d=1)["possession"] == "possesion"


def test_missing_player_column_is_parse_error():
    with pytest.raises(ParseError) as err:
        map_tracking_columns(["t", "player1_x", "possession", "lineup"], d=1)
    assert err.value.line == 1
    assert "player1_y" in err.value.details["missing"]


def test_missing_lineup_is_parse_error():
    with pytest.raises(ParseError):
        map_tracking_columns(["t", "player1_x", "player1_y", "possession"], d=1)


def test_model_document_checks_weights():
    doc = {
        "schema_version": 1,
        "regimes": [{"v": 1.0, "roles": [_role(), _role((1, 1))], "support": [[0, 1], [1, 0]],
                     "weights": [0.7, 0.3]}],
        "loglik_trace": [-3.0, -2.5],
        "n_frames_fit": 10,
        "n_iter": 1,
        "converged": True,
    }
    validate_document("model", doc)
    doc["regimes"][0]["weights"] = [0.7, 0.2]
    with pytest.raises(ContractViolationError):
        validate_document("model", doc)


def test_perms_document_requires_identity():
    doc = {"schema_version": 1, "perms": [{"map": [1, 0], "min_pi_entry": 0.1}]}
    with pytest.raises(ContractViolationError):
        validate_document("perms", doc)
    doc["perms"].insert(0, {"map": [0, 1], "min_pi_entry": 0.5})
    validate_document("perms", doc)


def test_shared_document_checks_rows_and_sigma():
    doc = {"schema_version": 1, "formation": {"roles": [_role(), _role()]}, "pi": [[0.5, 0.5], [0.4, 0.6]],
           "loglik_trace": [-1.0], "n_iter": 0}
    validate_document("shared", doc)
    doc["pi"][1] = [0.4, 0.5]
    with pytest.raises(ContractViolationError):
        validate_document("shared", doc)
    bad_sigma = {"schema_version": 1, "roles": [{"mu": [0, 0], "sigma": [[1.0, 2.0], [2.0, 1.0]]}]}
    with pytest.raises(ContractViolationError):
        validate_document("formation", bad_sigma)


def test_unknown_kind_and_version():
    with pytest.raises(ContractViolationError):
        validate_document("nope", {})
    with pytest.raises(ContractViolationError):
        validate_document("formation", {"schema_version": 2, "roles": [_role()]})


def test_json_schemas_cover_every_kind():
    schemas = export_json_schemas()
    assert set(schemas) == set(SCHEMAS)
    assert "properties" in schemas["model"]
