#!/usr/bin/env python3
"""
Test the decision log backends
"""
import json

import pytest

from core import ConfigError, ContractViolation
from database import DatabaseManager, DecisionLog, decision_key, get_decision_log, text_hash


def key(n=1, text="some augmented text", oracle="sim:sigma=1:seed=0", input_id="x1"):
    return decision_key(oracle, input_id, n, text)


def test_decision_key_hashes_the_text():
    k = key(4, "hello")
    assert k == ("sim:sigma=1:seed=0", "x1", 4, text_hash("hello"))
    assert len(k[3]) == 64


def test_jsonl_log_survives_a_restart(tmp_path):
    path = str(tmp_path / "logs" / "decisions.jsonl")
    log = DecisionLog(path)
    assert log.record_decision(key(1), 2) == (True, "Decision recorded")
    assert log.record_decision(key(2), 0)[0]
    assert log.record_decision(key(1), 2) == (False, "Decision already recorded")

    reopened = DecisionLog(path)
    assert len(reopened) == 2
    assert reopened.get_decision(key(1)) == 2
    assert reopened.get_decision(key(2)) == 0
    assert reopened.get_decision(key(3)) is None
    rows = [json.loads(line) for line in open(path, encoding="utf-8")]
    assert [r["n"] for r in rows] == [1, 2]


def test_conflicting_label_is_a_contract_violation(tmp_path):
    log = DecisionLog(str(tmp_path / "d.jsonl"))
    log.record_decision(key(1), 1)
    with pytest.raises(ContractViolation):
        log.record_decision(key(1), 0)


def test_malformed_log_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"oracle": "o", "input_id": "x", "n": 1, "text_hash": "h", "label": 0}\nnot json\n')
    with pytest.raises(ConfigError):
        DecisionLog(str(path))


def test_in_memory_log_writes_nothing(tmp_path):
    log = get_decision_log(None)
    assert isinstance(log, DecisionLog)
    log.record_decision(key(1), 1)
    assert log.get_decision(key(1)) == 1
    assert get_decision_log(None) is not log
    assert list(tmp_path.iterdir()) == []


def test_sql_backend():
    db = DatabaseManager("sqlite://")
    try:
        assert db.record_decision(key(1), 2) == (True, "Decision recorded")
        assert db.record_decision(key(1), 2) == (False, "Decision already recorded")
        with pytest.raises(ContractViolation):
            db.record_decision(key(1), 1)
        db.record_decision(key(2, oracle="other"), 0)
        assert len(db) == 2
        assert db.get_decision(key(1)) == 2
        assert db.get_decision(key(9)) is None
    finally:
        db.close()


def test_backend_selection(tmp_path):
    path = str(tmp_path / "decisions.jsonl")
    assert isinstance(get_decision_log(path), DecisionLog)
    assert get_decision_log(path) is get_decision_log(path)
    sql = get_decision_log("sqlite:///" + str(tmp_path / "decisions.db"))
    assert isinstance(sql, DatabaseManager)
    sql.record_decision(key(1), 1)
    assert sql.get_decision(key(1)) == 1


def test_bad_database_url():
    with pytest.raises(ConfigError):
        DatabaseManager("sqlite:////nonexistent-dir/sub/decisions.db")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
