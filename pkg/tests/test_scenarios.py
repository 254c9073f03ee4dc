import json

import pytest

from smacs.errors import ParseError
from smacs.scenario import Scenario, resolve_scenario, run_scenario, shipped_scenarios

SHIPPED = sorted(shipped_scenarios())


def test_catalogue():
    assert {"empty", "reentrancy_blocked", "token_miss", "call_chain",
            "revocation_latency", "nversion_divergence"} <= set(SHIPPED)


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_passes(name):
    report = run_scenario(resolve_scenario(name))
    assert report.passed, report.summary()


@pytest.mark.parametrize("name", SHIPPED)
def test_deterministic(name):
    a = run_scenario(resolve_scenario(name)).to_json()
    b = run_scenario(resolve_scenario(name)).to_json()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_empty():
    report = run_scenario(resolve_scenario("empty"))
    assert report.passed and report.results == []


COUNTER = {
    "name": "inline",
    "genesis": {
        "clock": 100,
        "accounts": {"alice": {"balance": 5}},
        "contracts": [{"name": "counter", "code": "Counter", "guarded": True}],
        "rules": {"sender": {"whitelist": ["$alice"]}, "method": {"increment": {"blacklist": []}}},
    },
}


def with_steps(*steps):
    return {**COUNTER, "steps": list(steps)}


def test_failed_expectation_is_reported():
    report = run_scenario(with_steps(
        {"op": "token", "as": "alice", "contract": "counter", "method": "increment", "save": "t"},
        {"op": "send", "as": "alice", "to": "counter", "method": "increment", "tokens": ["t"], "returns": 1},
        {"op": "assert", "storage": "counter", "key": "count", "eq": 2},
    ))
    assert [r.ok for r in report.results] == [True, True, False]
    assert not report.passed and "FAIL" in report.summary()


def test_unknown_saved_token_is_an_authoring_error():
    with pytest.raises(ParseError, match="nope"):
        run_scenario(with_steps(
            {"op": "send", "as": "alice", "to": "counter", "method": "increment", "tokens": ["nope"]},
        ))


def test_time_steps():
    report = run_scenario(with_steps(
        {"op": "token", "as": "alice", "contract": "counter", "method": "increment", "save": "t"},
        {"op": "advance", "seconds": 3601},
        {"op": "send", "as": "alice", "to": "counter", "method": "increment", "tokens": ["t"],
         "expect": "reverted", "reason": "token"},
        {"op": "assert", "balance": "alice", "eq": 5},
    ))
    assert report.passed, report.summary()


@pytest.mark.parametrize("doc", [
    [], {"steps": {}}, {"steps": [{"op": "explode"}]}, {"genesis": [], "steps": []},
    {"name": "x", "surprise": 1},
])
def test_parse_errors(doc):
    with pytest.raises(ParseError):
        Scenario.from_json(doc)


def test_bad_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ParseError):
        Scenario.load(bad)
    with pytest.raises(ParseError):
        resolve_scenario("no-such-scenario")
