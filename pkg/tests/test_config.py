import json

import pytest

from vlx.backend import Capability, HttpBackend, MockBackend
from vlx.config import ENDPOINT_ENV, default_config, load_config, parse_config
from vlx.errors import ConfigError
from vlx.recognition import Kind, Method, RecognitionTask, RefinementStep


def base(**kw):
    return {"schema_version": 1, **kw}


def issue_paths(doc, **kw):
    with pytest.raises(ConfigError) as info:
        parse_config(doc, env={}, **kw)
    return [p for p, _ in info.value.issues]


def test_defaults():
    cfg = default_config(env={})
    assert cfg.noise.shift_low == -0.1 and cfg.noise.shift_high == 0.1 and cfg.noise.n_variants == 5
    assert cfg.articles == ("a", "the", "this", "that")
    assert cfg.decision_policy.min_valid_fraction == 0.5
    assert cfg.dic_threshold == 0.8
    assert cfg.itr_temperature == 1.0
    assert cfg.effective_seed() == 17
    assert isinstance(cfg.backend.build(), MockBackend)


def test_seed_precedence():
    cfg = parse_config(base(seed=5), env={})
    assert cfg.effective_seed() == 5
    assert cfg.effective_seed(9) == 9
    assert cfg.noise_for(9).seed == 9
    assert default_config(env={}).noise_for().seed == 17


def test_schema_version_required():
    assert issue_paths({}) == ["schema_version"]
    assert issue_paths({"schema_version": 2}) == ["schema_version"]


def test_all_issues_reported_with_paths():
    doc = base(
        noise={"shift_low": "low", "n_variants": 0},
        decision_policy={"min_valid_fraction": 1.5, "aliases": {"yep": "maybe"}},
        dic_threshold=2,
        extra=1,
        articles=["a", ""],
    )
    paths = issue_paths(doc)
    assert set(paths) == {
        "noise.shift_low",
        "noise.n_variants",
        "decision_policy.min_valid_fraction",
        "decision_policy.aliases.yep",
        "dic_threshold",
        "extra",
        "articles[1]",
    }


def test_low_above_high():
    assert issue_paths(base(noise={"shift_low": 0.2, "shift_high": 0.1})) == ["noise"]


@pytest.mark.parametrize("value", [True, float("nan"), "3", 1.5])
def test_workers_type(value):
    assert issue_paths(base(workers=value)) == ["workers"]


def test_aliases_normalized():
    cfg = parse_config(base(decision_policy={"aliases": {"Yep  Sure": "yes"}}), env={})
    assert cfg.decision_policy.aliases == {"yep sure": "yes"}


def test_fixture_path_relative_to_config(tmp_path):
    (tmp_path / "fx").mkdir()
    (tmp_path / "fx" / "f.json").write_text(json.dumps([
        {"image_id": "a", "task": "caption", "text": None, "response": "x"},
    ]))
    (tmp_path / "cfg.json").write_text(json.dumps(base(backend={"fixtures": "fx/f.json"})))
    cfg = load_config(tmp_path / "cfg.json", env={})
    assert cfg.backend.fixtures == (tmp_path / "fx" / "f.json").resolve()
    assert len(cfg.backend.build()) == 1


def test_missing_and_bad_fixtures(tmp_path):
    assert issue_paths(base(backend={"fixtures": "nope.json"}), base_dir=tmp_path) == ["backend.fixtures"]
    (tmp_path / "dup.json").write_text(json.dumps([
        {"image_id": "a", "task": "caption", "text": None, "response": "x"},
        {"image_id": "a", "task": "caption", "text": None, "response": "y"},
    ]))
    assert issue_paths(base(backend={"fixtures": "dup.json"}), base_dir=tmp_path) == ["backend.fixtures"]


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json", env={})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json", env={})


def test_http_backend_needs_endpoint():
    assert issue_paths(base(backend={"type": "http"})) == ["backend.endpoint"]
    assert issue_paths(base(backend={"type": "http", "endpoint": "ftp://x"})) == ["backend.endpoint"]
    cfg = parse_config(base(backend={"type": "http", "endpoint": "http://h:1"}), env={})
    assert isinstance(cfg.backend.build(), HttpBackend)


def test_env_overrides_backend():
    cfg = parse_config(base(), env={ENDPOINT_ENV: "http://127.0.0.1:9"})
    assert cfg.backend.type == "http" and cfg.backend.endpoint == "http://127.0.0.1:9"


def test_capabilities():
    cfg = parse_config(base(backend={"capabilities": ["vqa", "caption"]}), env={})
    assert cfg.backend.capabilities == {Capability.VQA, Capability.CAPTION}
    assert issue_paths(base(backend={"capabilities": ["telepathy"]})) == ["backend.capabilities"]


def test_tasks_parse():
    cfg = parse_config(base(tasks={
        "door": {"kind": "state_binary", "method": "bvqa", "template": "is {art} door open?"},
        "what": {
            "kind": "object_class",
            "method": "mvqa",
            "choices": ["cup", {"phrase": "the red mug", "match": ["mug"]}],
        },
        "handle": {"kind": "location", "method": "vg", "phrase": "handle"},
        "rel": {"kind": "relation", "method": "mvqa", "objects": ["cup", "table"]},
    }), env={})
    door = cfg.tasks["door"]
    assert isinstance(door, RecognitionTask)
    assert door.kind is Kind.STATE_BINARY and door.method is Method.BVQA and door.name == "door"
    assert cfg.tasks["what"].choices.match_tokens == (frozenset({"cup"}), frozenset({"mug"}))
    assert cfg.tasks["rel"].objects == ("cup", "table")


def test_chain_parse():
    cfg = parse_config(base(tasks={"kettle": {"kind": "chain", "steps": [
        {"kind": "location", "method": "vg", "phrase": "kettle"},
        {"kind": "location", "method": "vg", "phrase": "handle"},
        {"kind": "feature", "method": "mvqa", "attribute": "color", "choices": ["red", "blue"]},
    ]}}), env={})
    chain = cfg.tasks["kettle"]
    assert isinstance(chain, RefinementStep)
    assert [t.method for t in chain.tasks] == [Method.VG, Method.VG, Method.MVQA]


def test_task_errors_have_paths():
    paths = issue_paths(base(tasks={
        "a": {"kind": "telekinesis", "method": "vqa"},
        "b": {"kind": "location", "method": "mvqa", "phrase": "x"},
        "c": {"kind": "object_class", "method": "mvqa", "choices": ["only"]},
        "d": {"kind": "chain", "steps": [{"kind": "chain", "steps": []}]},
        "e": {"kind": "location", "method": "vg", "phrase": "x", "colour": "red"},
    }))
    assert paths == ["tasks.a.kind", "tasks.b", "tasks.c", "tasks.d.steps[0].kind", "tasks.e.colour"]


def test_relation_lexicon_duplicates():
    assert issue_paths(base(relation_lexicon=["on", "on"])) == ["relation_lexicon"]
