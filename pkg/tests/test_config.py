import pytest

from afpipe.config import (
    InvalidValue,
    MissingField,
    ScheduleKind,
    SchemaViolation,
    parse_experiment,
    serialize_experiment,
    validate,
)

DEEPSEEK_DOC = """
model:
  layers: 28
  hidden: 2048
  experts: 64
  topk: 4
  moe_hidden: 1408
workload:
  seq_len: 4096
  micro_batch: 1
  num_microbatches: 8
cluster:
  total_gpus: 16
  gpus_per_node: 8
  total_nics: 16
  gpu_peak: 9.89e14
  ib_bw: 1.0e11
schedule:
  schedule_kind: afpipe
  pipeline_depth: 2
  virtual_stages: 14
  ep_size: 16
"""


def test_parse_deepseek_card():
    exp = parse_experiment(DEEPSEEK_DOC)
    assert exp.model.layers == 28
    assert exp.model.hidden == 2048
    assert exp.model.experts == 64
    assert exp.model.topk == 4
    assert exp.model.moe_hidden == 1408
    assert exp.schedule_kind is ScheduleKind.AFPIPE
    assert exp.pipeline_depth == 2 and exp.virtual_stages == 14
    assert validate(exp) == []


def test_defaults_applied():
    exp = parse_experiment(DEEPSEEK_DOC)
    assert exp.model.bytes_per_element == 2
    assert exp.model.gqa_group == 1
    assert exp.cluster.nvlink_bw == 0.0


def test_virtual_stages_default_is_layers_over_depth():
    doc = DEEPSEEK_DOC.replace("  virtual_stages: 14\n", "")
    exp = parse_experiment(doc)
    assert exp.virtual_stages == 14


def test_topk_exceeding_experts_is_invalid():
    doc = DEEPSEEK_DOC.replace("topk: 4", "topk: 8").replace("experts: 64", "experts: 4")
    with pytest.raises(InvalidValue) as exc:
        parse_experiment(doc)
    assert exc.value.name == "topk"
    assert "exceeds" in exc.value.reason


def test_missing_required_field():
    doc = DEEPSEEK_DOC.replace("  seq_len: 4096\n", "")
    with pytest.raises(MissingField) as exc:
        parse_experiment(doc)
    assert exc.value.name == "workload.seq_len"


def test_unknown_key_is_schema_violation():
    doc = DEEPSEEK_DOC + "\n"
    doc = doc.replace("model:\n", "model:\n  vocab: 32000\n")
    with pytest.raises(SchemaViolation):
        parse_experiment(doc)


def test_unknown_section_is_schema_violation():
    with pytest.raises(SchemaViolation):
        parse_experiment(DEEPSEEK_DOC + "\nextras:\n  foo: 1\n")


def test_non_integer_count_is_invalid():
    doc = DEEPSEEK_DOC.replace("layers: 28", "layers: twenty")
    with pytest.raises(InvalidValue):
        parse_experiment(doc)


def test_parse_is_deterministic():
    assert parse_experiment(DEEPSEEK_DOC) == parse_experiment(DEEPSEEK_DOC)


def test_serialize_round_trip_identity():
    exp = parse_experiment(DEEPSEEK_DOC)
    text = serialize_experiment(exp)
    again = parse_experiment(text)
    assert again == exp
    assert serialize_experiment(again) == text


def test_validate_depth_times_stages_bound():
    doc = DEEPSEEK_DOC.replace("virtual_stages: 14", "virtual_stages: 16")
    with pytest.raises(InvalidValue) as exc:
        parse_experiment(doc)
    assert "pipeline_depth" in str(exc.value)


def test_validate_single_gpu_cluster():
    doc = DEEPSEEK_DOC.replace("total_gpus: 16", "total_gpus: 1")
    with pytest.raises(InvalidValue) as exc:
        parse_experiment(doc)
    assert "total_gpus" in str(exc.value)


def test_validate_returns_all_violations():
    exp = parse_experiment(DEEPSEEK_DOC)
    bad = exp
    object.__setattr__(bad.model, "layers", 0)  # bypass frozen, simulate a bad object
    violations = validate(bad)
    assert any(v.startswith("layers:") for v in violations)
    assert any(v.startswith("pipeline_depth:") for v in violations)
