from __future__ import annotations

import json

import pytest

from csrpipe.core import CandidateResponse, CsrScore, Instance, Part
from csrpipe.errors import DataError
from csrpipe.preference import PreferenceRecord, SOURCE_INSTANCE
from csrpipe.records import (
    instance_record,
    load_instances,
    pair_record,
    parse_instance,
    read_jsonl,
    read_scores,
    score_record,
    write_jsonl,
)


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _record(iid="i0", **overrides):
    rec = {
        "instance_id": iid,
        "prompt": "what?",
        "candidates": [
            {"candidate_id": "c0", "text": "a", "sum_logprob": -1.0, "token_count": 1},
            {"candidate_id": "c1", "text": "b", "sum_logprob": -2.0, "token_count": 2},
        ],
    }
    rec.update(overrides)
    return rec


class TestLoadInstances:
    def test_well_formed_file(self, tmp_path):
        path = tmp_path / "in.jsonl"
        _write_lines(path, [json.dumps(_record(f"i{k}")) for k in range(3)])
        instances, stats = load_instances(path)
        assert [i.instance_id for i in instances] == ["i0", "i1", "i2"]
        assert stats.lines_read == 3
        assert stats.rejected == []

    def test_missing_field_rejected_and_counted(self, tmp_path):
        bad = _record("i1")
        del bad["candidates"][0]["sum_logprob"]
        path = tmp_path / "in.jsonl"
        _write_lines(path, [json.dumps(_record("i0"))] * 1 + [json.dumps(bad)] * 1)
        sidecar = tmp_path / "rejects.jsonl"
        instances, stats = load_instances(
            path, max_reject_fraction=0.9, sidecar_path=sidecar
        )
        assert [i.instance_id for i in instances] == ["i0"]
        assert len(stats.rejected) == 1
        assert stats.rejected[0].line_no == 2
        assert "sum_logprob" in stats.rejected[0].reason
        side = list(read_jsonl(sidecar))
        assert side[0]["line"] == 2

    def test_reject_fraction_above_threshold_aborts(self, tmp_path):
        path = tmp_path / "in.jsonl"
        _write_lines(path, [json.dumps(_record("i0")), "not json at all"])
        with pytest.raises(DataError, match="rejected"):
            load_instances(path, max_reject_fraction=0.1)

    def test_reject_fraction_exactly_at_threshold_passes(self, tmp_path):
        path = tmp_path / "in.jsonl"
        _write_lines(path, [json.dumps(_record("i0")), "{broken"])
        instances, stats = load_instances(path, max_reject_fraction=0.5)
        assert len(instances) == 1
        assert len(stats.rejected) == 1

    def test_duplicate_instance_id_rejected(self, tmp_path):
        path = tmp_path / "in.jsonl"
        _write_lines(path, [json.dumps(_record("i0")), json.dumps(_record("i0"))])
        instances, stats = load_instances(path, max_reject_fraction=0.9)
        assert len(instances) == 1
        assert "duplicate" in stats.rejected[0].reason

    def test_group_role_invariant_rejects_roleless_member(self, tmp_path):
        path = tmp_path / "in.jsonl"
        _write_lines(
            path,
            [
                json.dumps(_record("a", group_id="g", role="before")),
                json.dumps(_record("b", group_id="g")),  # no role
                json.dumps(_record("c", group_id="h")),  # roleless group is fine
            ],
        )
        instances, stats = load_instances(path, max_reject_fraction=0.9)
        assert [i.instance_id for i in instances] == ["a", "c"]
        assert len(stats.rejected) == 1
        assert "role" in stats.rejected[0].reason

    def test_group_of_three_roles_assembles(self, tmp_path):
        path = tmp_path / "in.jsonl"
        _write_lines(
            path,
            [
                json.dumps(_record("a", group_id="g", role="before")),
                json.dumps(_record("b", group_id="g", role="during")),
                json.dumps(_record("c", group_id="g", role="after")),
            ],
        )
        instances, _ = load_instances(path)
        from csrpipe.temporal import build_group

        group = build_group(instances, m=2)
        assert group.k == 3
        assert [m.role for m in group.members] == ["before", "during", "after"]

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "in.jsonl"
        _write_lines(path, [json.dumps(_record("i0")), "", json.dumps(_record("i1"))])
        instances, stats = load_instances(path)
        assert len(instances) == 2
        assert stats.lines_read == 2

    def test_empty_candidates_rejected(self, tmp_path):
        path = tmp_path / "in.jsonl"
        _write_lines(path, [json.dumps(_record("i0", candidates=[]))])
        instances, stats = load_instances(path, max_reject_fraction=1.0)
        assert instances == []
        assert "candidates" in stats.rejected[0].reason

    def test_missing_input_file(self, tmp_path):
        with pytest.raises(DataError):
            load_instances(tmp_path / "nope.jsonl")


class TestRoundTrips:
    def test_instance_record_round_trip(self):
        inst = Instance(
            instance_id="i",
            prompt="p",
            candidates=(
                CandidateResponse("c0", "hello", -1.2345678901234567, 3),
            ),
            group_id="g",
            role="before",
        )
        assert parse_instance(json.loads(json.dumps(instance_record(inst)))) == inst

    def test_optional_fields_omitted_when_absent(self):
        inst = Instance(
            instance_id="i",
            prompt="p",
            candidates=(CandidateResponse("c0", "x", -1.0, 1),),
        )
        rec = instance_record(inst)
        assert "group_id" not in rec and "role" not in rec

    def test_score_records_round_trip(self, tmp_path):
        inst = Instance(
            instance_id="i",
            prompt="p",
            candidates=(
                CandidateResponse("c0", "x", -1.0, 1),
                CandidateResponse("c1", "y", -0.3333333333333333, 2),
            ),
            group_id="g",
            role="after",
        )
        scores = {
            "c0": CsrScore(value=1.0, parts=(Part("option", 1.0, 1.0),)),
            "c1": CsrScore(value=0.5, parts=(Part("option", 0.5, 1.0),)),
        }
        path = tmp_path / "scores.jsonl"
        write_jsonl(
            path,
            (score_record(inst, c, scores[c.candidate_id]) for c in inst.candidates),
        )
        loaded, loaded_scores = read_scores(path)
        assert loaded == [inst]
        assert loaded_scores["i"] == scores

    def test_pair_record_has_the_declared_shape(self):
        rec = PreferenceRecord(
            instance_id="i",
            prompt="p",
            chosen=CandidateResponse("c0", "good", -1.0, 1),
            rejected=CandidateResponse("c1", "bad", -2.0, 1),
            csr_chosen=1.0,
            csr_rejected=0.25,
            margin=0.75,
            source=SOURCE_INSTANCE,
        )
        wire = json.loads(json.dumps(pair_record(rec)))
        assert wire == {
            "instance_id": "i",
            "prompt": "p",
            "chosen": {"candidate_id": "c0", "text": "good"},
            "rejected": {"candidate_id": "c1", "text": "bad"},
            "csr_chosen": 1.0,
            "csr_rejected": 0.25,
            "margin": 0.75,
            "source": "instance_csr",
        }

    def test_write_jsonl_reports_count(self, tmp_path):
        path = tmp_path / "out.jsonl"
        assert write_jsonl(path, [{"a": 1}, {"b": 2}]) == 2
        assert len(list(read_jsonl(path))) == 2
