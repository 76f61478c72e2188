"""Line-delimited record schemas and streaming readers/writers.

Input records:   {instance_id, group_id?, role?, prompt, candidates: [...]}
Preference out:  {instance_id, prompt, chosen{...}, rejected{...}, csr_chosen,
                  csr_rejected, margin, source}
Ranked out:      {instance_id, ranking, csr, scores}
Score records:   one row per (instance, candidate) with the CSR breakdown.

Malformed input lines are collected into an error sidecar with their line
numbers; the run aborts only when the rejected fraction exceeds the
configured threshold. Writers emit one JSON object per line in input order,
so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .core import CandidateResponse, CsrScore, Instance, Part
from .errors import DataError
from .losses import LossReport
from .preference import PreferenceRecord

_RAW_PREVIEW_CHARS = 400


@dataclass(frozen=True)
class RejectedLine:
    line_no: int
    reason: str
    raw: str


@dataclass
class LoadStats:
    lines_read: int = 0
    rejected: list[RejectedLine] = field(default_factory=list)

    @property
    def accepted(self) -> int:
        return self.lines_read - len(self.rejected)


def parse_instance(obj: Any) -> Instance:
    """Validate one raw input record into an Instance; raises ValueError."""
    if not isinstance(obj, Mapping):
        raise ValueError("record must be a JSON object")
    for key in ("instance_id", "prompt", "candidates"):
        if key not in obj:
            raise ValueError(f"missing required field {key!r}")
    instance_id = obj["instance_id"]
    prompt = obj["prompt"]
    if not isinstance(instance_id, str) or not instance_id:
        raise ValueError("instance_id must be a non-empty string")
    if not isinstance(prompt, str):
        raise ValueError("prompt must be a string")
    raw_cands = obj["candidates"]
    if not isinstance(raw_cands, list) or not raw_cands:
        raise ValueError("candidates must be a non-empty list")
    candidates = []
    for i, raw in enumerate(raw_cands):
        if not isinstance(raw, Mapping):
            raise ValueError(f"candidates[{i}] must be an object")
        for key in ("candidate_id", "text", "sum_logprob", "token_count"):
            if key not in raw:
                raise ValueError(f"candidates[{i}] missing field {key!r}")
        if not isinstance(raw["text"], str):
            raise ValueError(f"candidates[{i}].text must be a string")
        token_count = raw["token_count"]
        if isinstance(token_count, bool) or not isinstance(token_count, int):
            raise ValueError(f"candidates[{i}].token_count must be an integer")
        try:
            candidates.append(
                CandidateResponse(
                    candidate_id=str(raw["candidate_id"]),
                    text=raw["text"],
                    sum_logprob=float(raw["sum_logprob"]),
                    token_count=token_count,
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"candidates[{i}]: {exc}") from exc
    group_id = obj.get("group_id")
    role = obj.get("role")
    if group_id is not None and (not isinstance(group_id, str) or not group_id):
        raise ValueError("group_id must be a non-empty string when present")
    if role is not None and (not isinstance(role, str) or not role):
        raise ValueError("role must be a non-empty string when present")
    try:
        return Instance(
            instance_id=instance_id,
            prompt=prompt,
            candidates=tuple(candidates),
            group_id=group_id,
            role=role,
        )
    except ValueError as exc:
        raise ValueError(str(exc)) from exc


def load_instances(
    path: str | Path,
    *,
    max_reject_fraction: float = 0.1,
    sidecar_path: str | Path | None = None,
) -> tuple[list[Instance], LoadStats]:
    """Read and validate a line-delimited instance file, in stable order.

    Rejects malformed lines (bad JSON, missing fields, invariant violations,
    duplicate instance ids, role-less members of roled groups) into the
    sidecar; aborts when the rejected fraction exceeds the threshold.
    """
    path = Path(path)
    stats = LoadStats()
    parsed: list[tuple[int, Instance]] = []
    seen_ids: set[str] = set()
    try:
        handle = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read input {path}: {exc}") from exc
    with handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            stats.lines_read += 1
            try:
                obj = json.loads(stripped)
                inst = parse_instance(obj)
            except (json.JSONDecodeError, ValueError) as exc:
                stats.rejected.append(
                    RejectedLine(line_no, str(exc), stripped[:_RAW_PREVIEW_CHARS])
                )
                continue
            if inst.instance_id in seen_ids:
                stats.rejected.append(
                    RejectedLine(
                        line_no,
                        f"duplicate instance_id {inst.instance_id!r}",
                        stripped[:_RAW_PREVIEW_CHARS],
                    )
                )
                continue
            seen_ids.add(inst.instance_id)
            parsed.append((line_no, inst))

    # Group-role consistency: if any member of a group carries a role, every
    # member must. Offending (role-less) lines are rejected after the fact.
    roled_groups = {
        inst.group_id for _, inst in parsed if inst.group_id and inst.role is not None
    }
    kept: list[Instance] = []
    for line_no, inst in parsed:
        if inst.group_id in roled_groups and inst.role is None:
            stats.rejected.append(
                RejectedLine(
                    line_no,
                    f"instance {inst.instance_id!r} in group {inst.group_id!r} "
                    "carries no role but other members do",
                    "",
                )
            )
            continue
        kept.append(inst)

    if sidecar_path is not None and stats.rejected:
        write_jsonl(
            sidecar_path,
            (
                {"line": r.line_no, "reason": r.reason, "record": r.raw}
                for r in sorted(stats.rejected, key=lambda r: r.line_no)
            ),
        )
    if stats.lines_read > 0:
        fraction = len(stats.rejected) / stats.lines_read
        if fraction > max_reject_fraction:
            raise DataError(
                f"{len(stats.rejected)} of {stats.lines_read} input lines rejected "
                f"({fraction:.1%}), above the {max_reject_fraction:.0%} threshold; "
                f"see the rejected-lines sidecar for details"
            )
    return kept, stats


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> int:
    """Write records one JSON object per line; returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield json.loads(line)


# ---------------------------------------------------------------------------
# Wire formats
# ---------------------------------------------------------------------------


def instance_record(inst: Instance) -> dict[str, Any]:
    record: dict[str, Any] = {"instance_id": inst.instance_id}
    if inst.group_id is not None:
        record["group_id"] = inst.group_id
    if inst.role is not None:
        record["role"] = inst.role
    record["prompt"] = inst.prompt
    record["candidates"] = [
        {
            "candidate_id": c.candidate_id,
            "text": c.text,
            "sum_logprob": c.sum_logprob,
            "token_count": c.token_count,
        }
        for c in inst.candidates
    ]
    return record


def pair_record(rec: PreferenceRecord) -> dict[str, Any]:
    return {
        "instance_id": rec.instance_id,
        "prompt": rec.prompt,
        "chosen": {"candidate_id": rec.chosen.candidate_id, "text": rec.chosen.text},
        "rejected": {
            "candidate_id": rec.rejected.candidate_id,
            "text": rec.rejected.text,
        },
        "csr_chosen": rec.csr_chosen,
        "csr_rejected": rec.csr_rejected,
        "margin": rec.margin,
        "source": rec.source,
    }


def ranked_record(
    instance_id: str,
    ranking: list[str],
    csr: list[float],
    scores: list[float],
) -> dict[str, Any]:
    return {
        "instance_id": instance_id,
        "ranking": ranking,
        "csr": csr,
        "scores": scores,
    }


def score_record(inst: Instance, cand: CandidateResponse, score: CsrScore) -> dict[str, Any]:
    record: dict[str, Any] = {"instance_id": inst.instance_id}
    if inst.group_id is not None:
        record["group_id"] = inst.group_id
    if inst.role is not None:
        record["role"] = inst.role
    record.update(
        {
            "prompt": inst.prompt,
            "candidate_id": cand.candidate_id,
            "text": cand.text,
            "sum_logprob": cand.sum_logprob,
            "token_count": cand.token_count,
            "csr": score.value,
            "parts": [
                {"name": p.name, "value": p.value, "weight": p.weight}
                for p in score.parts
            ],
        }
    )
    return record


def loss_record(report: LossReport) -> dict[str, Any]:
    return {
        "instance_id": report.instance_id,
        "l_ft": report.l_ft,
        "l_rank": report.l_rank,
        "total": report.total,
        "reweighted": report.reweighted,
        "margin_mode": report.margin_mode,
        "per_pair_terms": [
            {
                "low": t.low_id,
                "high": t.high_id,
                "margin": t.margin,
                "hinge": t.hinge,
            }
            for t in report.per_pair_terms
        ],
    }


def read_scores(path: str | Path) -> tuple[list[Instance], dict[str, dict[str, CsrScore]]]:
    """Rebuild instances and their CSR scores from a score file.

    Rows are grouped by consecutive instance_id, preserving file order.
    """
    instances: list[Instance] = []
    scores: dict[str, dict[str, CsrScore]] = {}
    current_id: str | None = None
    current_meta: dict[str, Any] = {}
    current_cands: list[CandidateResponse] = []

    def _flush() -> None:
        if current_id is None:
            return
        instances.append(
            Instance(
                instance_id=current_id,
                prompt=current_meta.get("prompt", ""),
                candidates=tuple(current_cands),
                group_id=current_meta.get("group_id"),
                role=current_meta.get("role"),
            )
        )

    for row in read_jsonl(path):
        try:
            iid = row["instance_id"]
            cand = CandidateResponse(
                candidate_id=row["candidate_id"],
                text=row["text"],
                sum_logprob=float(row["sum_logprob"]),
                token_count=int(row["token_count"]),
            )
            parts = tuple(
                Part(name=p["name"], value=float(p["value"]), weight=float(p["weight"]))
                for p in row.get("parts", [])
            )
            score = CsrScore(value=float(row["csr"]), parts=parts)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed score record in {path}: {exc}") from exc
        if iid != current_id:
            _flush()
            current_id = iid
            current_meta = {
                "prompt": row.get("prompt", ""),
                "group_id": row.get("group_id"),
                "role": row.get("role"),
            }
            current_cands = []
        current_cands.append(cand)
        scores.setdefault(iid, {})[cand.candidate_id] = score
    _flush()
    return instances, scores
