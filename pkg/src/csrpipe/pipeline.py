"""End-to-end batch pipeline: ingest, verify, resolve groups, select pairs,
emit records and the run report.

Data flows reader -> verification workers -> single ordered writer. Flat
instances stream straight through; group members are held back and resolved
once all of them are scored. With more than one worker the stream may be
written in completion order unless the deterministic-order flag is set, in
which case output is byte-stable across runs for fixed inputs and seed.
"""

from __future__ import annotations

import json
import multiprocessing
from contextlib import ExitStack
from dataclasses import dataclass
from math import prod
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .config import PipelineConfig
from .core import CsrScore, Instance, score_fn_for
from .errors import ConfigError
from .losses import loss_report
from .mock import derive_rng, synth_instances
from .preference import (
    PreferenceRecord,
    rank_candidates,
    records_from_group,
    select_pairs,
)
from .records import (
    instance_record,
    load_instances,
    loss_record,
    pair_record,
    ranked_record,
    read_scores,
    score_record,
    write_jsonl,
)
from .report import CsrSummary, GroupStats, RunReport, apply_summary, emit_report
from .temporal import MODE_GREEDY, build_group, resolve_group
from .verifiers import (
    EvalContext,
    ExternalScorerClient,
    KIND_RELEVANCE,
    SCORER_EXTERNAL,
    evaluate_instance,
)

PAIRS_FILE = "pairs.jsonl"
HOLDOUT_FILE = "pairs_holdout.jsonl"
RANKED_FILE = "ranked.jsonl"
LOSSES_FILE = "losses.jsonl"
SCORES_FILE = "scores.jsonl"
REJECTS_FILE = "rejected_lines.jsonl"


@dataclass
class RunOptions:
    """Per-invocation switches, as opposed to the declarative config."""

    seed: int | None = None
    holdout: float = 0.0
    emit_loss: bool = False
    emit_ranked: bool = False
    emit_scores: bool = False
    workers: int = 1
    deterministic_order: bool = False
    figures: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.holdout < 1.0:
            raise ConfigError(f"holdout fraction must be in [0, 1), got {self.holdout}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


def _external_scorer_spec(config: PipelineConfig):
    for spec in config.instance_specs:
        if spec.kind == KIND_RELEVANCE and spec.params.get("scorer") == SCORER_EXTERNAL:
            return spec
    return None


def _make_context(config: PipelineConfig, workers: int) -> EvalContext:
    spec = _external_scorer_spec(config)
    if spec is None:
        return EvalContext()
    if workers > 1:
        raise ConfigError(
            "an external relevance scorer requires workers=1 "
            "(the scorer subprocess cannot be shared across workers)"
        )
    return EvalContext(
        scorer_client=ExternalScorerClient(spec.params["command"], name=spec.name)
    )


# Worker-side state, set once per process by the pool initializer so specs
# are not re-pickled for every task.
_W_SPECS = None
_W_COMP = None


def _init_worker(specs, comp) -> None:
    global _W_SPECS, _W_COMP
    _W_SPECS = specs
    _W_COMP = comp


def _score_task(args: tuple[int, Instance]) -> tuple[int, tuple[CsrScore, ...]]:
    index, inst = args
    scores = tuple(
        evaluate_instance(inst, cand, _W_SPECS, _W_COMP) for cand in inst.candidates
    )
    return index, scores


def _iter_scored(
    instances: Sequence[Instance],
    config: PipelineConfig,
    options: RunOptions,
    ctx: EvalContext,
) -> Iterator[tuple[int, tuple[CsrScore, ...]]]:
    """Yield (input_index, per-candidate scores); parallel when asked to."""
    specs, comp = config.instance_specs, config.composite
    if options.workers == 1 or len(instances) < 2 * options.workers:
        for index, inst in enumerate(instances):
            if ctx.scorer_client is not None:
                ctx.scorer_client.score_batch(
                    [(inst.prompt, c.text) for c in inst.candidates]
                )
            yield index, tuple(
                evaluate_instance(inst, cand, specs, comp, ctx=ctx)
                for cand in inst.candidates
            )
        return

    chunksize = max(1, len(instances) // (options.workers * 8))
    with multiprocessing.Pool(
        options.workers, initializer=_init_worker, initargs=(specs, comp)
    ) as pool:
        mapper = pool.imap if options.deterministic_order else pool.imap_unordered
        yield from mapper(_score_task, enumerate(instances), chunksize)


def _holdout_unit(inst: Instance) -> str:
    return inst.group_id if inst.group_id is not None else inst.instance_id


def _in_holdout(seed: int, fraction: float, unit: str) -> bool:
    if fraction <= 0.0:
        return False
    return derive_rng(seed, "holdout", unit).random() < fraction


class _Writer:
    """Lazily opened JSONL writer that counts what it emits."""

    def __init__(self, stack: ExitStack, path: Path):
        self.path = path
        self._stack = stack
        self._handle = None
        self.count = 0

    def ensure_open(self) -> None:
        if self._handle is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self._stack.enter_context(
                self.path.open("w", encoding="utf-8")
            )

    def write(self, record: dict) -> None:
        self.ensure_open()
        self._handle.write(json.dumps(record, ensure_ascii=False) + "\n")
        self.count += 1


def run_pipeline(
    config: PipelineConfig,
    input_path: str | Path,
    out_dir: str | Path,
    options: RunOptions | None = None,
) -> RunReport:
    """Execute the full pipeline and return the run report.

    Writes pairs.jsonl (plus the holdout split, ranked lists, loss records
    and score rows when enabled), the rejected-lines sidecar, and
    report.json / report.txt / figures under ``out_dir``.
    """
    options = options or RunOptions()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config.seed if options.seed is None else options.seed
    ctx = _make_context(config, options.workers)

    instances, stats = load_instances(
        input_path,
        max_reject_fraction=config.io.max_reject_fraction,
        sidecar_path=out_dir / REJECTS_FILE,
    )
    by_id = {inst.instance_id: inst for inst in instances}
    score_fn = score_fn_for(config.scoring_mode)
    has_instance_specs = bool(config.instance_specs)
    temporal_spec = config.temporal_spec

    # Group members are resolved jointly; everything else streams through
    # instance-level selection.
    grouped: dict[str, list[Instance]] = {}
    if temporal_spec is not None:
        for inst in instances:
            if inst.group_id is not None and inst.role is not None:
                grouped.setdefault(inst.group_id, []).append(inst)
    grouped_ids = {i.instance_id for members in grouped.values() for i in members}

    summary = CsrSummary()
    contributed: set[str] = set()
    report = RunReport(
        instances_in=stats.lines_read,
        lines_rejected=len(stats.rejected),
        seed=seed,
        config_digest=config.digest,
    )

    with ExitStack() as stack:
        if ctx.scorer_client is not None:
            stack.enter_context(ctx.scorer_client)
        pairs_out = _Writer(stack, out_dir / PAIRS_FILE)
        pairs_out.ensure_open()  # an empty input still yields an output file
        holdout_out = _Writer(stack, out_dir / HOLDOUT_FILE)
        if options.holdout > 0.0:
            holdout_out.ensure_open()
        ranked_out = _Writer(stack, out_dir / RANKED_FILE)
        losses_out = _Writer(stack, out_dir / LOSSES_FILE)
        scores_out = _Writer(stack, out_dir / SCORES_FILE)
        if has_instance_specs:
            if options.emit_ranked:
                ranked_out.ensure_open()
            if options.emit_loss:
                losses_out.ensure_open()
            if options.emit_scores:
                scores_out.ensure_open()

        def emit_pairs(records: Iterable[PreferenceRecord], unit: str) -> int:
            sink = (
                holdout_out
                if _in_holdout(seed, options.holdout, unit)
                else pairs_out
            )
            emitted = 0
            for rec in records:
                sink.write(pair_record(rec))
                contributed.add(rec.instance_id)
                emitted += 1
            return emitted

        if has_instance_specs:
            for index, scores in _iter_scored(instances, config, options, ctx):
                inst = instances[index]
                score_map = {
                    cand.candidate_id: score
                    for cand, score in zip(inst.candidates, scores)
                }
                for score in scores:
                    summary.add(score)
                if options.emit_scores:
                    for cand, score in zip(inst.candidates, scores):
                        scores_out.write(score_record(inst, cand, score))
                if options.emit_ranked:
                    ranking = rank_candidates(inst, score_map, score_fn=score_fn)
                    ranked_out.write(
                        ranked_record(
                            inst.instance_id,
                            ranking,
                            [score_map[cid].value for cid in ranking],
                            [score_fn(inst.candidate(cid)) for cid in ranking],
                        )
                    )
                if options.emit_loss:
                    losses_out.write(
                        loss_record(
                            loss_report(
                                inst,
                                score_map,
                                margin=config.margin,
                                reweighted=config.losses.reweighted,
                                top_k=config.losses.top_k,
                                score_fn=score_fn,
                            )
                        )
                    )
                if inst.instance_id in grouped_ids:
                    continue  # supervised by its group, not by instance CSR
                emit_pairs(
                    select_pairs(
                        inst,
                        score_map,
                        config.selection,
                        margin=config.margin,
                        score_fn=score_fn,
                    ),
                    _holdout_unit(inst),
                )

        if grouped:
            group_stats = GroupStats()
            for group_id, members in grouped.items():
                group = build_group(
                    members,
                    m=config.temporal.m,
                    delimiter=config.temporal.delimiter,
                    casefold=config.temporal.casefold,
                    score_fn=score_fn,
                )
                n_combos = prod(len(m.candidates) for m in group.members)
                use_greedy = (
                    n_combos > config.temporal.enumeration_cap
                    and config.temporal.greedy_fallback
                )
                resolution = resolve_group(
                    group,
                    config.temporal.disjointness,
                    cap=config.temporal.enumeration_cap,
                    greedy=use_greedy,
                )
                group_stats.groups_total += 1
                group_stats.combinations_enumerated += resolution.evaluated
                if resolution.mode == MODE_GREEDY:
                    group_stats.groups_greedy += 1
                if resolution.best.conflict_count == 0:
                    group_stats.groups_conflict_free += 1
                emit_pairs(
                    records_from_group(
                        group,
                        resolution,
                        by_id,
                        margin=config.margin,
                        disjointness=config.temporal.disjointness,
                    ),
                    group_id,
                )
            report.group_stats = group_stats

        report.pairs_emitted = pairs_out.count
        report.holdout_pairs_emitted = holdout_out.count

    apply_summary(report, summary)
    report.instances_contributing = len(contributed)
    report.instances_skipped = len(instances) - len(contributed)
    report.check_conservation()
    emit_report(report, out_dir, figures=options.figures)
    return report


def run_verify(
    config: PipelineConfig,
    input_path: str | Path,
    out_dir: str | Path,
    options: RunOptions | None = None,
) -> RunReport:
    """Score every candidate and write score rows only (no pair selection)."""
    options = options or RunOptions()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not config.instance_specs:
        raise ConfigError("verify requires at least one instance-level constraint")
    ctx = _make_context(config, options.workers)
    instances, stats = load_instances(
        input_path,
        max_reject_fraction=config.io.max_reject_fraction,
        sidecar_path=out_dir / REJECTS_FILE,
    )
    summary = CsrSummary()
    report = RunReport(
        instances_in=stats.lines_read,
        lines_rejected=len(stats.rejected),
        instances_skipped=len(instances),
        seed=config.seed,
        config_digest=config.digest,
    )
    with ExitStack() as stack:
        if ctx.scorer_client is not None:
            stack.enter_context(ctx.scorer_client)
        writer = _Writer(stack, out_dir / SCORES_FILE)
        writer.ensure_open()
        for index, scores in _iter_scored(instances, config, options, ctx):
            inst = instances[index]
            for cand, score in zip(inst.candidates, scores):
                summary.add(score)
                writer.write(score_record(inst, cand, score))
    apply_summary(report, summary)
    return report


def run_losses(
    config: PipelineConfig,
    scores_path: str | Path,
    out_path: str | Path,
) -> int:
    """Loss reference values over a scored file; returns the record count."""
    instances, scores = read_scores(scores_path)
    records = []
    for inst in instances:
        records.append(
            loss_record(
                loss_report(
                    inst,
                    scores[inst.instance_id],
                    margin=config.margin,
                    reweighted=config.losses.reweighted,
                    top_k=config.losses.top_k,
                    score_fn=score_fn_for(config.scoring_mode),
                )
            )
        )
    return write_jsonl(out_path, records)


def run_report(
    scores_path: str | Path,
    out_dir: str | Path,
    *,
    figures: bool = True,
) -> RunReport:
    """Recompute the CSR breakdown from a scored file and emit the report."""
    instances, scores = read_scores(scores_path)
    summary = CsrSummary()
    for inst in instances:
        for cand in inst.candidates:
            summary.add(scores[inst.instance_id][cand.candidate_id])
    report = RunReport(instances_in=len(instances))
    apply_summary(report, summary)
    emit_report(report, out_dir, figures=figures)
    return report


def write_mock_corpus(
    config: PipelineConfig,
    out_path: str | Path,
    *,
    n_prompts: int,
    n_candidates: int,
    seed: int | None = None,
) -> int:
    """Generate a synthetic corpus from the config's mock grammar."""
    if config.mock is None:
        raise ConfigError("config has no 'mock' section; cannot synthesize a corpus")
    if n_prompts < 0 or n_candidates < 1:
        raise ConfigError("mock-sample requires n_prompts >= 0 and n_candidates >= 1")
    seed = config.seed if seed is None else seed
    return write_jsonl(
        out_path,
        (
            instance_record(inst)
            for inst in synth_instances(config.mock, n_prompts, n_candidates, seed)
        ),
    )
