"""Turns per-candidate CSR scores into training-ready preference data.

Pair selection follows two filters: a minimum CSR gap (so the two sides are
genuinely distinguishable) and a generator-probability floor on the rejected
side (so penalizing it is informative). Group-derived pairs bypass the gap
filter; combination minimality, not per-response CSR, is their criterion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .core import (
    CSR_EPSILON,
    CandidateResponse,
    CsrScore,
    Instance,
    normalized_score,
)
from .errors import ConfigError, InternalError
from .temporal import (
    DEFAULT_DISJOINTNESS,
    GroupResolution,
    MODE_EXHAUSTIVE,
    QuestionGroup,
    swap_csr,
)

SOURCE_INSTANCE = "instance_csr"
SOURCE_GROUP = "group_combination"

MARGIN_CSR_GAP = "csr_gap"
MARGIN_CONSTANT = "constant"
MARGIN_MODES = (MARGIN_CSR_GAP, MARGIN_CONSTANT)


@dataclass(frozen=True)
class MarginSpec:
    """Ranking-margin settings: the CSR gap (scaled) or a fixed constant."""

    mode: str = MARGIN_CSR_GAP
    constant: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in MARGIN_MODES:
            raise ConfigError(
                f"unknown margin mode {self.mode!r}; expected one of {MARGIN_MODES}"
            )
        if self.constant < 0:
            raise ConfigError(f"constant margin must be >= 0, got {self.constant}")
        if self.scale < 0:
            raise ConfigError(f"margin scale must be >= 0, got {self.scale}")


@dataclass(frozen=True)
class SelectionPolicy:
    """Hard-pair selection knobs.

    ``gap_epsilon`` is the minimum CSR gap between chosen and rejected;
    ``min_logprob_quantile`` floors the rejected side's generator score at
    that quantile of the instance's candidate scores (0 disables the floor,
    0.25 is a reasonable floor for continuous CSRs); ``binary_mode`` instead
    emits exactly one fully-satisfying vs violating pair per instance.
    ``max_pairs_per_instance=None`` means unbounded.
    """

    gap_epsilon: float = 0.1
    min_logprob_quantile: float = 0.0
    binary_mode: bool = False
    max_pairs_per_instance: int | None = None

    def __post_init__(self) -> None:
        if self.gap_epsilon <= 0:
            raise ConfigError(f"gap_epsilon must be > 0, got {self.gap_epsilon}")
        if not 0.0 <= self.min_logprob_quantile < 1.0:
            raise ConfigError(
                f"min_logprob_quantile must be in [0, 1), got {self.min_logprob_quantile}"
            )
        if self.max_pairs_per_instance is not None and self.max_pairs_per_instance < 1:
            raise ConfigError(
                f"max_pairs_per_instance must be >= 1, got {self.max_pairs_per_instance}"
            )


@dataclass(frozen=True)
class PreferenceRecord:
    """One (chosen, rejected) pair emitted for training."""

    instance_id: str
    prompt: str
    chosen: CandidateResponse
    rejected: CandidateResponse
    csr_chosen: float
    csr_rejected: float
    margin: float
    source: str

    def __post_init__(self) -> None:
        if self.source not in (SOURCE_INSTANCE, SOURCE_GROUP):
            raise InternalError(f"unknown preference source {self.source!r}")
        if self.margin < 0:
            raise InternalError(f"margin must be >= 0, got {self.margin}")


def compute_margin(
    csr_hi: float,
    csr_lo: float,
    mode: str = MARGIN_CSR_GAP,
    *,
    constant: float = 0.0,
    scale: float = 1.0,
) -> float:
    """Ranking margin for a pair: the (scaled) CSR gap or a fixed constant.

    A zero constant recovers the plain hinge.
    """
    if csr_hi < csr_lo - CSR_EPSILON:
        raise InternalError(
            f"margin requires csr_hi >= csr_lo, got {csr_hi} < {csr_lo}"
        )
    if mode == MARGIN_CSR_GAP:
        return scale * max(0.0, csr_hi - csr_lo)
    if mode == MARGIN_CONSTANT:
        return constant
    raise ConfigError(f"unknown margin mode {mode!r}")


def margin_for(spec: MarginSpec, csr_hi: float, csr_lo: float) -> float:
    return compute_margin(
        csr_hi, csr_lo, spec.mode, constant=spec.constant, scale=spec.scale
    )


def rank_candidates(
    inst: Instance,
    scores: Mapping[str, CsrScore],
    *,
    score_fn: Callable[[CandidateResponse], float] = normalized_score,
) -> list[str]:
    """Candidate ids in descending CSR; ties broken by descending generator
    score, then candidate_id. A deterministic total order."""
    missing = [c.candidate_id for c in inst.candidates if c.candidate_id not in scores]
    if missing:
        raise InternalError(
            f"instance {inst.instance_id!r}: unscored candidates {missing}"
        )
    ranked = sorted(
        inst.candidates,
        key=lambda c: (-scores[c.candidate_id].value, -score_fn(c), c.candidate_id),
    )
    return [c.candidate_id for c in ranked]


def select_pairs(
    inst: Instance,
    scores: Mapping[str, CsrScore],
    policy: SelectionPolicy,
    *,
    margin: MarginSpec = MarginSpec(),
    score_fn: Callable[[CandidateResponse], float] = normalized_score,
) -> list[PreferenceRecord]:
    """Select preference pairs for one instance under ``policy``.

    Default mode returns every (chosen, rejected) pair whose CSR gap is at
    least ``gap_epsilon`` and whose rejected side clears the probability
    floor, ranked by descending gap then descending rejected score and
    truncated to ``max_pairs_per_instance``. Binary mode returns exactly one
    pair, one candidate with CSR = 1 and one with CSR < 1, or nothing.

    Instances yielding zero pairs are skipped by the caller, not an error.
    """
    cands = inst.candidates
    for cand in cands:
        if cand.candidate_id not in scores:
            raise InternalError(
                f"instance {inst.instance_id!r}: candidate "
                f"{cand.candidate_id!r} was never scored"
            )
    csr = {c.candidate_id: scores[c.candidate_id].value for c in cands}
    gen = {c.candidate_id: score_fn(c) for c in cands}

    def _record(chosen: CandidateResponse, rejected: CandidateResponse) -> PreferenceRecord:
        hi, lo = csr[chosen.candidate_id], csr[rejected.candidate_id]
        return PreferenceRecord(
            instance_id=inst.instance_id,
            prompt=inst.prompt,
            chosen=chosen,
            rejected=rejected,
            csr_chosen=hi,
            csr_rejected=lo,
            margin=margin_for(margin, hi, lo),
            source=SOURCE_INSTANCE,
        )

    if policy.binary_mode:
        satisfying = [c for c in cands if csr[c.candidate_id] >= 1.0 - CSR_EPSILON]
        violating = [c for c in cands if csr[c.candidate_id] < 1.0 - CSR_EPSILON]
        if not satisfying or not violating:
            return []
        # Prefer the highest-probability representative on both sides.
        chosen = min(satisfying, key=lambda c: (-gen[c.candidate_id], c.candidate_id))
        rejected = min(violating, key=lambda c: (-gen[c.candidate_id], c.candidate_id))
        return [_record(chosen, rejected)]

    floor = float(np.quantile(list(gen.values()), policy.min_logprob_quantile))
    pairs: list[tuple[CandidateResponse, CandidateResponse]] = []
    for hi in cands:
        for lo in cands:
            if hi.candidate_id == lo.candidate_id:
                continue
            gap = csr[hi.candidate_id] - csr[lo.candidate_id]
            if gap < policy.gap_epsilon - CSR_EPSILON:
                continue
            if gen[lo.candidate_id] < floor - CSR_EPSILON:
                continue
            pairs.append((hi, lo))
    pairs.sort(
        key=lambda p: (
            -(csr[p[0].candidate_id] - csr[p[1].candidate_id]),
            -gen[p[1].candidate_id],
            p[0].candidate_id,
            p[1].candidate_id,
        )
    )
    if policy.max_pairs_per_instance is not None:
        pairs = pairs[: policy.max_pairs_per_instance]
    return [_record(hi, lo) for hi, lo in pairs]


def records_from_group(
    group: QuestionGroup,
    resolution: GroupResolution,
    instances: Mapping[str, Instance],
    *,
    margin: MarginSpec = MarginSpec(),
    disjointness: frozenset[frozenset[str]] = DEFAULT_DISJOINTNESS,
) -> list[PreferenceRecord]:
    """Preference records implied by a resolved group.

    For every member, the combination-selected candidate is preferred over
    each of its other candidates. The chosen side carries the best
    combination's CSR; the rejected side carries the CSR of the best
    enumerated combination containing that candidate (its counterfactual
    value), or a single-swap approximation in greedy mode. Pairs whose two
    sides have identical text are degenerate and dropped.
    """
    best = resolution.best
    chosen_by_member = best.as_dict()
    csr_chosen = best.group_csr

    best_with: dict[tuple[str, str], float] = {}
    if resolution.mode == MODE_EXHAUSTIVE:
        for combo in resolution.combinations:
            for key in combo.selection:
                prev = best_with.get(key)
                if prev is None or combo.group_csr > prev:
                    best_with[key] = combo.group_csr

    records: list[PreferenceRecord] = []
    for index, member in enumerate(group.members):
        inst = instances.get(member.instance_id)
        if inst is None:
            raise InternalError(f"unknown group member {member.instance_id!r}")
        chosen_id = chosen_by_member[member.instance_id]
        chosen = inst.candidate(chosen_id)
        seen: set[str] = set()
        for cand in member.candidates:
            if cand.candidate_id == chosen_id or cand.candidate_id in seen:
                continue
            seen.add(cand.candidate_id)
            rejected = inst.candidate(cand.candidate_id)
            if rejected.text == chosen.text:
                continue  # degenerate pair, no supervision signal
            if resolution.mode == MODE_EXHAUSTIVE:
                csr_rejected = best_with[(member.instance_id, cand.candidate_id)]
            else:
                # Greedy best is only a local minimum; clamp so the chosen
                # side never looks worse than the rejected one.
                csr_rejected = min(
                    csr_chosen, swap_csr(group, best, index, cand, disjointness)
                )
            records.append(
                PreferenceRecord(
                    instance_id=member.instance_id,
                    prompt=inst.prompt,
                    chosen=chosen,
                    rejected=rejected,
                    csr_chosen=csr_chosen,
                    csr_rejected=csr_rejected,
                    margin=margin_for(margin, csr_chosen, csr_rejected),
                    source=SOURCE_GROUP,
                )
            )
    return records
