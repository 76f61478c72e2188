"""Group-constraint rule engine for temporally related question sets.

Detects conflicts between the answers of related questions (events answered
for "before" must not also be answered for "after", etc.) and resolves the
best response combination by exhaustive enumeration, one candidate picked
per member. Groups are independent units of work; enumeration within a
group is sequential and deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import prod
from typing import AbstractSet, Callable, Iterable, Mapping, Sequence

from .core import CandidateResponse, Instance, normalized_score
from .errors import ConfigError, InternalError, PipelineError

ROLE_BEFORE = "before"
ROLE_DURING = "during"
ROLE_AFTER = "after"
KNOWN_ROLES = frozenset({ROLE_BEFORE, ROLE_DURING, ROLE_AFTER})

# The natural reading of mutually exclusive temporal relations: every role
# pair is disjoint. Configurable, e.g. drop the pairs involving "during".
DEFAULT_DISJOINTNESS: frozenset[frozenset[str]] = frozenset(
    {
        frozenset({ROLE_BEFORE, ROLE_AFTER}),
        frozenset({ROLE_BEFORE, ROLE_DURING}),
        frozenset({ROLE_DURING, ROLE_AFTER}),
    }
)

DEFAULT_ENUMERATION_CAP = 4096

MODE_EXHAUSTIVE = "exhaustive"
MODE_GREEDY = "greedy"

GREEDY_SWEEPS = 3


def normalize_disjointness(
    pairs: Iterable[Sequence[str] | frozenset[str]],
) -> frozenset[frozenset[str]]:
    """Validate role pairs and collapse orientation (pairs are symmetric)."""
    normalized: set[frozenset[str]] = set()
    for pair in pairs:
        members = frozenset(pair)
        if len(members) != 2:
            raise ConfigError(f"disjointness pair must name two distinct roles: {pair!r}")
        for role in members:
            if role not in KNOWN_ROLES:
                raise ConfigError(
                    f"unknown role {role!r} in disjointness matrix; "
                    f"expected one of {sorted(KNOWN_ROLES)}"
                )
        normalized.add(members)
    return frozenset(normalized)


def parse_answer_set(
    response_text: str,
    delimiter: str = ", ",
    *,
    casefold: bool = True,
) -> frozenset[str]:
    """Split a response into the set of answered event strings.

    Items are trimmed, optionally lowercased, and empties dropped; matching
    downstream is exact after this normalization, never fuzzy, so conflicts
    stay reproducible.
    """
    items = (item.strip() for item in response_text.split(delimiter))
    if casefold:
        return frozenset(item.lower() for item in items if item)
    return frozenset(item for item in items if item)


def count_conflicts(
    assignment: Mapping[str, AbstractSet[str]],
    disjointness: frozenset[frozenset[str]] = DEFAULT_DISJOINTNESS,
) -> int:
    """Sum of |intersection| over the declared disjoint role pairs.

    Symmetric in each pair and monotone nondecreasing as events are added
    to any answer set. Roles absent from the assignment count as empty.
    """
    for role in assignment:
        if role not in KNOWN_ROLES:
            raise ConfigError(
                f"unknown role {role!r}; expected one of {sorted(KNOWN_ROLES)}"
            )
    total = 0
    for pair in disjointness:
        first, second = sorted(pair)
        total += len(
            frozenset(assignment.get(first, frozenset()))
            & frozenset(assignment.get(second, frozenset()))
        )
    return total


def group_csr(conflict_count: int, total_answered: int) -> float:
    """Numeric CSR for a combination: 1 when conflict-free, else the
    fraction of answered events left untouched by conflicts, clamped at 0.

    Only the ordering matters for preference decisions; with a fixed
    ``total_answered`` per group, fewer conflicts always means a higher CSR.
    """
    if total_answered < 0:
        raise InternalError(f"total_answered must be >= 0, got {total_answered}")
    if total_answered == 0 or conflict_count == 0:
        return 1.0
    return max(0.0, 1.0 - conflict_count / total_answered)


@dataclass(frozen=True)
class MemberCandidate:
    """One candidate of a group member, reduced to what resolution needs."""

    candidate_id: str
    answers: frozenset[str]
    score: float  # generator score, used only for tie-breaking


@dataclass(frozen=True)
class GroupMember:
    instance_id: str
    role: str
    candidates: tuple[MemberCandidate, ...]

    def __post_init__(self) -> None:
        if self.role not in KNOWN_ROLES:
            raise ConfigError(
                f"instance {self.instance_id!r}: unknown role {self.role!r}"
            )
        if not self.candidates:
            raise InternalError(
                f"group member {self.instance_id!r} has no candidates"
            )


@dataclass(frozen=True)
class QuestionGroup:
    """A set of jointly verified instances (k members, m candidates each)."""

    group_id: str
    members: tuple[GroupMember, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise InternalError(f"group {self.group_id!r} has no members")

    @property
    def k(self) -> int:
        return len(self.members)

    @property
    def total_answered(self) -> int:
        """Distinct answered events across every candidate of every member."""
        events: set[str] = set()
        for member in self.members:
            for cand in member.candidates:
                events.update(cand.answers)
        return len(events)


@dataclass(frozen=True)
class Combination:
    """One candidate picked per member, with its joint conflict metrics."""

    selection: tuple[tuple[str, str], ...]  # (instance_id, candidate_id) per member
    conflict_count: int
    group_csr: float

    def as_dict(self) -> dict[str, str]:
        return dict(self.selection)


@dataclass(frozen=True)
class GroupResolution:
    """Result of resolving one group: the best combination plus metadata.

    ``combinations`` holds the full enumeration in deterministic order for
    the exhaustive mode and is empty in greedy mode; ``evaluated`` counts
    combination evaluations either way.
    """

    group_id: str
    best: Combination
    combinations: tuple[Combination, ...]
    mode: str
    evaluated: int


def build_group(
    instances: Sequence[Instance],
    *,
    m: int = 2,
    delimiter: str = ", ",
    casefold: bool = True,
    score_fn: Callable[[CandidateResponse], float] = normalized_score,
) -> QuestionGroup:
    """Assemble a QuestionGroup from instances sharing a group_id.

    Members keep at most the top ``m`` candidates by generator score and are
    padded by repeating the top candidate when they have fewer, so every
    member contributes exactly ``m`` picks to the enumeration.
    """
    if m < 1:
        raise ConfigError(f"candidates per member must be >= 1, got {m}")
    if not instances:
        raise InternalError("build_group requires at least one instance")

    group_id = instances[0].group_id
    if group_id is None:
        raise InternalError(f"instance {instances[0].instance_id!r} has no group_id")

    members: list[GroupMember] = []
    for inst in instances:
        if inst.group_id != group_id:
            raise InternalError(
                f"instance {inst.instance_id!r} belongs to {inst.group_id!r}, "
                f"not {group_id!r}"
            )
        if inst.role is None:
            raise ConfigError(
                f"instance {inst.instance_id!r} is in group {group_id!r} "
                "but carries no role"
            )
        if not inst.candidates:
            raise InternalError(
                f"instance {inst.instance_id!r} entered group resolution "
                "with no candidates"
            )
        ranked = sorted(
            inst.candidates, key=lambda c: (-score_fn(c), c.candidate_id)
        )
        picked = list(ranked[:m])
        while len(picked) < m:
            picked.append(ranked[0])  # pad by repeating the top candidate
        members.append(
            GroupMember(
                instance_id=inst.instance_id,
                role=inst.role,
                candidates=tuple(
                    MemberCandidate(
                        candidate_id=c.candidate_id,
                        answers=parse_answer_set(c.text, delimiter, casefold=casefold),
                        score=score_fn(c),
                    )
                    for c in picked
                ),
            )
        )
    return QuestionGroup(group_id=group_id, members=tuple(members))


def _evaluate_picks(
    group: QuestionGroup,
    picks: Sequence[MemberCandidate],
    disjointness: frozenset[frozenset[str]],
    total_answered: int,
) -> Combination:
    assignment: dict[str, set[str]] = {}
    for member, pick in zip(group.members, picks):
        assignment.setdefault(member.role, set()).update(pick.answers)
    conflicts = count_conflicts(assignment, disjointness)
    return Combination(
        selection=tuple(
            (member.instance_id, pick.candidate_id)
            for member, pick in zip(group.members, picks)
        ),
        conflict_count=conflicts,
        group_csr=group_csr(conflicts, total_answered),
    )


def _combo_key(combo: Combination, picks: Sequence[MemberCandidate]):
    # Minimal conflicts first; ties broken by higher summed generator score,
    # then lexicographic candidate ids. Total order, hence deterministic.
    summed = sum(pick.score for pick in picks)
    ids = tuple(cid for _, cid in combo.selection)
    return (combo.conflict_count, -summed, ids)


def resolve_group(
    group: QuestionGroup,
    disjointness: frozenset[frozenset[str]] = DEFAULT_DISJOINTNESS,
    *,
    cap: int = DEFAULT_ENUMERATION_CAP,
    greedy: bool = False,
) -> GroupResolution:
    """Enumerate all response combinations and return the least-conflicted one.

    The exhaustive mode guarantees global minimality of the returned
    conflict count. Groups whose combination count exceeds ``cap`` raise
    unless ``greedy`` is set, in which case a coordinate-descent search
    (three sweeps over the members) is used and flagged in the result.
    """
    n_combos = prod(len(member.candidates) for member in group.members)
    if greedy:
        return _resolve_greedy(group, disjointness)
    if n_combos > cap:
        raise PipelineError(
            f"group {group.group_id!r} has {n_combos} combinations, above the "
            f"enumeration cap of {cap}; enable the greedy fallback or raise the cap"
        )

    total = group.total_answered
    combos: list[Combination] = []
    best: Combination | None = None
    best_key = None
    for picks in itertools.product(*(member.candidates for member in group.members)):
        combo = _evaluate_picks(group, picks, disjointness, total)
        combos.append(combo)
        key = _combo_key(combo, picks)
        if best_key is None or key < best_key:
            best, best_key = combo, key
    assert best is not None
    return GroupResolution(
        group_id=group.group_id,
        best=best,
        combinations=tuple(combos),
        mode=MODE_EXHAUSTIVE,
        evaluated=len(combos),
    )


def _resolve_greedy(
    group: QuestionGroup,
    disjointness: frozenset[frozenset[str]],
) -> GroupResolution:
    total = group.total_answered
    # Start from every member's top-scored candidate.
    picks: list[MemberCandidate] = [
        min(member.candidates, key=lambda c: (-c.score, c.candidate_id))
        for member in group.members
    ]
    evaluated = 0
    for _ in range(GREEDY_SWEEPS):
        for i, member in enumerate(group.members):
            best_key = None
            best_cand = picks[i]
            for cand in member.candidates:
                trial = list(picks)
                trial[i] = cand
                combo = _evaluate_picks(group, trial, disjointness, total)
                evaluated += 1
                key = _combo_key(combo, trial)
                if best_key is None or key < best_key:
                    best_key, best_cand = key, cand
            picks[i] = best_cand
    best = _evaluate_picks(group, picks, disjointness, total)
    return GroupResolution(
        group_id=group.group_id,
        best=best,
        combinations=(),
        mode=MODE_GREEDY,
        evaluated=evaluated,
    )


def propagate_labels(best: Combination, group: QuestionGroup) -> dict[str, str]:
    """Per-member preferred candidate: the one the best combination picked."""
    chosen = best.as_dict()
    for member in group.members:
        if member.instance_id not in chosen:
            raise InternalError(
                f"combination does not cover member {member.instance_id!r}"
            )
    return {member.instance_id: chosen[member.instance_id] for member in group.members}


def swap_csr(
    group: QuestionGroup,
    best: Combination,
    member_index: int,
    candidate: MemberCandidate,
    disjointness: frozenset[frozenset[str]] = DEFAULT_DISJOINTNESS,
) -> float:
    """CSR of the best combination with one member swapped to ``candidate``.

    Used as the rejected-side CSR when the full enumeration is unavailable
    (greedy mode).
    """
    picks: list[MemberCandidate] = []
    chosen = best.as_dict()
    for i, member in enumerate(group.members):
        if i == member_index:
            picks.append(candidate)
            continue
        cid = chosen[member.instance_id]
        picks.append(next(c for c in member.candidates if c.candidate_id == cid))
    combo = _evaluate_picks(group, picks, disjointness, group.total_answered)
    return combo.group_csr
