"""Domain types and the CSR algebra shared by every other module.

A CSR (constraint satisfaction rate) is a real in [0, 1]; 1 means the
response fully satisfies the declared constraints. Composite CSRs combine
sub-verifier values either as a weighted mean or as a minimum.

All types here are frozen dataclasses: immutable after construction and
safe to share across parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ConfigError, InternalError

WEIGHTED_MEAN = "weighted_mean"
MIN = "min"
COMBINATORS = (WEIGHTED_MEAN, MIN)

SCORE_NORMALIZED = "normalized"
SCORE_RAW = "raw"
SCORE_MODES = (SCORE_NORMALIZED, SCORE_RAW)

# Equality tolerance for CSR comparisons; preference logic never compares
# CSRs exactly.
CSR_EPSILON = 1e-9


@dataclass(frozen=True)
class CandidateResponse:
    """One sampled response plus its generator statistics.

    ``sum_logprob`` is the natural-log joint probability of the token
    sequence under the generator (hence <= 0); ``token_count`` is supplied
    by the generator and never recomputed here.
    """

    candidate_id: str
    text: str
    sum_logprob: float
    token_count: int

    def __post_init__(self) -> None:
        if not self.candidate_id:
            raise ValueError("candidate_id must be non-empty")
        if self.token_count < 1:
            raise ValueError(
                f"candidate {self.candidate_id!r}: token_count must be >= 1, "
                f"got {self.token_count}"
            )
        if not math.isfinite(self.sum_logprob) or self.sum_logprob > 0:
            raise ValueError(
                f"candidate {self.candidate_id!r}: sum_logprob must be a finite "
                f"real <= 0, got {self.sum_logprob}"
            )


@dataclass(frozen=True)
class Instance:
    """One prompt with its sampled candidates and optional group membership.

    Instances sharing a ``group_id`` are jointly verified by group
    constraints; ``role`` tags a group member (e.g. "before" / "during" /
    "after").
    """

    instance_id: str
    prompt: str
    candidates: tuple[CandidateResponse, ...] = ()
    group_id: str | None = None
    role: str | None = None

    def __post_init__(self) -> None:
        if not self.instance_id:
            raise ValueError("instance_id must be non-empty")
        seen: set[str] = set()
        for cand in self.candidates:
            if cand.candidate_id in seen:
                raise ValueError(
                    f"instance {self.instance_id!r}: duplicate candidate_id "
                    f"{cand.candidate_id!r}"
                )
            seen.add(cand.candidate_id)

    def candidate(self, candidate_id: str) -> CandidateResponse:
        for cand in self.candidates:
            if cand.candidate_id == candidate_id:
                return cand
        raise KeyError(f"{self.instance_id!r} has no candidate {candidate_id!r}")


@dataclass(frozen=True)
class Part:
    """One sub-verifier contribution to a composite CSR."""

    name: str
    value: float
    weight: float


@dataclass(frozen=True)
class CompositeSpec:
    """How sub-verifier CSRs combine into one value.

    ``weights`` optionally overrides the per-constraint weights by name;
    it only matters for the weighted mean (the minimum ignores weights).
    """

    combinator: str = WEIGHTED_MEAN
    weights: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        if self.combinator not in COMBINATORS:
            raise ConfigError(
                f"unknown combinator {self.combinator!r}; "
                f"expected one of {COMBINATORS}"
            )
        if self.weights is not None:
            for name, weight in self.weights.items():
                if weight < 0:
                    raise ConfigError(
                        f"composite weight for {name!r} must be >= 0, got {weight}"
                    )

    def weight_for(self, name: str, default: float) -> float:
        if self.weights is not None and name in self.weights:
            return float(self.weights[name])
        return default


@dataclass(frozen=True)
class CsrScore:
    """Composite CSR value together with its per-sub-verifier breakdown."""

    value: float
    parts: tuple[Part, ...] = ()

    def __post_init__(self) -> None:
        if not (-CSR_EPSILON <= self.value <= 1.0 + CSR_EPSILON):
            raise InternalError(f"CSR value out of [0, 1]: {self.value}")

    @classmethod
    def from_parts(cls, parts: Sequence[Part], spec: CompositeSpec) -> "CsrScore":
        value = combine_csr([(p.value, p.weight) for p in parts], spec)
        return cls(value=value, parts=tuple(parts))


def combine_csr(parts: Sequence[tuple[float, float]], spec: CompositeSpec) -> float:
    """Combine (sub_value, weight) pairs into one CSR per ``spec``.

    The weighted mean is sum(w*v)/sum(w); the minimum ignores weights.
    All weights zero under the weighted mean is a configuration error.
    """
    if not parts:
        raise InternalError("combine_csr requires at least one part")
    for value, weight in parts:
        if not (-CSR_EPSILON <= value <= 1.0 + CSR_EPSILON):
            raise InternalError(f"sub-verifier value out of [0, 1]: {value}")
        if weight < 0:
            raise ConfigError(f"constraint weight must be >= 0, got {weight}")
    if spec.combinator == MIN:
        return min(value for value, _ in parts)
    total = sum(weight for _, weight in parts)
    if total <= 0:
        raise ConfigError("weighted_mean requires at least one strictly positive weight")
    combined = sum(value * weight for value, weight in parts) / total
    return min(1.0, max(0.0, combined))


def normalized_score(resp: CandidateResponse) -> float:
    """Length-normalized log-probability: sum_logprob / token_count.

    Strictly monotone in sum_logprob at fixed length; avoids length bias
    when ranking candidates of different lengths.
    """
    if resp.token_count < 1:
        raise ValueError("token_count must be >= 1")
    return resp.sum_logprob / resp.token_count


def raw_score(resp: CandidateResponse) -> float:
    """Unnormalized sequence log-probability (config switch for rankers)."""
    return resp.sum_logprob


def score_fn_for(mode: str):
    """Map a scoring-mode name to the corresponding score function."""
    if mode == SCORE_NORMALIZED:
        return normalized_score
    if mode == SCORE_RAW:
        return raw_score
    raise ConfigError(f"unknown scoring mode {mode!r}; expected one of {SCORE_MODES}")
