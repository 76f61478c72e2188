"""Reference values of the training objectives over scored candidates.

Computes the two loss terms a downstream trainer would optimize: a
fit term on the best-CSR response (optionally reweighted by its CSR) and a
pairwise hinge rank loss over all candidate pairs with strictly different
CSR, with the CSR gap available as the ranking margin. Values only; no
gradients, no model execution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .core import CSR_EPSILON, CandidateResponse, CsrScore, Instance, normalized_score
from .errors import ConfigError, InternalError
from .preference import MarginSpec, margin_for, rank_candidates


@dataclass(frozen=True)
class PairTerm:
    """One hinge term: low-CSR candidate i vs higher-CSR candidate j."""

    low_id: str
    high_id: str
    margin: float
    hinge: float


@dataclass(frozen=True)
class LossReport:
    """Loss reference values for one instance; total is the plain sum."""

    instance_id: str
    l_ft: float
    l_rank: float
    total: float
    per_pair_terms: tuple[PairTerm, ...]
    reweighted: bool
    margin_mode: str

    def __post_init__(self) -> None:
        if self.l_ft < 0 or self.l_rank < 0:
            raise InternalError("loss terms must be nonnegative")
        if self.total != self.l_ft + self.l_rank:
            raise InternalError("total must equal l_ft + l_rank")
        for term in self.per_pair_terms:
            if term.hinge < 0:
                raise InternalError("hinge values must be nonnegative")


def l_ft(best: CandidateResponse, csr_best: float, reweighted: bool) -> float:
    """Fit loss on the top-ranked candidate: its negative sequence
    log-likelihood, optionally reweighted by its CSR to damp noisy prompts."""
    base = -best.sum_logprob
    return csr_best * base if reweighted else base


def l_rank(
    candidates: Sequence[tuple[CandidateResponse, float]],
    margin: MarginSpec = MarginSpec(),
    *,
    score_fn: Callable[[CandidateResponse], float] = normalized_score,
) -> tuple[float, tuple[PairTerm, ...]]:
    """Hinge rank loss over all candidate pairs with strictly different CSR.

    For every ordered pair (i, j) with CSR_i < CSR_j the term is
    max(0, s_i - s_j + margin(i, j)) on the generator scores s; pairs with
    equal CSR contribute nothing. Returns the total and the per-pair terms.
    """
    terms: list[PairTerm] = []
    total = 0.0
    for cand_i, csr_i in candidates:
        for cand_j, csr_j in candidates:
            if csr_j - csr_i <= CSR_EPSILON:
                continue  # only strictly lower-CSR vs higher-CSR pairs
            pair_margin = margin_for(margin, csr_j, csr_i)
            hinge = max(0.0, score_fn(cand_i) - score_fn(cand_j) + pair_margin)
            terms.append(
                PairTerm(
                    low_id=cand_i.candidate_id,
                    high_id=cand_j.candidate_id,
                    margin=pair_margin,
                    hinge=hinge,
                )
            )
            total += hinge
    return total, tuple(terms)


def loss_report(
    inst: Instance,
    scores: Mapping[str, CsrScore],
    *,
    margin: MarginSpec = MarginSpec(),
    reweighted: bool = False,
    top_k: int = 1,
    score_fn: Callable[[CandidateResponse], float] = normalized_score,
) -> LossReport:
    """Assemble the loss reference values for one scored instance.

    The fit term covers the single best-ranked candidate by default;
    ``top_k`` widens it to the k best (summed).
    """
    if top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    ranking = rank_candidates(inst, scores, score_fn=score_fn)
    fit = 0.0
    for cid in ranking[:top_k]:
        fit += l_ft(inst.candidate(cid), scores[cid].value, reweighted)
    pairs = [(cand, scores[cand.candidate_id].value) for cand in inst.candidates]
    rank_total, terms = l_rank(pairs, margin, score_fn=score_fn)
    return LossReport(
        instance_id=inst.instance_id,
        l_ft=fit,
        l_rank=rank_total,
        total=fit + rank_total,
        per_pair_terms=terms,
        reweighted=reweighted,
        margin_mode=margin.mode,
    )
