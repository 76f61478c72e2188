"""Deterministic mock sampler for fixtures and demos.

Stands in for the external generator: draws candidate responses from
configured pools of satisfying/violating texts with synthetic log-probs.
Sampling is keyed on (seed, prompt) through a stable hash, so the same seed
reproduces the same corpus regardless of process or platform.
"""

from __future__ import annotations

import hashlib
import random
from typing import Iterator

from .config import MockPools
from .core import CandidateResponse, Instance


def derive_rng(seed: int, *keys: str) -> random.Random:
    """Stable RNG derivation: avoids Python's per-process hash salting."""
    digest = hashlib.sha256()
    digest.update(str(seed).encode("utf-8"))
    for key in keys:
        digest.update(b"\x00")
        digest.update(key.encode("utf-8"))
    return random.Random(int.from_bytes(digest.digest()[:8], "big"))


def _candidate(rng: random.Random, index: int, text: str, pools: MockPools) -> CandidateResponse:
    token_count = max(1, len(text.split()))
    per_token = rng.uniform(*pools.logprob_per_token)
    return CandidateResponse(
        candidate_id=f"c{index}",
        text=text,
        sum_logprob=per_token * token_count,
        token_count=token_count,
    )


def mock_sample(prompt: str, n: int, seed: int, pools: MockPools) -> list[CandidateResponse]:
    """Draw n pseudo-random candidates for one prompt, reproducible per seed."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = derive_rng(seed, prompt)
    if pools.plant == "one_violating":
        violate_at = {rng.randrange(n)}
        flags = [i in violate_at for i in range(n)]
    else:
        flags = [rng.random() < pools.violating_rate for i in range(n)]
    out = []
    for i, violating in enumerate(flags):
        pool = pools.violating if violating else pools.satisfying
        out.append(_candidate(rng, i, rng.choice(pool), pools))
    return out


def _mock_group(group_index: int, n: int, seed: int, pools: MockPools) -> list[Instance]:
    group_id = f"g{group_index:06d}"
    members = []
    for role in pools.roles:
        rng = derive_rng(seed, group_id, role)
        lo, hi = pools.events_per_answer
        candidates = []
        for i in range(n):
            count = rng.randint(lo, min(hi, len(pools.events)))
            text = ", ".join(sorted(rng.sample(list(pools.events), count)))
            candidates.append(_candidate(rng, i, text, pools))
        members.append(
            Instance(
                instance_id=f"{group_id}-{role}",
                prompt=f"What happens {role} the key event in passage {group_index}?",
                candidates=tuple(candidates),
                group_id=group_id,
                role=role,
            )
        )
    return members


def synth_instances(
    pools: MockPools,
    n_prompts: int,
    n_candidates: int,
    seed: int,
) -> Iterator[Instance]:
    """Generate a synthetic corpus: flat instances, or role-tagged groups
    when the grammar enables them."""
    if pools.groups:
        for gi in range(n_prompts):
            yield from _mock_group(gi, n_candidates, seed, pools)
        return
    for i in range(n_prompts):
        prompt = f"List the applicable labels for mention {i:06d}."
        instance_id = f"i{i:06d}"
        yield Instance(
            instance_id=instance_id,
            prompt=prompt,
            candidates=tuple(mock_sample(prompt, n_candidates, seed, pools)),
        )
