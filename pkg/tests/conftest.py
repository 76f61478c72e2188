from __future__ import annotations

import pytest

from csrpipe.core import CandidateResponse, Instance


@pytest.fixture
def make_candidate():
    def _make(cid: str, text: str, logprob: float = -1.0, tokens: int = 1):
        return CandidateResponse(
            candidate_id=cid, text=text, sum_logprob=logprob, token_count=tokens
        )

    return _make


@pytest.fixture
def make_instance(make_candidate):
    def _make(iid: str, cands, prompt: str = "p", group=None, role=None):
        built = tuple(
            c if isinstance(c, CandidateResponse) else make_candidate(*c)
            for c in cands
        )
        return Instance(
            instance_id=iid, prompt=prompt, candidates=built, group_id=group, role=role
        )

    return _make
