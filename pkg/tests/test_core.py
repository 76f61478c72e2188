from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from csrpipe.core import (
    CandidateResponse,
    CompositeSpec,
    CsrScore,
    Instance,
    MIN,
    Part,
    WEIGHTED_MEAN,
    combine_csr,
    normalized_score,
    raw_score,
    score_fn_for,
)
from csrpipe.errors import ConfigError, InternalError

WM = CompositeSpec(combinator=WEIGHTED_MEAN)
MN = CompositeSpec(combinator=MIN)


class TestCombineCsr:
    def test_weighted_mean_half(self):
        assert combine_csr([(1.0, 0.5), (0.0, 0.5)], WM) == 0.5

    def test_min_of_pass_fail_is_zero(self):
        assert combine_csr([(1.0, 1.0), (0.0, 1.0)], MN) == 0.0

    def test_weighted_mean_unequal_weights(self):
        assert combine_csr([(0.7, 2.0), (0.1, 1.0)], WM) == pytest.approx(0.5, abs=1e-12)

    def test_all_zero_weights_is_config_error(self):
        with pytest.raises(ConfigError):
            combine_csr([(1.0, 0.0), (0.0, 0.0)], WM)

    def test_min_ignores_zero_weights(self):
        assert combine_csr([(0.8, 0.0), (0.3, 0.0)], MN) == 0.3

    def test_empty_parts_rejected(self):
        with pytest.raises(InternalError):
            combine_csr([], WM)

    def test_out_of_range_value_rejected(self):
        with pytest.raises(InternalError):
            combine_csr([(1.5, 1.0)], WM)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            combine_csr([(0.5, -1.0)], WM)


values = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
weights = st.floats(min_value=0.01, max_value=10.0, allow_nan=False)
parts_strategy = st.lists(st.tuples(values, weights), min_size=1, max_size=8)


@given(parts_strategy, st.randoms(use_true_random=False))
def test_combine_csr_permutation_invariant(parts, rng):
    shuffled = list(parts)
    rng.shuffle(shuffled)
    for spec in (WM, MN):
        assert combine_csr(shuffled, spec) == pytest.approx(
            combine_csr(parts, spec), abs=1e-9
        )


@given(st.lists(values, min_size=1, max_size=8))
def test_equal_weights_is_arithmetic_mean(vals):
    parts = [(v, 1.0) for v in vals]
    assert combine_csr(parts, WM) == pytest.approx(sum(vals) / len(vals), abs=1e-12)


@given(st.lists(values, min_size=1, max_size=8))
def test_min_never_exceeds_equal_weight_mean(vals):
    parts = [(v, 1.0) for v in vals]
    assert combine_csr(parts, MN) <= combine_csr(parts, WM) + 1e-12


class TestScores:
    def test_normalized_score_examples(self):
        assert normalized_score(CandidateResponse("c", "x", -4.0, 4)) == -1.0
        assert normalized_score(CandidateResponse("c", "x", 0.0, 7)) == 0.0
        assert normalized_score(CandidateResponse("c", "x", -3.0, 2)) == -1.5

    def test_raw_score_is_sum_logprob(self):
        assert raw_score(CandidateResponse("c", "x", -3.0, 2)) == -3.0

    def test_score_fn_for(self):
        assert score_fn_for("normalized") is normalized_score
        assert score_fn_for("raw") is raw_score
        with pytest.raises(ConfigError):
            score_fn_for("softmax")

    @given(
        st.floats(min_value=-100.0, max_value=0.0),
        st.floats(min_value=-100.0, max_value=0.0),
        st.integers(min_value=1, max_value=500),
    )
    def test_monotone_in_logprob_at_fixed_length(self, lp_a, lp_b, tokens):
        a = CandidateResponse("a", "x", lp_a, tokens)
        b = CandidateResponse("b", "x", lp_b, tokens)
        if lp_a > lp_b:
            assert normalized_score(a) > normalized_score(b)
        elif lp_a < lp_b:
            assert normalized_score(a) < normalized_score(b)


class TestDomainTypes:
    def test_candidate_rejects_zero_tokens(self):
        with pytest.raises(ValueError):
            CandidateResponse("c", "x", -1.0, 0)

    def test_candidate_rejects_positive_logprob(self):
        with pytest.raises(ValueError):
            CandidateResponse("c", "x", 0.5, 1)

    def test_instance_rejects_duplicate_candidate_ids(self):
        cand = CandidateResponse("c0", "x", -1.0, 1)
        with pytest.raises(ValueError):
            Instance(instance_id="i", prompt="p", candidates=(cand, cand))

    def test_instance_candidate_lookup(self):
        cand = CandidateResponse("c0", "x", -1.0, 1)
        inst = Instance(instance_id="i", prompt="p", candidates=(cand,))
        assert inst.candidate("c0") is cand
        with pytest.raises(KeyError):
            inst.candidate("missing")

    def test_csr_score_from_parts_matches_combinator(self):
        parts = (Part("a", 1.0, 1.0), Part("b", 0.0, 3.0))
        score = CsrScore.from_parts(parts, WM)
        assert abs(score.value - combine_csr([(1.0, 1.0), (0.0, 3.0)], WM)) <= 1e-9
        assert CsrScore.from_parts(parts, MN).value == 0.0

    def test_csr_score_range_enforced(self):
        with pytest.raises(InternalError):
            CsrScore(value=1.2)

    def test_composite_weight_override(self):
        spec = CompositeSpec(combinator=WEIGHTED_MEAN, weights={"a": 2.0})
        assert spec.weight_for("a", 1.0) == 2.0
        assert spec.weight_for("b", 1.0) == 1.0

    def test_composite_rejects_unknown_combinator(self):
        with pytest.raises(ConfigError):
            CompositeSpec(combinator="median")
