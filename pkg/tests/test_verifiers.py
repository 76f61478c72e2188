from __future__ import annotations

import random
import string

import pytest
from hypothesis import given, strategies as st

from csrpipe.core import CompositeSpec, CandidateResponse, Instance, MIN, WEIGHTED_MEAN
from csrpipe.errors import ConfigError
from csrpipe.verifiers import (
    ConstraintSpec,
    evaluate_instance,
    lexical_recall,
    normalize_whitespace,
    verify_extractiveness,
    verify_label_hierarchy,
    verify_label_option,
    verify_relevance,
)

from oracles import (
    ref_extractiveness,
    ref_label_hierarchy,
    ref_label_option,
    ref_label_verifier,
)

LITERAL = dict(casefold=False, trim=False, empty_scores_zero=False)


class TestLabelOption:
    def test_all_items_in_options(self):
        assert verify_label_option("person, artist", {"person", "artist", "location"}) == 1.0

    def test_item_outside_options(self):
        assert verify_label_option("person, singer", {"person", "artist"}) == 0.0

    def test_empty_response_scores_zero(self):
        assert verify_label_option("", {"person"}) == 0.0
        assert verify_label_option("   ", {"person"}) == 0.0

    def test_case_insensitive_by_default(self):
        assert verify_label_option("Person", {"person"}) == 1.0
        assert verify_label_option("Person", {"person"}, casefold=False) == 0.0

    def test_items_trimmed_and_duplicates_harmless(self):
        assert verify_label_option("person ,  artist, person", {"person", "artist"},
                                   delimiter=",") == 1.0

    def test_rejects_empty_option_set(self):
        with pytest.raises(ConfigError):
            verify_label_option("person", set())


class TestLabelHierarchy:
    F2C = {"artist": "person"}

    def test_fine_with_coarse_present(self):
        assert verify_label_hierarchy("person, artist", self.F2C) == 1.0

    def test_fine_without_coarse(self):
        assert verify_label_hierarchy("artist", self.F2C) == 0.0

    def test_no_fine_type_answered(self):
        assert verify_label_hierarchy("location", self.F2C) == 1.0

    def test_empty_response_scores_zero(self):
        assert verify_label_hierarchy("", self.F2C) == 0.0

    def test_literal_mode_empty_is_vacuous(self):
        # Raw split of "" yields [""], which maps to no fine type.
        assert verify_label_hierarchy("", self.F2C, **LITERAL) == 1.0


class TestExtractiveness:
    def test_substring_hit(self):
        assert verify_extractiveness("the troops withdrew on Monday", "withdrew") == 1.0

    def test_substring_miss(self):
        assert verify_extractiveness("the troops withdrew", "attacked") == 0.0

    def test_whitespace_normalization(self):
        # Oracle: normalize both sides, then substring test.
        inp, resp = "a  b", "a b"
        assert normalize_whitespace(resp) in normalize_whitespace(inp)
        assert verify_extractiveness(inp, resp) == 1.0
        assert verify_extractiveness(inp, resp, whitespace_normalize=False) == 0.0

    def test_input_contains_itself(self):
        assert verify_extractiveness("some passage", "some passage") == 1.0

    @given(st.text(alphabet=string.ascii_letters + " ", min_size=1).filter(str.strip))
    def test_any_input_with_content_contains_itself(self, text):
        assert verify_extractiveness(text, text) == 1.0

    def test_empty_response_scores_zero_by_default(self):
        assert verify_extractiveness("anything", "") == 0.0
        assert verify_extractiveness("anything", "", empty_scores_zero=False) == 1.0


class TestLexicalRecall:
    def test_full_overlap(self):
        # Oracle: response tokens present in input / response tokens = 2/2.
        assert lexical_recall("the cat sat on the mat", "cat mat") == 1.0

    def test_disjoint_vocabulary(self):
        assert lexical_recall("alpha beta", "gamma delta") == 0.0

    def test_identity(self):
        text = "The quick brown fox, it jumps."
        assert lexical_recall(text, text) == 1.0

    def test_partial_overlap(self):
        # 1 of 2 response tokens appears in the input.
        assert lexical_recall("alpha beta", "alpha gamma") == 0.5

    def test_clipped_counts(self):
        # The input supplies only one "cat", so the repeat is unmatched.
        assert lexical_recall("cat mat", "cat cat") == 0.5

    def test_stopword_removal(self):
        stop = frozenset({"the"})
        assert lexical_recall("cat", "the cat", stopwords=stop) == 1.0

    def test_empty_response(self):
        assert lexical_recall("anything", "") == 0.0

    @given(st.lists(st.sampled_from("abcde"), min_size=1, max_size=8),
           st.randoms(use_true_random=False))
    def test_invariant_under_response_reordering(self, tokens, rng):
        shuffled = list(tokens)
        rng.shuffle(shuffled)
        inp = "a b c a e"
        assert lexical_recall(inp, " ".join(tokens)) == pytest.approx(
            lexical_recall(inp, " ".join(shuffled))
        )

    def test_relevance_dispatch(self):
        assert verify_relevance("a b", "a", "lexical_recall") == 1.0
        with pytest.raises(ConfigError):
            verify_relevance("a", "a", "cosine")


def _random_cases(n, seed):
    """Randomized label-verifier cases: option sets <= 20, answers <= 6,
    strings <= 200 chars, mixing clean, noisy and junk responses."""
    rng = random.Random(seed)
    alphabet = string.ascii_lowercase + string.ascii_uppercase + " -_"
    for _ in range(n):
        vocab_size = rng.randint(1, 20)
        vocab = [
            "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12))).strip()
            or "x"
            for _ in range(vocab_size)
        ]
        options = list(dict.fromkeys(rng.sample(vocab, rng.randint(1, vocab_size))))
        fine2coarse = {}
        for fine in rng.sample(vocab, rng.randint(0, min(5, vocab_size))):
            fine2coarse[fine] = rng.choice(vocab)
        style = rng.random()
        if style < 0.5:
            answers = [rng.choice(vocab) for _ in range(rng.randint(1, 6))]
        elif style < 0.8:
            answers = [
                rng.choice(vocab) + rng.choice(["", "s", " x", "X"])
                for _ in range(rng.randint(1, 6))
            ]
        else:
            answers = [
                "".join(rng.choice(alphabet + ",") for _ in range(rng.randint(0, 30)))
                for _ in range(rng.randint(1, 6))
            ]
        response = ", ".join(answers)[:200]
        yield response, options, fine2coarse


def test_label_verifiers_agree_with_reference_on_random_inputs():
    spec = CompositeSpec(combinator=MIN)
    for response, options, fine2coarse in _random_cases(1000, seed=13):
        answers = response.split(", ")
        assert verify_label_option(response, options, **LITERAL) == ref_label_option(
            answers, options
        )
        assert verify_label_hierarchy(
            response, fine2coarse, **LITERAL
        ) == ref_label_hierarchy(answers, fine2coarse)
        mine = min(
            verify_label_option(response, options, **LITERAL),
            verify_label_hierarchy(response, fine2coarse, **LITERAL),
        )
        assert mine == ref_label_verifier(response, options, fine2coarse)


def test_extractiveness_agrees_with_reference_on_random_inputs():
    rng = random.Random(29)
    for _ in range(500):
        inp = "".join(rng.choice("ab ") for _ in range(rng.randint(0, 200)))
        if rng.random() < 0.5 and len(inp) > 3:
            lo = rng.randrange(len(inp) - 1)
            hi = rng.randint(lo + 1, len(inp))
            resp = inp[lo:hi]
        else:
            resp = "".join(rng.choice("ab ") for _ in range(rng.randint(0, 20)))
        literal = verify_extractiveness(
            inp, resp, whitespace_normalize=False, empty_scores_zero=False
        )
        assert literal == ref_extractiveness(inp, resp)


class TestEvaluateInstance:
    OPTION = ConstraintSpec(
        name="option", kind="label_option", params={"options": ["person", "artist"]}
    )
    HIERARCHY = ConstraintSpec(
        name="hierarchy",
        kind="label_hierarchy",
        params={"fine2coarse": {"artist": "person"}},
    )

    def _inst(self, text):
        cand = CandidateResponse("c0", text, -1.0, 1)
        return Instance(instance_id="i", prompt="p", candidates=(cand,)), cand

    def test_min_zeroes_on_hierarchy_violation(self):
        inst, cand = self._inst("artist")  # in options, missing coarse parent
        score = evaluate_instance(
            inst, cand, [self.OPTION, self.HIERARCHY], CompositeSpec(combinator=MIN)
        )
        assert score.value == 0.0
        assert [p.value for p in score.parts] == [1.0, 0.0]

    def test_all_pass(self):
        inst, cand = self._inst("person, artist")
        score = evaluate_instance(
            inst, cand, [self.OPTION, self.HIERARCHY], CompositeSpec(combinator=MIN)
        )
        assert score.value == 1.0

    def test_weighted_mean_half(self):
        inst, cand = self._inst("artist")
        score = evaluate_instance(
            inst,
            cand,
            [self.OPTION, self.HIERARCHY],
            CompositeSpec(combinator=WEIGHTED_MEAN),
        )
        assert score.value == 0.5

    def test_weight_override_from_composite(self):
        inst, cand = self._inst("artist")
        comp = CompositeSpec(combinator=WEIGHTED_MEAN, weights={"option": 3.0})
        score = evaluate_instance(inst, cand, [self.OPTION, self.HIERARCHY], comp)
        assert score.value == pytest.approx(0.75)
        assert score.parts[0].weight == 3.0

    def test_group_arity_rejected(self):
        inst, cand = self._inst("x")
        temporal = ConstraintSpec(name="t", kind="temporal_consistency")
        with pytest.raises(ConfigError):
            evaluate_instance(inst, cand, [temporal], CompositeSpec())

    def test_no_specs_rejected(self):
        inst, cand = self._inst("x")
        with pytest.raises(ConfigError):
            evaluate_instance(inst, cand, [], CompositeSpec())

    @given(
        st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=5),
        st.randoms(use_true_random=False),
    )
    def test_composite_bounds(self, values, rng):
        # weighted_mean sits inside [min, max]; min never exceeds any part.
        parts = [(v, 1.0) for v in values]
        from csrpipe.core import combine_csr

        wm = combine_csr(parts, CompositeSpec(combinator=WEIGHTED_MEAN))
        mn = combine_csr(parts, CompositeSpec(combinator=MIN))
        assert min(values) - 1e-12 <= wm <= max(values) + 1e-12
        assert all(mn <= v + 1e-12 for v in values)
