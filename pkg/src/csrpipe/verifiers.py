"""Built-in constraint verifiers plus the registry and composite evaluation.

Covers the two instance-level constraint classes: response-only checks
(label option, label hierarchy) and prompt-response checks (extractiveness,
relevance). Group-level consistency checks live in ``temporal``.

Every verifier is a pure function returning a CSR in [0, 1]. The defaults
are tolerant of generator noise (trimmed items, case-insensitive labels,
collapsed whitespace, empty responses score 0); each knob can be switched
off to get the exact, literal string semantics used by oracle tests.
"""

from __future__ import annotations

import json
import string
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .core import CompositeSpec, CandidateResponse, CsrScore, Instance, Part
from .errors import ConfigError, InternalError, PipelineError

KIND_LABEL_OPTION = "label_option"
KIND_LABEL_HIERARCHY = "label_hierarchy"
KIND_EXTRACTIVENESS = "extractiveness"
KIND_RELEVANCE = "relevance"
KIND_TEMPORAL = "temporal_consistency"

ARITY_RESPONSE = "response_only"
ARITY_PROMPT_RESPONSE = "prompt_response"
ARITY_GROUP = "group"

# The constraint kind determines its arity.
KIND_ARITY: dict[str, str] = {
    KIND_LABEL_OPTION: ARITY_RESPONSE,
    KIND_LABEL_HIERARCHY: ARITY_RESPONSE,
    KIND_EXTRACTIVENESS: ARITY_PROMPT_RESPONSE,
    KIND_RELEVANCE: ARITY_PROMPT_RESPONSE,
    KIND_TEMPORAL: ARITY_GROUP,
}

SCORER_LEXICAL = "lexical_recall"
SCORER_EXTERNAL = "external"

DEFAULT_DELIMITER = ", "

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


@dataclass(frozen=True)
class ConstraintSpec:
    """Declarative description of one verifier: kind + parameters + weight."""

    name: str
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.name:
            raise ConfigError("constraint name must be non-empty")
        if self.kind not in KIND_ARITY:
            raise ConfigError(
                f"constraint {self.name!r}: unknown kind {self.kind!r}; "
                f"expected one of {sorted(KIND_ARITY)}"
            )
        if self.weight < 0:
            raise ConfigError(
                f"constraint {self.name!r}: weight must be >= 0, got {self.weight}"
            )

    @property
    def arity(self) -> str:
        return KIND_ARITY[self.kind]


def split_answers(
    response_text: str,
    delimiter: str = DEFAULT_DELIMITER,
    *,
    trim: bool = True,
    casefold: bool = True,
) -> list[str]:
    """Split a response into answer items.

    With ``trim`` on, items are stripped and empty items dropped; with it
    off the raw ``str.split`` pieces are returned unchanged. Duplicates are
    preserved (membership checks downstream do not care).
    """
    items = response_text.split(delimiter)
    if trim:
        items = [item.strip() for item in items]
        items = [item for item in items if item]
    if casefold:
        items = [item.lower() for item in items]
    return items


def verify_label_option(
    response_text: str,
    options: Iterable[str],
    delimiter: str = DEFAULT_DELIMITER,
    *,
    casefold: bool = True,
    trim: bool = True,
    empty_scores_zero: bool = True,
) -> float:
    """1 iff every answered item is a member of ``options``, else 0.

    An empty response is a violation, not an error (``empty_scores_zero``);
    switch all three knobs off for the literal split-and-compare semantics.
    """
    option_set = {opt.lower() for opt in options} if casefold else set(options)
    if not option_set:
        raise ConfigError("label_option requires a non-empty option set")
    items = split_answers(response_text, delimiter, trim=trim, casefold=casefold)
    if not items:
        return 0.0 if empty_scores_zero else 1.0
    if empty_scores_zero and all(not item.strip() for item in items):
        return 0.0
    for item in items:
        if item not in option_set:
            return 0.0
    return 1.0


def verify_label_hierarchy(
    response_text: str,
    fine2coarse: Mapping[str, str],
    delimiter: str = DEFAULT_DELIMITER,
    *,
    casefold: bool = True,
    trim: bool = True,
    empty_scores_zero: bool = True,
) -> float:
    """1 iff every answered fine-grained item also has its coarse parent answered.

    Items absent from ``fine2coarse`` are skipped, so a response with no
    fine-grained types vacuously satisfies the hierarchy.
    """
    if casefold:
        mapping = {k.lower(): v.lower() for k, v in fine2coarse.items()}
    else:
        mapping = dict(fine2coarse)
    items = split_answers(response_text, delimiter, trim=trim, casefold=casefold)
    if empty_scores_zero and all(not item.strip() for item in items):
        return 0.0
    answered = set(items)
    for item in items:
        if item not in mapping:
            continue
        if mapping[item] not in answered:
            return 0.0
    return 1.0


def normalize_whitespace(text: str) -> str:
    """Collapse runs of whitespace to single spaces and trim the ends."""
    return " ".join(text.split())


def verify_extractiveness(
    prompt_input: str,
    response_text: str,
    *,
    whitespace_normalize: bool = True,
    empty_scores_zero: bool = True,
) -> float:
    """1 iff the response occurs verbatim as a contiguous substring of the input."""
    if whitespace_normalize:
        prompt_input = normalize_whitespace(prompt_input)
        response_text = normalize_whitespace(response_text)
    if empty_scores_zero and not response_text:
        return 0.0
    return 1.0 if response_text in prompt_input else 0.0


def tokenize(text: str, stopwords: frozenset[str] = frozenset()) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace, drop stopwords."""
    tokens = text.lower().translate(_PUNCT_TABLE).split()
    if stopwords:
        tokens = [tok for tok in tokens if tok not in stopwords]
    return tokens


def lexical_recall(
    prompt_input: str,
    response_text: str,
    stopwords: frozenset[str] = frozenset(),
) -> float:
    """Fraction of response content tokens found in the input token multiset.

    Repeated response tokens only count as far as the input supplies them
    (clipped counts), which keeps the score a recall-style overlap in [0, 1]
    and makes it invariant under response token reordering.
    """
    response_tokens = tokenize(response_text, stopwords)
    if not response_tokens:
        return 0.0
    input_counts = Counter(tokenize(prompt_input, stopwords))
    response_counts = Counter(response_tokens)
    matched = sum(
        min(count, input_counts[token]) for token, count in response_counts.items()
    )
    return matched / len(response_tokens)


class ExternalScorerClient:
    """Scores (input, response) pairs through a line-delimited subprocess.

    Wire protocol: one JSON request ``{"pair_id", "input", "response"}`` per
    line on the child's stdin; one JSON reply ``{"pair_id", "score"}`` per
    line on its stdout. Replies may arrive out of order but every request
    must be answered, and scores outside [0, 1] are rejected.
    """

    def __init__(self, command: Sequence[str], name: str = "external"):
        if not command:
            raise ConfigError("external scorer requires a non-empty command")
        self.name = name
        self.command = list(command)
        self._proc: subprocess.Popen[str] | None = None
        self._next_id = 0
        self._cache: dict[tuple[str, str], float] = {}

    def _ensure_started(self) -> subprocess.Popen[str]:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    bufsize=1,
                )
            except OSError as exc:
                raise PipelineError(
                    f"external scorer {self.name!r} failed to start: {exc}"
                ) from exc
        return self._proc

    def score_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        """Score a batch of (input, response) pairs, preserving order."""
        missing = [pair for pair in pairs if pair not in self._cache]
        if missing:
            self._score_uncached(missing)
        return [self._cache[pair] for pair in pairs]

    def score(self, prompt_input: str, response_text: str) -> float:
        return self.score_batch([(prompt_input, response_text)])[0]

    def _score_uncached(self, pairs: Sequence[tuple[str, str]]) -> None:
        proc = self._ensure_started()
        assert proc.stdin is not None and proc.stdout is not None
        requests: dict[str, tuple[str, str]] = {}
        try:
            for pair in pairs:
                pair_id = f"p{self._next_id}"
                self._next_id += 1
                requests[pair_id] = pair
                record = {"pair_id": pair_id, "input": pair[0], "response": pair[1]}
                proc.stdin.write(json.dumps(record, ensure_ascii=False) + "\n")
            proc.stdin.flush()
        except BrokenPipeError as exc:
            raise PipelineError(f"external scorer {self.name!r} exited early") from exc

        pending = set(requests)
        while pending:
            line = proc.stdout.readline()
            if not line:
                raise PipelineError(
                    f"external scorer {self.name!r} closed its stream with "
                    f"{len(pending)} replies outstanding"
                )
            try:
                reply = json.loads(line)
                pair_id = reply["pair_id"]
                score = float(reply["score"])
            except (ValueError, KeyError, TypeError) as exc:
                raise PipelineError(
                    f"external scorer {self.name!r} sent a malformed reply: "
                    f"{line.strip()!r}"
                ) from exc
            if pair_id not in pending:
                raise PipelineError(
                    f"external scorer {self.name!r} replied to unknown pair_id "
                    f"{pair_id!r}"
                )
            if not 0.0 <= score <= 1.0:
                raise PipelineError(
                    f"external scorer {self.name!r} returned out-of-range score "
                    f"{score} for pair_id {pair_id!r}"
                )
            self._cache[requests[pair_id]] = score
            pending.discard(pair_id)

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin is not None:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
            self._proc.wait(timeout=10)
            self._proc = None

    def __enter__(self) -> "ExternalScorerClient":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def verify_relevance(
    prompt_input: str,
    response_text: str,
    scorer: str = SCORER_LEXICAL,
    *,
    stopwords: frozenset[str] = frozenset(),
    client: ExternalScorerClient | None = None,
) -> float:
    """Relevance of the response to the input, in [0, 1].

    ``lexical_recall`` is the built-in proxy; ``external`` delegates to a
    plugged-in scorer (e.g. a neural relevance model) over the line protocol.
    """
    if scorer == SCORER_LEXICAL:
        return lexical_recall(prompt_input, response_text, stopwords)
    if scorer == SCORER_EXTERNAL:
        if client is None:
            raise PipelineError(
                "relevance constraint configured with scorer 'external' but no "
                "external scorer client is available"
            )
        return client.score(prompt_input, response_text)
    raise ConfigError(f"unknown relevance scorer {scorer!r}")


# ---------------------------------------------------------------------------
# Registry and composite evaluation
# ---------------------------------------------------------------------------

VerifierFn = Callable[[ConstraintSpec, Instance, CandidateResponse, "EvalContext"], float]


@dataclass
class EvalContext:
    """Runtime dependencies for verifier evaluation (external scorer, etc.)."""

    scorer_client: ExternalScorerClient | None = None


def _norm_knobs(spec: ConstraintSpec) -> dict[str, Any]:
    params = spec.params
    exact = bool(params.get("exact", False))
    return {
        "delimiter": params.get("delimiter", DEFAULT_DELIMITER),
        "casefold": False if exact else not bool(params.get("case_sensitive", False)),
        "trim": not exact,
        "empty_scores_zero": not exact,
    }


def _run_label_option(
    spec: ConstraintSpec, inst: Instance, cand: CandidateResponse, ctx: EvalContext
) -> float:
    return verify_label_option(cand.text, spec.params["options"], **_norm_knobs(spec))


def _run_label_hierarchy(
    spec: ConstraintSpec, inst: Instance, cand: CandidateResponse, ctx: EvalContext
) -> float:
    return verify_label_hierarchy(
        cand.text, spec.params["fine2coarse"], **_norm_knobs(spec)
    )


def _run_extractiveness(
    spec: ConstraintSpec, inst: Instance, cand: CandidateResponse, ctx: EvalContext
) -> float:
    exact = bool(spec.params.get("exact", False))
    return verify_extractiveness(
        inst.prompt,
        cand.text,
        whitespace_normalize=not exact,
        empty_scores_zero=not exact,
    )


def _run_relevance(
    spec: ConstraintSpec, inst: Instance, cand: CandidateResponse, ctx: EvalContext
) -> float:
    return verify_relevance(
        inst.prompt,
        cand.text,
        spec.params.get("scorer", SCORER_LEXICAL),
        stopwords=frozenset(spec.params.get("stopwords", ())),
        client=ctx.scorer_client,
    )


_REGISTRY: dict[str, VerifierFn] = {
    KIND_LABEL_OPTION: _run_label_option,
    KIND_LABEL_HIERARCHY: _run_label_hierarchy,
    KIND_EXTRACTIVENESS: _run_extractiveness,
    KIND_RELEVANCE: _run_relevance,
}


def register_verifier(kind: str, fn: VerifierFn, arity: str = ARITY_PROMPT_RESPONSE) -> None:
    """Register a custom verifier kind (plug-in point for new constraints)."""
    if arity not in (ARITY_RESPONSE, ARITY_PROMPT_RESPONSE):
        raise ConfigError(f"custom verifiers must be instance-level, got {arity!r}")
    KIND_ARITY[kind] = arity
    _REGISTRY[kind] = fn


def validate_spec(spec: ConstraintSpec) -> None:
    """Fail-fast parameter validation, run at config time before any data."""
    params = spec.params
    if spec.kind == KIND_LABEL_OPTION:
        options = params.get("options")
        if not options:
            raise ConfigError(
                f"constraint {spec.name!r}: label_option requires non-empty 'options'"
            )
    elif spec.kind == KIND_LABEL_HIERARCHY:
        fine2coarse = params.get("fine2coarse")
        if not isinstance(fine2coarse, Mapping) or not fine2coarse:
            raise ConfigError(
                f"constraint {spec.name!r}: label_hierarchy requires a non-empty "
                "'fine2coarse' map"
            )
        options = params.get("options")
        if options:
            casefold = not bool(params.get("case_sensitive", False)) and not bool(
                params.get("exact", False)
            )
            opt_set = {o.lower() for o in options} if casefold else set(options)
            for fine, coarse in fine2coarse.items():
                key = coarse.lower() if casefold else coarse
                if key not in opt_set:
                    raise ConfigError(
                        f"constraint {spec.name!r}: coarse type {coarse!r} "
                        f"(parent of {fine!r}) is not in the declared options"
                    )
    elif spec.kind == KIND_RELEVANCE:
        scorer = params.get("scorer", SCORER_LEXICAL)
        if scorer not in (SCORER_LEXICAL, SCORER_EXTERNAL):
            raise ConfigError(
                f"constraint {spec.name!r}: unknown relevance scorer {scorer!r}"
            )
        if scorer == SCORER_EXTERNAL and not params.get("command"):
            raise ConfigError(
                f"constraint {spec.name!r}: scorer 'external' requires 'command'"
            )


def evaluate_instance(
    inst: Instance,
    candidate: CandidateResponse,
    specs: Sequence[ConstraintSpec],
    comp: CompositeSpec,
    *,
    ctx: EvalContext | None = None,
) -> CsrScore:
    """Evaluate instance-level constraints for one candidate and combine them.

    Group-arity specs are rejected up front; they are resolved by the
    temporal module, not here.
    """
    if not specs:
        raise ConfigError("evaluate_instance requires at least one constraint spec")
    if not inst.candidates:
        raise InternalError(
            f"instance {inst.instance_id!r} entered verification with no candidates"
        )
    ctx = ctx or EvalContext()
    parts: list[Part] = []
    for spec in specs:
        if spec.arity == ARITY_GROUP:
            raise ConfigError(
                f"constraint {spec.name!r} has group arity and cannot be "
                "evaluated per-instance"
            )
        value = _REGISTRY[spec.kind](spec, inst, candidate, ctx)
        weight = comp.weight_for(spec.name, spec.weight)
        parts.append(Part(name=spec.name, value=value, weight=weight))
    return CsrScore.from_parts(parts, comp)
