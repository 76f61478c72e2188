"""Declarative pipeline configuration: one human-editable YAML document.

The document is schema-versioned (`version: 1`) and validated fully before
any data is read, so misconfigurations fail fast with a field path instead
of surfacing halfway through a batch.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .core import (
    COMBINATORS,
    CompositeSpec,
    SCORE_MODES,
    SCORE_NORMALIZED,
    WEIGHTED_MEAN,
)
from .errors import ConfigError
from .preference import MarginSpec, SelectionPolicy
from .temporal import (
    DEFAULT_DISJOINTNESS,
    DEFAULT_ENUMERATION_CAP,
    normalize_disjointness,
)
from .verifiers import ConstraintSpec, KIND_TEMPORAL, validate_spec

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "version",
    "constraints",
    "composite",
    "selection",
    "margin",
    "temporal",
    "scoring",
    "io",
    "losses",
    "mock",
    "seed",
}


@dataclass(frozen=True)
class TemporalSettings:
    """Group-resolution knobs: disjoint role pairs, candidates per member,
    enumeration cap and the greedy fallback switch."""

    disjointness: frozenset[frozenset[str]] = DEFAULT_DISJOINTNESS
    m: int = 2
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    greedy_fallback: bool = False
    delimiter: str = ", "
    casefold: bool = True

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ConfigError(f"temporal.m must be >= 1, got {self.m}")
        if self.enumeration_cap < 1:
            raise ConfigError(
                f"temporal.enumeration_cap must be >= 1, got {self.enumeration_cap}"
            )


@dataclass(frozen=True)
class IoSettings:
    max_reject_fraction: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.max_reject_fraction <= 1.0:
            raise ConfigError(
                f"io.max_reject_fraction must be in [0, 1], "
                f"got {self.max_reject_fraction}"
            )


@dataclass(frozen=True)
class LossSettings:
    reweighted: bool = False
    top_k: int = 1

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ConfigError(f"losses.top_k must be >= 1, got {self.top_k}")


@dataclass(frozen=True)
class MockPools:
    """Fixture grammar for the mock sampler: response pools plus synthetic
    log-prob ranges, and an optional temporal-group grammar."""

    satisfying: tuple[str, ...]
    violating: tuple[str, ...]
    violating_rate: float = 0.5
    logprob_per_token: tuple[float, float] = (-2.5, -0.1)
    plant: str = "random"  # or "one_violating": exactly one violator per instance
    groups: bool = False
    roles: tuple[str, ...] = ("before", "during", "after")
    events: tuple[str, ...] = ()
    events_per_answer: tuple[int, int] = (0, 3)

    def __post_init__(self) -> None:
        if not self.groups and (not self.satisfying or not self.violating):
            raise ConfigError("mock pools need satisfying and violating responses")
        if not 0.0 <= self.violating_rate <= 1.0:
            raise ConfigError(
                f"mock.violating_rate must be in [0, 1], got {self.violating_rate}"
            )
        lo, hi = self.logprob_per_token
        if lo > hi or hi > 0:
            raise ConfigError(
                "mock.logprob_per_token must be an increasing pair of negatives"
            )
        if self.plant not in ("random", "one_violating"):
            raise ConfigError(f"unknown mock.plant mode {self.plant!r}")
        if self.groups and not self.events:
            raise ConfigError("mock.groups requires a non-empty event pool")
        lo_n, hi_n = self.events_per_answer
        if lo_n < 0 or hi_n < lo_n:
            raise ConfigError("mock.events_per_answer must be a nondecreasing pair")


@dataclass(frozen=True)
class PipelineConfig:
    """Fully validated pipeline configuration."""

    constraints: tuple[ConstraintSpec, ...]
    composite: CompositeSpec
    selection: SelectionPolicy
    margin: MarginSpec
    temporal: TemporalSettings
    io: IoSettings
    losses: LossSettings
    scoring_mode: str = SCORE_NORMALIZED
    seed: int = 0
    mock: MockPools | None = None
    digest: str = ""

    @property
    def instance_specs(self) -> tuple[ConstraintSpec, ...]:
        return tuple(s for s in self.constraints if s.kind != KIND_TEMPORAL)

    @property
    def temporal_spec(self) -> ConstraintSpec | None:
        for spec in self.constraints:
            if spec.kind == KIND_TEMPORAL:
                return spec
        return None


def _require(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return doc[key]


def _check_keys(doc: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")


def _as_mapping(value: Any, where: str) -> Mapping[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
    return value


def _parse_constraints(items: Any) -> tuple[ConstraintSpec, ...]:
    if not isinstance(items, list) or not items:
        raise ConfigError("constraints: expected a non-empty list")
    specs: list[ConstraintSpec] = []
    names: set[str] = set()
    temporal_count = 0
    for i, item in enumerate(items):
        where = f"constraints[{i}]"
        entry = _as_mapping(item, where)
        _check_keys(entry, {"name", "kind", "params", "weight"}, where)
        spec = ConstraintSpec(
            name=str(_require(entry, "name", where)),
            kind=str(_require(entry, "kind", where)),
            params=dict(_as_mapping(entry.get("params"), f"{where}.params")),
            weight=float(entry.get("weight", 1.0)),
        )
        if spec.name in names:
            raise ConfigError(f"{where}: duplicate constraint name {spec.name!r}")
        names.add(spec.name)
        if spec.kind == KIND_TEMPORAL:
            temporal_count += 1
        validate_spec(spec)
        specs.append(spec)
    if temporal_count > 1:
        raise ConfigError("constraints: at most one temporal_consistency constraint")
    return tuple(specs)


def _parse_composite(doc: Mapping[str, Any]) -> CompositeSpec:
    _check_keys(doc, {"combinator", "weights"}, "composite")
    combinator = doc.get("combinator", "weighted_mean")
    if combinator not in COMBINATORS:
        raise ConfigError(
            f"composite.combinator must be one of {COMBINATORS}, got {combinator!r}"
        )
    weights = doc.get("weights")
    if weights is not None:
        weights = {str(k): float(v) for k, v in _as_mapping(weights, "composite.weights").items()}
    return CompositeSpec(combinator=combinator, weights=weights)


def _parse_temporal(doc: Mapping[str, Any], spec_params: Mapping[str, Any]) -> TemporalSettings:
    _check_keys(
        doc,
        {"disjointness", "m", "enumeration_cap", "greedy_fallback", "delimiter", "casefold"},
        "temporal",
    )
    # The temporal constraint's own params win over the section defaults.
    raw_pairs = spec_params.get("disjointness", doc.get("disjointness"))
    disjointness = (
        normalize_disjointness(raw_pairs) if raw_pairs is not None else DEFAULT_DISJOINTNESS
    )
    return TemporalSettings(
        disjointness=disjointness,
        m=int(doc.get("m", 2)),
        enumeration_cap=int(doc.get("enumeration_cap", DEFAULT_ENUMERATION_CAP)),
        greedy_fallback=bool(doc.get("greedy_fallback", False)),
        delimiter=str(spec_params.get("delimiter", doc.get("delimiter", ", "))),
        casefold=bool(spec_params.get("casefold", doc.get("casefold", True))),
    )


def _parse_mock(doc: Mapping[str, Any]) -> MockPools:
    _check_keys(
        doc,
        {
            "satisfying",
            "violating",
            "violating_rate",
            "logprob_per_token",
            "plant",
            "groups",
            "roles",
            "events",
            "events_per_answer",
        },
        "mock",
    )
    pair = doc.get("logprob_per_token", (-2.5, -0.1))
    counts = doc.get("events_per_answer", (0, 3))
    return MockPools(
        satisfying=tuple(doc.get("satisfying", ())),
        violating=tuple(doc.get("violating", ())),
        violating_rate=float(doc.get("violating_rate", 0.5)),
        logprob_per_token=(float(pair[0]), float(pair[1])),
        plant=str(doc.get("plant", "random")),
        groups=bool(doc.get("groups", False)),
        roles=tuple(doc.get("roles", ("before", "during", "after"))),
        events=tuple(doc.get("events", ())),
        events_per_answer=(int(counts[0]), int(counts[1])),
    )


def parse_config(doc: Any, source: str = "<config>") -> PipelineConfig:
    """Validate a raw config document into a PipelineConfig (fail-fast)."""
    root = _as_mapping(doc, source)
    _check_keys(root, _TOP_KEYS, source)
    version = _require(root, "version", source)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"{source}: unsupported config version {version!r}; "
            f"this build reads version {SCHEMA_VERSION}"
        )
    constraints = _parse_constraints(_require(root, "constraints", source))
    composite = _parse_composite(_as_mapping(root.get("composite"), "composite"))
    instance_specs = [s for s in constraints if s.kind != KIND_TEMPORAL]
    if composite.combinator == WEIGHTED_MEAN and instance_specs:
        if all(composite.weight_for(s.name, s.weight) == 0 for s in instance_specs):
            raise ConfigError(
                "composite: weighted_mean requires at least one strictly "
                "positive constraint weight"
            )

    selection_doc = _as_mapping(root.get("selection"), "selection")
    _check_keys(
        selection_doc,
        {"gap_epsilon", "min_logprob_quantile", "binary_mode", "max_pairs_per_instance"},
        "selection",
    )
    max_pairs = selection_doc.get("max_pairs_per_instance")
    selection = SelectionPolicy(
        gap_epsilon=float(selection_doc.get("gap_epsilon", 0.1)),
        min_logprob_quantile=float(selection_doc.get("min_logprob_quantile", 0.0)),
        binary_mode=bool(selection_doc.get("binary_mode", False)),
        max_pairs_per_instance=None if max_pairs is None else int(max_pairs),
    )

    margin_doc = _as_mapping(root.get("margin"), "margin")
    _check_keys(margin_doc, {"mode", "constant", "scale"}, "margin")
    margin = MarginSpec(
        mode=str(margin_doc.get("mode", "csr_gap")),
        constant=float(margin_doc.get("constant", 0.0)),
        scale=float(margin_doc.get("scale", 1.0)),
    )

    temporal_spec = next((s for s in constraints if s.kind == KIND_TEMPORAL), None)
    temporal = _parse_temporal(
        _as_mapping(root.get("temporal"), "temporal"),
        temporal_spec.params if temporal_spec else {},
    )

    scoring_doc = _as_mapping(root.get("scoring"), "scoring")
    _check_keys(scoring_doc, {"mode"}, "scoring")
    scoring_mode = str(scoring_doc.get("mode", SCORE_NORMALIZED))
    if scoring_mode not in SCORE_MODES:
        raise ConfigError(
            f"scoring.mode must be one of {SCORE_MODES}, got {scoring_mode!r}"
        )

    io_doc = _as_mapping(root.get("io"), "io")
    _check_keys(io_doc, {"max_reject_fraction"}, "io")
    io_settings = IoSettings(
        max_reject_fraction=float(io_doc.get("max_reject_fraction", 0.1))
    )

    losses_doc = _as_mapping(root.get("losses"), "losses")
    _check_keys(losses_doc, {"reweighted", "top_k"}, "losses")
    losses = LossSettings(
        reweighted=bool(losses_doc.get("reweighted", False)),
        top_k=int(losses_doc.get("top_k", 1)),
    )

    mock = _parse_mock(_as_mapping(root["mock"], "mock")) if root.get("mock") else None

    digest = hashlib.sha256(
        json.dumps(root, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()[:12]

    return PipelineConfig(
        constraints=constraints,
        composite=composite,
        selection=selection,
        margin=margin,
        temporal=temporal,
        io=io_settings,
        losses=losses,
        scoring_mode=scoring_mode,
        seed=int(root.get("seed", 0)),
        mock=mock,
        digest=digest,
    )


def load_config(path: str | Path) -> PipelineConfig:
    """Read and validate a YAML (or JSON) config document."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return parse_config(doc, source=str(path))
