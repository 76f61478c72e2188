"""csrpipe: constraint-verified preference data for model alignment.

Verifies declarative instruction constraints over externally sampled
candidate responses, computes constraint satisfaction rates (CSR), resolves
multi-instance response combinations, and emits CSR-margined preference
records together with reference values of the ranking training losses.
"""

from .core import (
    CandidateResponse,
    CompositeSpec,
    CsrScore,
    Instance,
    Part,
    combine_csr,
    normalized_score,
    raw_score,
)
from .errors import (
    ConfigError,
    CsrPipeError,
    DataError,
    InternalError,
    PipelineError,
)
from .losses import LossReport, l_ft, l_rank, loss_report
from .preference import (
    MarginSpec,
    PreferenceRecord,
    SelectionPolicy,
    compute_margin,
    rank_candidates,
    records_from_group,
    select_pairs,
)
from .temporal import (
    Combination,
    GroupResolution,
    QuestionGroup,
    build_group,
    count_conflicts,
    group_csr,
    parse_answer_set,
    propagate_labels,
    resolve_group,
)
from .verifiers import (
    ConstraintSpec,
    ExternalScorerClient,
    evaluate_instance,
    lexical_recall,
    verify_extractiveness,
    verify_label_hierarchy,
    verify_label_option,
    verify_relevance,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateResponse",
    "Combination",
    "CompositeSpec",
    "ConfigError",
    "ConstraintSpec",
    "CsrPipeError",
    "CsrScore",
    "DataError",
    "ExternalScorerClient",
    "GroupResolution",
    "Instance",
    "InternalError",
    "LossReport",
    "MarginSpec",
    "Part",
    "PipelineError",
    "PreferenceRecord",
    "QuestionGroup",
    "SelectionPolicy",
    "build_group",
    "combine_csr",
    "compute_margin",
    "count_conflicts",
    "evaluate_instance",
    "group_csr",
    "l_ft",
    "l_rank",
    "lexical_recall",
    "loss_report",
    "normalized_score",
    "parse_answer_set",
    "propagate_labels",
    "rank_candidates",
    "raw_score",
    "records_from_group",
    "resolve_group",
    "select_pairs",
    "verify_extractiveness",
    "verify_label_hierarchy",
    "verify_label_option",
    "verify_relevance",
]
