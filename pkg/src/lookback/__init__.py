"""Uncertainty-guided lookback decoding for vision-language models.

A model-agnostic toolkit around four ideas:

  - probe: score thinking traces under real / noise / absent visual contexts
    and contrast the per-step perplexities;
  - miner: find the pause phrases and lookback templates that co-occur with
    presence-sensitive and content-grounded steps;
  - controller: stream tokens from any backend and inject a lookback
    template when a mined pause phrase completes;
  - evaluation: multi-pass pass@k, category z-scores, token footprints, and
    side-by-side comparison reports.

All model access goes through a small JSON wire protocol (see
lookback.backend); nothing here touches model weights.
"""

from __future__ import annotations

from .backend import (
    Backend,
    CallLog,
    ContextKind,
    GenerateRequest,
    HttpBackend,
    MockBackend,
    MockScript,
    SamplingParams,
    ScoreRequest,
    ScoreResponse,
    VisualContext,
    make_noise_context,
)
from .branching import (
    Branch,
    BranchingConfig,
    BranchLog,
    BranchSet,
    branch_score,
    branch_seeds,
    select_branch,
    spawn_branches,
)
from .config import RunConfig, config_hash, load_config
from .controller import (
    ControllerConfig,
    DecodeOutcome,
    DecodeSession,
    Injection,
    TemplatePolicy,
    run_decode,
)
from .errors import (
    BackendError,
    ConfigError,
    CoverageError,
    DataIntegrityError,
    EmptyInputError,
    InsufficientDataError,
    LookbackError,
    ManifestError,
    PreconditionError,
    ProtocolViolationError,
    StreamInterruptedError,
    TransportError,
    UndefinedRateError,
)
from .evaluation import (
    ComparisonReport,
    EvalRecord,
    accuracy_matrix,
    category_zscores,
    comparison_report,
    extract_answer,
    judge_trace,
    pass_at_k,
    pass_at_k_curve,
    render_cell,
    token_footprint,
)
from .jobs import JsonlLog, Question, load_questions, read_jsonl
from .miner import (
    AlignmentReport,
    PhraseEntry,
    PhraseVocabulary,
    alignment_rate,
    build_vocabulary,
    mine_lookback_templates,
    mine_pause_phrases,
)
from .probe import (
    FlagIndex,
    FlagThresholds,
    ProbeRecord,
    StepFlag,
    aggregate_delta_curves,
    derive_thresholds,
    flag_steps,
    step_perplexities,
)
from .traces import Difficulty, Phase, ThinkingTrace, TraceToken

__version__ = "0.1.0"

__all__ = [
    "AlignmentReport",
    "Backend",
    "BackendError",
    "Branch",
    "BranchingConfig",
    "BranchLog",
    "BranchSet",
    "CallLog",
    "ComparisonReport",
    "ConfigError",
    "ContextKind",
    "ControllerConfig",
    "CoverageError",
    "DataIntegrityError",
    "DecodeOutcome",
    "DecodeSession",
    "Difficulty",
    "EmptyInputError",
    "EvalRecord",
    "FlagIndex",
    "FlagThresholds",
    "GenerateRequest",
    "HttpBackend",
    "Injection",
    "InsufficientDataError",
    "JsonlLog",
    "LookbackError",
    "ManifestError",
    "MockBackend",
    "MockScript",
    "Phase",
    "PhraseEntry",
    "PhraseVocabulary",
    "PreconditionError",
    "ProbeRecord",
    "ProtocolViolationError",
    "Question",
    "RunConfig",
    "SamplingParams",
    "ScoreRequest",
    "ScoreResponse",
    "StepFlag",
    "StreamInterruptedError",
    "TemplatePolicy",
    "ThinkingTrace",
    "TraceToken",
    "TransportError",
    "UndefinedRateError",
    "VisualContext",
    "accuracy_matrix",
    "aggregate_delta_curves",
    "alignment_rate",
    "branch_score",
    "branch_seeds",
    "build_vocabulary",
    "category_zscores",
    "comparison_report",
    "config_hash",
    "derive_thresholds",
    "extract_answer",
    "flag_steps",
    "judge_trace",
    "load_config",
    "load_questions",
    "make_noise_context",
    "mine_lookback_templates",
    "mine_pause_phrases",
    "pass_at_k",
    "pass_at_k_curve",
    "read_jsonl",
    "render_cell",
    "run_decode",
    "select_branch",
    "spawn_branches",
    "step_perplexities",
    "token_footprint",
]
