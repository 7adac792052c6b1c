"""Multi-token cloze filling with masked language models.

The public surface re-exported here covers the stable API: query/candidate
types and the provider interface (:mod:`~clozeforge.core`), the decoders
(:mod:`~clozeforge.decoder`), the deterministic table LM and brute-force
oracle (:mod:`~clozeforge.toylm`), the prompt template DSL
(:mod:`~clozeforge.prompts`), benchmark ingestion and scoring
(:mod:`~clozeforge.bench`), code-switched corpus generation
(:mod:`~clozeforge.csdata`), and the external-backend bridge
(:mod:`~clozeforge.bridge`).
"""

from .core import (
    MASK,
    Candidate,
    ClozeForgeError,
    DecoderConfig,
    DistributionProvider,
    InvalidConfidence,
    MaskedQuery,
    ProviderFailure,
    SpanOutOfBounds,
    TokenId,
    UNSPACED_LANGUAGES,
    make_query,
    unmask,
)
from .decoder import (
    BeamItem,
    DecodeResult,
    NoViableFill,
    beam_decode,
    decode,
    greedy_decode,
    predict_autoregressive,
    predict_independent,
    recompute_confidence,
    refine,
    score_candidate,
    select_best,
)
from .toylm import (
    EmptyCorpus,
    SearchSpaceTooLarge,
    TableLM,
    brute_force_best_fill,
    build_table_lm,
    recomputed_confidences,
)
from .prompts import (
    Alternation,
    AmbiguousFeatures,
    Branch,
    EntityForm,
    FeatureSpec,
    Literal,
    MissingSurfaceForm,
    NoBranchMatches,
    ParseError,
    PromptTemplate,
    SlotRef,
    instantiate,
    parse_template,
    select_branch,
    serialize_template,
)
from .bench import (
    EntityRecord,
    EvaluationReport,
    Fact,
    RunRecord,
    SchemaError,
    UnknownEntity,
    evaluate,
    gold_aliases,
    load_entities,
    load_facts,
    match_prediction,
    normalize_surface,
    sample_facts,
)
from .csdata import (
    InvalidMentionSpans,
    MentionSentence,
    SwitchConfig,
    code_switch,
    generate_corpus,
    masking_plan,
    sentence_rng,
    uniform_alias_table,
)
from .bridge import (
    BackendError,
    BridgeProvider,
    BridgeTimeout,
    CachingProvider,
    HandshakeTimeout,
    ProtocolError,
    ProtocolVersionMismatch,
    Session,
    SessionClosed,
    SpawnFailure,
    open_session,
)
from .templates import (
    TemplateNotFound,
    available_templates,
    load_template,
    load_template_text,
)

__version__ = "0.1.0"
