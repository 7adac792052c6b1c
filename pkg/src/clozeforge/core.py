"""Shared domain types: queries with masked spans, filled candidates, provider interface.

The mask is an out-of-band sentinel object rather than a reserved token id, so
nothing here can collide with a backend vocabulary.  Transports that talk to a
real model map the sentinel to the backend's mask-token id at the wire boundary.
Only contiguous mask spans are supported.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence


class ClozeForgeError(Exception):
    """Base class for all library errors."""


class SpanOutOfBounds(ClozeForgeError):
    pass


class InvalidConfidence(ClozeForgeError):
    pass


class ProviderFailure(ClozeForgeError):
    """A distribution provider failed to answer a query."""


class _MaskSentinel:
    """Singleton marker for a masked position; never equal to a token id."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MASK"

    def __reduce__(self):  # survives pickling as the same singleton
        return (_MaskSentinel, ())


MASK = _MaskSentinel()

TokenId = int


@dataclass(frozen=True)
class MaskedQuery:
    """A token sequence with a contiguous masked span (inclusive bounds)."""

    tokens: tuple
    mask_span: tuple[int, int]
    language: str = "en"

    def __post_init__(self):
        i, j = self.mask_span
        n = len(self.tokens)
        if not (0 <= i <= j < n):
            raise SpanOutOfBounds(f"span ({i}, {j}) out of bounds for length {n}")
        for k, tok in enumerate(self.tokens):
            inside = i <= k <= j
            if inside and tok is not MASK:
                raise SpanOutOfBounds(f"position {k} inside span must be MASK")
            if not inside and tok is MASK:
                raise SpanOutOfBounds(f"position {k} outside span must not be MASK")

    @property
    def mask_count(self) -> int:
        i, j = self.mask_span
        return j - i + 1

    @property
    def span_positions(self) -> range:
        i, j = self.mask_span
        return range(i, j + 1)


def make_query(token_ids: Sequence[TokenId], span: tuple[int, int], language: str = "en") -> MaskedQuery:
    """Install MASK sentinels on ``span`` of ``token_ids``; bounds are inclusive."""
    i, j = span
    n = len(token_ids)
    if not (0 <= i <= j < n):
        raise SpanOutOfBounds(f"span ({i}, {j}) out of bounds for length {n}")
    tokens = tuple(MASK if i <= k <= j else token_ids[k] for k in range(n))
    return MaskedQuery(tokens=tokens, mask_span=(i, j), language=language)


@dataclass(frozen=True)
class Candidate:
    """A fully filled query with per-token confidences and an aggregate score.

    ``confidence[k]`` is the probability of ``filled[k]`` at the time it was
    committed (possibly stale once neighbours changed; see
    :func:`clozeforge.decoder.recompute_confidence`).  ``score`` is the
    pseudo log-likelihood aggregate, length-normalized or not depending on the
    decoder configuration that produced it.
    """

    tokens: tuple
    filled: tuple
    confidence: tuple
    score: float
    mask_count: int

    def __post_init__(self):
        if len(self.filled) != self.mask_count or len(self.confidence) != self.mask_count:
            raise InvalidConfidence(
                f"filled/confidence lengths must equal mask_count={self.mask_count}"
            )
        for c in self.confidence:
            if not (0.0 < c <= 1.0):
                raise InvalidConfidence(f"confidence {c} outside (0, 1]")
        if any(t is MASK for t in self.tokens):
            raise InvalidConfidence("candidate tokens must not contain MASK")


class DistributionProvider(ABC):
    """Abstract masked LM: the source of conditional token distributions.

    ``predict`` receives a token sequence that may contain MASK sentinels at
    arbitrary positions and returns, for each requested masked position, a
    ranked list of ``(token_id, log_probability)`` pairs sorted by descending
    log-probability.  Implementations must be deterministic within a session.
    """

    #: whether concurrent predict() calls are safe; callers serialize if False
    thread_safe: bool = False

    @abstractmethod
    def tokenize(self, text: str) -> list[TokenId]:
        ...

    @abstractmethod
    def detokenize(self, ids: Sequence[TokenId]) -> str:
        ...

    @abstractmethod
    def vocab_size(self) -> int:
        ...

    @abstractmethod
    def predict(
        self,
        tokens: Sequence,
        mask_positions: Sequence[int],
        top_k: int,
    ) -> list[list[tuple[TokenId, float]]]:
        ...


def unmask(query: MaskedQuery, filled: Sequence[TokenId]) -> tuple:
    """Replace the masked span of ``query`` with ``filled`` token ids."""
    i, j = query.mask_span
    if len(filled) != j - i + 1:
        raise SpanOutOfBounds(f"need {j - i + 1} fill tokens, got {len(filled)}")
    return tuple(query.tokens[:i]) + tuple(filled) + tuple(query.tokens[j + 1:])


# Languages whose mask placeholders are concatenated without separators when
# instantiating prompts (scriptio continua).
UNSPACED_LANGUAGES = frozenset({"zh", "ja"})


@dataclass(frozen=True)
class DecoderConfig:
    """Knobs for multi-token decoding.

    ``max_iterations`` defaults to twice ``max_masks`` so that after the
    initial prediction (which consumes exactly m iterations for an m-mask
    query) every predicted token can be refined roughly once.
    """

    max_masks: int = 5
    max_iterations: int | None = None
    beam: int = 1
    init_strategy: str = "independent"  # independent | order | confidence
    refine_strategy: str = "none"  # none | order | confidence
    length_norm: bool = False
    recompute: bool = False

    _INIT = ("independent", "order", "confidence")
    _REFINE = ("none", "order", "confidence")

    def __post_init__(self):
        if self.max_masks < 1 or self.beam < 1:
            raise ValueError("max_masks and beam must be >= 1")
        if self.max_iterations is None:
            object.__setattr__(self, "max_iterations", 2 * self.max_masks)
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.init_strategy not in self._INIT:
            raise ValueError(f"unknown init strategy {self.init_strategy!r}")
        if self.refine_strategy not in self._REFINE:
            raise ValueError(f"unknown refine strategy {self.refine_strategy!r}")

    @staticmethod
    def default_max_masks(language: str) -> int:
        """Languages with mostly short subword splits cap at 5 masks, others 10."""
        return 5 if language in {"en", "fr", "nl", "es"} else 10
