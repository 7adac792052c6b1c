"""Deterministic table-driven masked LM and a brute-force fill oracle.

The table LM derives every conditional from a finite corpus of fixed-length
sentences by counting: a query only consults corpus sentences of the same
length, MASK positions match anything, and additive smoothing spreads mass
over the whole vocabulary.  This makes every decoder behaviour exactly
enumerable by hand, which is the whole point: the brute-force oracle below
scores every possible fill with recomputed confidences and serves as ground
truth for the search-based decoders.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from typing import Sequence

from .core import (
    MASK,
    Candidate,
    ClozeForgeError,
    DistributionProvider,
    MaskedQuery,
    TokenId,
    unmask,
)


class EmptyCorpus(ClozeForgeError):
    pass


class SearchSpaceTooLarge(ClozeForgeError):
    pass


BRUTE_FORCE_CAP = 10 ** 6


class TableLM(DistributionProvider):
    """Count-based masked LM over a multiset of token-id sentences.

    p(w at k | query) = (matches with w at k + alpha) / (matches + alpha * |V|)
    where a corpus sentence matches iff it has the query's length and agrees
    with the query on every non-MASK position.  Tokens with zero probability
    are omitted from the returned lists; with alpha = 0 and no matching
    sentence a position's distribution is empty.
    """

    thread_safe = True  # immutable after construction

    def __init__(self, sentences: Sequence[Sequence[TokenId]], alpha: float = 0.0,
                 vocab: Sequence[str] | None = None):
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        sents = [tuple(int(t) for t in s) for s in sentences]
        if not sents:
            raise EmptyCorpus("corpus must contain at least one sentence")
        for s in sents:
            if any(t < 0 for t in s):
                raise ValueError("token ids must be non-negative")
        self.alpha = float(alpha)
        self._by_length: dict[int, list[tuple[TokenId, ...]]] = {}
        for s in sents:
            self._by_length.setdefault(len(s), []).append(s)
        max_id = max(t for s in sents for t in s)
        if vocab is not None:
            if len(vocab) <= max_id:
                raise ValueError("explicit vocab smaller than corpus token ids")
            self._words = list(vocab)
        else:
            self._words = None
        self._vocab_size = len(vocab) if vocab is not None else max_id + 1
        self._word_to_id = (
            {w: i for i, w in enumerate(self._words)} if self._words else None
        )

    @classmethod
    def from_text(cls, lines: Sequence[str], alpha: float = 0.0) -> "TableLM":
        """Build from whitespace-separated word sentences; vocab is the sorted word set."""
        split = [ln.split() for ln in lines if ln.strip()]
        if not split:
            raise EmptyCorpus("no sentences in text corpus")
        vocab = sorted({w for s in split for w in s})
        index = {w: i for i, w in enumerate(vocab)}
        return cls([[index[w] for w in s] for s in split], alpha=alpha, vocab=vocab)

    @classmethod
    def from_file(cls, path, alpha: float = 0.0) -> "TableLM":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.readlines(), alpha=alpha)

    def vocab_size(self) -> int:
        return self._vocab_size

    def tokenize(self, text: str) -> list[TokenId]:
        if self._word_to_id is None:
            raise ClozeForgeError("this TableLM was built from raw ids, not words")
        try:
            return [self._word_to_id[w] for w in text.split()]
        except KeyError as exc:
            raise ClozeForgeError(f"word not in toy vocabulary: {exc.args[0]!r}") from None

    def detokenize(self, ids: Sequence[TokenId]) -> str:
        if self._words is None:
            raise ClozeForgeError("this TableLM was built from raw ids, not words")
        return " ".join(self._words[i] for i in ids)

    def _matches(self, tokens: Sequence) -> list[tuple[TokenId, ...]]:
        pool = self._by_length.get(len(tokens), [])
        fixed = [(k, t) for k, t in enumerate(tokens) if t is not MASK]
        return [s for s in pool if all(s[k] == t for k, t in fixed)]

    def predict(self, tokens, mask_positions, top_k):
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        for k in mask_positions:
            if not (0 <= k < len(tokens)) or tokens[k] is not MASK:
                raise ValueError(f"position {k} is not masked")
        matches = self._matches(tokens)
        v = self._vocab_size
        out = []
        for k in mask_positions:
            counts = Counter(s[k] for s in matches)
            total = len(matches) + self.alpha * v
            dist = []
            if total > 0:
                for w in range(v):
                    p = (counts.get(w, 0) + self.alpha) / total
                    if p > 0:
                        dist.append((w, math.log(p)))
            dist.sort(key=lambda wl: (-wl[1], wl[0]))
            out.append(dist[:top_k])
        return out


def build_table_lm(sentences: Sequence[Sequence[TokenId]], alpha: float = 0.0,
                   vocab: Sequence[str] | None = None) -> TableLM:
    return TableLM(sentences, alpha=alpha, vocab=vocab)


def recomputed_confidences(
    tokens: Sequence[TokenId],
    span: range,
    provider: DistributionProvider,
) -> list[float]:
    """c_k = p(token_k | everything else unmasked), one single-mask call per position."""
    confs = []
    for k in span:
        probe = list(tokens)
        committed = probe[k]
        probe[k] = MASK
        (dist,) = provider.predict(probe, [k], provider.vocab_size())
        lookup = dict(dist)
        logp = lookup.get(committed)
        confs.append(math.exp(logp) if logp is not None else 0.0)
    return confs


def brute_force_best_fill(
    query: MaskedQuery,
    provider: DistributionProvider,
    length_norm: bool = False,
) -> Candidate:
    """Enumerate every fill of the masked span and return the pseudo-log-likelihood argmax.

    Each fill is scored with *recomputed* confidences, i.e. every position's
    probability is conditioned on all the other committed tokens.  Ties break
    toward the lexicographically smallest fill.  Independent of enumeration
    order by construction.
    """
    m = query.mask_count
    v = provider.vocab_size()
    if v ** m > BRUTE_FORCE_CAP:
        raise SearchSpaceTooLarge(f"|V|^m = {v}^{m} exceeds cap {BRUTE_FORCE_CAP}")
    best = None
    for fill in itertools.product(range(v), repeat=m):
        tokens = unmask(query, fill)
        confs = recomputed_confidences(tokens, query.span_positions, provider)
        if any(c <= 0.0 for c in confs):
            continue  # impossible fill under alpha = 0
        score = sum(math.log(c) for c in confs)
        if length_norm:
            score /= m
        key = (-score, fill)
        if best is None or key < best[0]:
            best = (key, Candidate(
                tokens=tokens,
                filled=tuple(fill),
                confidence=tuple(confs),
                score=score,
                mask_count=m,
            ))
    if best is None:
        raise ClozeForgeError("no fill has nonzero probability")
    return best[1]
