"""Code-switched corpus generation and masking plans for fine-tuning data.

Entity mentions are switched to target-language counterparts all-or-nothing
per sentence; masking selects mention words far more aggressively than the
surrounding text so a trainer focuses on entities.  Every random decision is
drawn from a per-sentence stream derived from (seed, sentence index), so
parallelizing over sentences can never change the output.

Mention spans are byte offsets into the UTF-8 encoding of the text and the
switch operation preserves every non-mention byte exactly.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .core import ClozeForgeError


class InvalidMentionSpans(ClozeForgeError):
    pass


@dataclass(frozen=True)
class MentionSentence:
    text: str
    mentions: tuple  # ((byte_start, byte_end, entity_id), ...)
    language: str

    def __post_init__(self):
        raw = self.text.encode("utf-8")
        spans = sorted(self.mentions)
        object.__setattr__(self, "mentions", tuple(spans))
        prev_end = 0
        for start, end, _entity in spans:
            if start < prev_end or start >= end or end > len(raw):
                raise InvalidMentionSpans(
                    f"bad or overlapping span ({start}, {end}) in {self.text!r}"
                )
            for boundary in (start, end):
                # continuation bytes are 0b10xxxxxx; a span may not split a code point
                if boundary < len(raw) and raw[boundary] & 0xC0 == 0x80:
                    raise InvalidMentionSpans(
                        f"span boundary {boundary} splits a UTF-8 code point"
                    )
            prev_end = end


@dataclass(frozen=True)
class SwitchConfig:
    p_switch: float = 0.30
    p_mask_word: float = 0.15
    p_mask_mention: float = 0.50
    target_language: str = "en"
    seed: int = 0

    def __post_init__(self):
        for name in ("p_switch", "p_mask_word", "p_mask_mention"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {p}")


def sentence_rng(cfg: SwitchConfig, sentence_index: int) -> random.Random:
    """Independent, reproducible stream per (seed, sentence index)."""
    return random.Random(f"cs:{cfg.seed}:{sentence_index}")


def uniform_alias_table(
    entities: Mapping, language: str
) -> dict:
    """entity_id -> [(alias, weight)] with uniform weights, from EntityRecords."""
    table = {}
    for entity_id, record in entities.items():
        variants = record.aliases_in(language)
        if variants:
            table[entity_id] = [(a, 1.0) for a in variants]
    return table


def _weighted_choice(rng: random.Random, weighted: Sequence[tuple[str, float]]) -> str:
    total = sum(w for _, w in weighted)
    if total <= 0:
        return weighted[rng.randrange(len(weighted))][0]
    r = rng.random() * total
    acc = 0.0
    for alias, w in weighted:
        acc += w
        if r < acc:
            return alias
    return weighted[-1][0]


def code_switch(
    sentence: MentionSentence,
    aliases: Mapping[str, Sequence[tuple[str, float]]],
    cfg: SwitchConfig,
    rng: random.Random,
) -> tuple[MentionSentence, str]:
    """With probability p_switch, replace ALL mentions with target-language aliases.

    Replacement aliases are sampled proportionally to their weights.  Returns
    the sentence plus a status: "switched", "kept" (the 1 - p_switch branch),
    or "unswitchable" (some mentioned entity has no target-language alias, a
    degradation the caller tallies rather than an error).
    """
    if rng.random() >= cfg.p_switch:
        return sentence, "kept"
    if not sentence.mentions or any(
        entity_id not in aliases or not aliases[entity_id]
        for _s, _e, entity_id in sentence.mentions
    ):
        return sentence, "unswitchable"

    raw = sentence.text.encode("utf-8")
    pieces = []
    new_mentions = []
    cursor = 0
    for start, end, entity_id in sentence.mentions:
        pieces.append(raw[cursor:start])
        replacement = _weighted_choice(rng, list(aliases[entity_id])).encode("utf-8")
        new_start = sum(len(p) for p in pieces)
        pieces.append(replacement)
        new_mentions.append((new_start, new_start + len(replacement), entity_id))
        cursor = end
    pieces.append(raw[cursor:])
    switched = replace(
        sentence,
        text=b"".join(pieces).decode("utf-8"),
        mentions=tuple(new_mentions),
    )
    return switched, "switched"


def _word_spans(text: str) -> list[tuple[int, int]]:
    """Byte spans of whitespace-separated words."""
    raw = text.encode("utf-8")
    spans = []
    start = None
    for i, b in enumerate(raw):
        if bytes([b]).isspace():
            if start is not None:
                spans.append((start, i))
                start = None
        elif start is None:
            start = i
    if start is not None:
        spans.append((start, len(raw)))
    return spans


def masking_plan(
    sentence: MentionSentence,
    cfg: SwitchConfig,
    rng: random.Random,
) -> set[int]:
    """Word indices to mask: mention words with p_mask_mention, others with p_mask_word.

    Words are whitespace tokens; a word counts as a mention word when its byte
    span overlaps any mention span.
    """
    plan = set()
    for idx, (start, end) in enumerate(_word_spans(sentence.text)):
        in_mention = any(start < m_end and m_start < end
                         for m_start, m_end, _ in sentence.mentions)
        p = cfg.p_mask_mention if in_mention else cfg.p_mask_word
        if rng.random() < p:
            plan.add(idx)
    return plan


def generate_corpus(
    sentences: Iterable[MentionSentence],
    aliases: Mapping[str, Sequence[tuple[str, float]]],
    cfg: SwitchConfig,
) -> tuple[list[dict], dict]:
    """Run switch + masking over a corpus; returns JSONL-ready rows and tallies."""
    rows = []
    stats = {"switched": 0, "kept": 0, "unswitchable": 0, "total": 0}
    for index, sentence in enumerate(sentences):
        rng = sentence_rng(cfg, index)
        out, status = code_switch(sentence, aliases, cfg, rng)
        stats[status] += 1
        stats["total"] += 1
        plan = masking_plan(out, cfg, rng)
        rows.append({
            "text": out.text,
            "mentions": [[s, e, eid] for s, e, eid in out.mentions],
            "lang": out.language,
            "mask_plan": sorted(plan),
        })
    return rows, stats


def read_sentences(path) -> list[MentionSentence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            out.append(MentionSentence(
                text=row["text"],
                mentions=tuple((int(s), int(e), eid) for s, e, eid in row.get("mentions", ())),
                language=row.get("lang", ""),
            ))
    return out


def write_rows(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
