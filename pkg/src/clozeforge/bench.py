"""Fact and entity ingestion, frequency-proportional sampling, alias matching,
and accuracy aggregation.

Matching lowercases with Unicode default case folding and additionally
normalizes whitespace (trim plus collapsing internal runs); locale-specific
casing rules (Turkish dotted/dotless i) are deliberately not applied, trading
locale fidelity for platform-independent determinism.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .core import ClozeForgeError


class SchemaError(ClozeForgeError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownEntity(ClozeForgeError):
    pass


@dataclass(frozen=True)
class EntityRecord:
    entity_id: str
    labels: dict  # language -> canonical surface
    aliases: dict  # language -> list of surfaces (always includes the label)
    gender: str | None = None
    number: str | None = None
    instance_of: tuple = ()

    def __post_init__(self):
        for lang, label in self.labels.items():
            variants = self.aliases.setdefault(lang, [])
            if label not in variants:
                variants.insert(0, label)

    def aliases_in(self, language: str) -> list[str]:
        return list(self.aliases.get(language, ()))


@dataclass(frozen=True)
class Fact:
    relation_id: str
    subject_id: str
    object_ids: frozenset
    frequency: int = 0

    def __post_init__(self):
        if not self.object_ids:
            raise ValueError("a fact needs at least one object")
        if self.frequency < 0:
            raise ValueError("frequency must be >= 0")


@dataclass(frozen=True)
class RunRecord:
    """One decoded fact: the final prediction plus everything needed for rescoring."""

    fact: Fact
    language: str
    prediction_text: str
    mask_count_used: int
    per_m_scores: dict = field(default_factory=dict)
    per_m_predictions: dict = field(default_factory=dict)  # m -> detokenized text
    gold_is_single_token: bool = False
    skipped: bool = False


@dataclass
class EvaluationReport:
    per_relation_accuracy: dict  # relation -> Fraction
    macro_average: Fraction
    splits: dict  # {"all"|"single"|"multi": Fraction}
    skipped_count: int
    per_relation_counts: dict = field(default_factory=dict)  # relation -> (correct, total)

    def to_json_dict(self) -> dict:
        return {
            "per_relation_accuracy": {
                r: {"accuracy": float(a), "correct": self.per_relation_counts[r][0],
                    "total": self.per_relation_counts[r][1]}
                for r, a in sorted(self.per_relation_accuracy.items())
            },
            "macro_average": float(self.macro_average),
            "splits": {k: float(v) for k, v in self.splits.items()},
            "skipped_count": self.skipped_count,
        }

    def to_tsv(self) -> str:
        lines = ["relation\tcorrect\ttotal\taccuracy"]
        for r in sorted(self.per_relation_accuracy):
            c, t = self.per_relation_counts[r]
            lines.append(f"{r}\t{c}\t{t}\t{float(self.per_relation_accuracy[r]):.6f}")
        lines.append(f"MACRO\t\t\t{float(self.macro_average):.6f}")
        return "\n".join(lines) + "\n"


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from None


def load_facts(path) -> list[Fact]:
    """JSON-lines facts; duplicate (relation, subject) rows merge their objects."""
    merged: dict = {}
    order: list = []
    for lineno, row in _read_jsonl(path):
        try:
            relation = row["relation"]
            subject = row["subject"]
            objects = row["objects"]
            frequency = int(row.get("frequency", 0))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad fact row: {exc!r}", lineno) from None
        if not isinstance(objects, list) or not objects:
            raise SchemaError("'objects' must be a non-empty list", lineno)
        key = (relation, subject)
        if key in merged:
            objs, freq = merged[key]
            merged[key] = (objs | set(objects), freq + frequency)
        else:
            merged[key] = (set(objects), frequency)
            order.append(key)
    return [
        Fact(relation_id=rel, subject_id=subj,
             object_ids=frozenset(merged[(rel, subj)][0]),
             frequency=merged[(rel, subj)][1])
        for rel, subj in order
    ]


def load_entities(path) -> dict:
    entities = {}
    for lineno, row in _read_jsonl(path):
        try:
            record = EntityRecord(
                entity_id=row["id"],
                labels=dict(row.get("labels", {})),
                aliases={k: list(v) for k, v in row.get("aliases", {}).items()},
                gender=row.get("gender"),
                number=row.get("number"),
                instance_of=tuple(row.get("instance_of", ())),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise SchemaError(f"bad entity row: {exc!r}", lineno) from None
        entities[record.entity_id] = record
    return entities


def sample_facts(facts: Sequence[Fact], n: int, seed: int) -> list[Fact]:
    """n draws without replacement, each proportional to the remaining frequencies.

    Deterministic for a fixed seed.  All-zero frequencies fall back to uniform
    sampling.  Fewer than n facts returns the whole population (in draw order).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pool = list(facts)
    rng = random.Random(f"sample:{seed}")
    out = []
    while pool and len(out) < n:
        weights = [f.frequency for f in pool]
        total = sum(weights)
        if total == 0:
            idx = rng.randrange(len(pool))
        else:
            r = rng.random() * total
            acc = 0.0
            idx = len(pool) - 1
            for i, w in enumerate(weights):
                acc += w
                if r < acc:
                    idx = i
                    break
        out.append(pool.pop(idx))
    return out


_WS_RUN = re.compile(r"\s+")


def normalize_surface(text: str) -> str:
    return _WS_RUN.sub(" ", text.strip()).casefold()


def gold_aliases(fact: Fact, entities: Mapping[str, EntityRecord], language: str) -> list[str]:
    """All aliases of all gold objects in ``language``; raises on unknown object ids."""
    out = []
    for obj_id in sorted(fact.object_ids):
        record = entities.get(obj_id)
        if record is None:
            raise UnknownEntity(f"no entity record for gold object {obj_id!r}")
        out.extend(record.aliases_in(language))
    return out


def match_prediction(
    prediction: str,
    fact: Fact,
    entities: Mapping[str, EntityRecord],
    language: str,
) -> bool:
    """True iff the normalized prediction equals any normalized gold alias."""
    if not prediction:
        return False
    wanted = normalize_surface(prediction)
    if not wanted:
        return False
    return any(normalize_surface(a) == wanted for a in gold_aliases(fact, entities, language))


def _record_correct(
    record: RunRecord,
    entities,
    oracle_length: bool,
    count_tokens: Callable[[str], int],
) -> bool:
    aliases = gold_aliases(record.fact, entities, record.language)
    if not oracle_length:
        wanted = normalize_surface(record.prediction_text)
        return bool(wanted) and any(normalize_surface(a) == wanted for a in aliases)
    # judge the candidate whose mask count equals the gold surface's token count
    for alias in aliases:
        m = count_tokens(alias)
        prediction = record.per_m_predictions.get(m)
        if prediction is not None and normalize_surface(prediction) == normalize_surface(alias):
            return True
    return False


def evaluate(
    records: Iterable[RunRecord],
    entities: Mapping[str, EntityRecord],
    oracle_length: bool = False,
    count_tokens: Callable[[str], int] | None = None,
) -> EvaluationReport:
    """Per-relation accuracy, macro-averaged, with single/multi-token splits.

    Accuracies are exact rationals and independent of record order.  Records
    marked skipped (or whose gold objects have no alias in the query
    language) count toward ``skipped_count`` only; a relation with no
    evaluated record is excluded from the macro average.
    """
    if count_tokens is None:
        count_tokens = lambda text: len(text.split())
    by_relation: dict = {}
    split_counts = {"all": [0, 0], "single": [0, 0], "multi": [0, 0]}
    skipped = 0
    for record in sorted(records, key=lambda r: (r.fact.relation_id, r.fact.subject_id)):
        relation = record.fact.relation_id
        by_relation.setdefault(relation, [0, 0])
        if record.skipped or not gold_aliases(record.fact, entities, record.language):
            skipped += 1
            continue
        correct = _record_correct(record, entities, oracle_length, count_tokens)
        by_relation[relation][0] += int(correct)
        by_relation[relation][1] += 1
        for split in ("all", "single" if record.gold_is_single_token else "multi"):
            split_counts[split][0] += int(correct)
            split_counts[split][1] += 1

    per_relation = {
        r: Fraction(c, t) for r, (c, t) in by_relation.items() if t > 0
    }
    if per_relation:
        macro = sum(per_relation.values(), Fraction(0)) / len(per_relation)
    else:
        macro = Fraction(0)
    splits = {
        k: (Fraction(c, t) if t else Fraction(0)) for k, (c, t) in split_counts.items()
    }
    return EvaluationReport(
        per_relation_accuracy=per_relation,
        macro_average=macro,
        splits=splits,
        skipped_count=skipped,
        per_relation_counts={r: tuple(v) for r, v in by_relation.items() if v[1] > 0},
    )
