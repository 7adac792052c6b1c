"""Prompt template DSL: parsing, serialization, and cloze instantiation.

Grammar (informal)::

    template   := (literal | "[" branches "]")*
    branches   := branch ("|" branch)*
    branch     := content (";" guard)?
    content    := slotref | surface-text
    slotref    := ("X" | "Y") ("." attribute-value)*
    guard      := ("X" | "Y") ("=" value ("," value)*)?

Everything outside square brackets is literal text.  A bracket with a single
bare slot token parses to a plain slot reference; anything with guards or
``|``-separated options parses to an alternation.  Attribute values come from
a closed registry (grammatical case, gender, number); an unknown value is a
parse error.  Whitespace-only literals between bracketed nodes are dropped
from the AST and re-inserted canonically on serialization and rendering.

Morphological inflection is data, not computation: entity forms arrive
pre-inflected, keyed by the features a slot reference may request.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

from .core import UNSPACED_LANGUAGES, ClozeForgeError


class ParseError(ClozeForgeError):
    def __init__(self, message: str, offset: int, expected: frozenset = frozenset()):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
        self.expected = expected


class NoBranchMatches(ClozeForgeError):
    pass


class AmbiguousFeatures(ClozeForgeError):
    pass


class MissingSurfaceForm(ClozeForgeError):
    pass


SLOTS = ("X", "Y")

# Closed attribute registry: value -> attribute name.
_GENDERS = ("MASC", "FEM", "NEUT")
_NUMBERS = ("SG", "PL")
_CASES = (
    "Nom", "Gen", "Dat", "Acc", "Ins", "Loc", "Ess", "Abl", "Voc", "Erg",
    "All", "Ill", "Ine", "Ela", "Ade", "Abe", "Com", "Tra", "Sup", "Par",
    "Ter", "Obl",
)
ATTRIBUTE_OF_VALUE = {
    **{v: "gender" for v in _GENDERS},
    **{v: "number" for v in _NUMBERS},
    **{v: "case" for v in _CASES},
}
_ATTR_ORDER = ("case", "gender", "number")


@dataclass(frozen=True)
class FeatureSpec:
    """A slot plus a (possibly empty) bundle of attribute constraints."""

    slot: str
    items: tuple = ()  # sorted ((attribute, value), ...) pairs

    def __post_init__(self):
        if self.slot not in SLOTS:
            raise ValueError(f"unknown slot {self.slot!r}")
        object.__setattr__(self, "items", tuple(sorted(self.items)))

    @classmethod
    def of(cls, slot: str, **attributes: str) -> "FeatureSpec":
        return cls(slot, tuple(attributes.items()))

    @property
    def attributes(self) -> dict:
        return dict(self.items)

    def satisfied_by(self, other: "FeatureSpec") -> tuple[bool, bool]:
        """(satisfied, decidable): every constraint present and equal in ``other``.

        Not decidable when the constrained slot differs or some attribute is
        absent from ``other`` (the feature is unknown, not mismatched).
        """
        if not self.items:
            return True, True
        if other.slot != self.slot:
            return False, False
        theirs = other.attributes
        for attr, value in self.items:
            if attr not in theirs:
                return False, False
            if theirs[attr] != value:
                return False, True
        return True, True


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class SlotRef:
    slot: str
    features: FeatureSpec

    @classmethod
    def of(cls, slot: str, **attributes: str) -> "SlotRef":
        return cls(slot, FeatureSpec.of(slot, **attributes))


@dataclass(frozen=True)
class Branch:
    content: Union[str, SlotRef]  # surface text or a slot reference
    guard: FeatureSpec | None = None


@dataclass(frozen=True)
class Alternation:
    branches: tuple


TemplateNode = Union[Literal, SlotRef, Alternation]


@dataclass(frozen=True)
class PromptTemplate:
    nodes: tuple
    relation_id: str = ""
    language: str = ""


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _parse_slotref(token: str, text: str, start: int) -> SlotRef | None:
    """A bare slot token like ``X`` or ``Y.Ess``; None if it is surface text."""
    parts = token.split(".")
    if parts[0] not in SLOTS:
        return None
    attrs = {}
    for value in parts[1:]:
        attr = ATTRIBUTE_OF_VALUE.get(value)
        if attr is None:
            raise ParseError(
                f"unknown attribute value {value!r} on slot {parts[0]}",
                _byte_offset(text, start),
                frozenset(ATTRIBUTE_OF_VALUE),
            )
        if attr in attrs:
            raise ParseError(
                f"duplicate {attr} constraint on slot {parts[0]}",
                _byte_offset(text, start),
            )
        attrs[attr] = value
    return SlotRef(parts[0], FeatureSpec.of(parts[0], **attrs))


def _parse_guard(raw: str, text: str, start: int) -> FeatureSpec:
    raw = raw.strip()
    slot, _, values = raw.partition("=")
    slot = slot.strip()
    if slot not in SLOTS:
        raise ParseError(
            f"guard must name slot X or Y, got {slot!r}",
            _byte_offset(text, start), frozenset(SLOTS),
        )
    attrs = {}
    if values:
        for value in values.split(","):
            value = value.strip()
            attr = ATTRIBUTE_OF_VALUE.get(value)
            if attr is None:
                raise ParseError(
                    f"unknown guard value {value!r}",
                    _byte_offset(text, start), frozenset(ATTRIBUTE_OF_VALUE),
                )
            if attr in attrs:
                raise ParseError(
                    f"duplicate {attr} constraint in guard",
                    _byte_offset(text, start),
                )
            attrs[attr] = value
    return FeatureSpec.of(slot, **attrs)


def _parse_bracket(body: str, text: str, start: int) -> SlotRef | Alternation:
    raw_branches = body.split("|")
    branches = []
    for raw in raw_branches:
        content_raw, sep, guard_raw = raw.partition(";")
        content_raw = content_raw.strip()
        if not content_raw:
            raise ParseError("empty branch in bracket", _byte_offset(text, start))
        content = _parse_slotref(content_raw, text, start)
        if content is None:
            content = content_raw
        guard = _parse_guard(guard_raw, text, start) if sep else None
        branches.append(Branch(content=content, guard=guard))

    if len(branches) == 1 and branches[0].guard is None and isinstance(branches[0].content, SlotRef):
        return branches[0].content

    guard_slots = {b.guard.slot for b in branches if b.guard is not None}
    if len(guard_slots) > 1:
        raise ParseError(
            "guards within one alternation must constrain the same slot",
            _byte_offset(text, start),
        )
    return Alternation(branches=tuple(branches))


def parse_template(text: str, relation_id: str = "", language: str = "") -> PromptTemplate:
    """Parse template ``text`` into an AST; raises :class:`ParseError` on malformed input."""
    if not text:
        raise ParseError("empty template", 0)
    nodes: list[TemplateNode] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "]":
            raise ParseError("unmatched ']'", _byte_offset(text, i), frozenset({"["}))
        if ch == "[":
            close = text.find("]", i + 1)
            if close < 0:
                raise ParseError(
                    "unclosed bracket", _byte_offset(text, i), frozenset({"]"})
                )
            inner = text[i + 1:close]
            if "[" in inner:
                raise ParseError(
                    "nested '[' inside bracket",
                    _byte_offset(text, i + 1 + inner.index("[")),
                    frozenset({"]"}),
                )
            nodes.append(_parse_bracket(inner, text, i + 1))
            i = close + 1
        else:
            nxt = text.find("[", i)
            if nxt < 0:
                nxt = n
            chunk = text[i:nxt]
            if "]" in chunk:
                raise ParseError(
                    "unmatched ']'", _byte_offset(text, i + chunk.index("]")),
                    frozenset({"["}),
                )
            if chunk.strip() or not nodes or nxt >= n:
                # whitespace-only separators between bracketed nodes are
                # canonical and dropped; leading/trailing whitespace is kept
                if chunk:
                    nodes.append(Literal(chunk))
            i = nxt

    _validate_slot_chains(nodes)
    return PromptTemplate(nodes=tuple(nodes), relation_id=relation_id, language=language)


def _referenced_slots(node: TemplateNode) -> set[str]:
    if isinstance(node, SlotRef):
        return {node.slot}
    if isinstance(node, Alternation):
        return {b.content.slot for b in node.branches if isinstance(b.content, SlotRef)}
    return set()


def _validate_slot_chains(nodes) -> None:
    counts = {"X": 0, "Y": 0}
    for node in nodes:
        for slot in _referenced_slots(node):
            counts[slot] += 1
    for slot, count in counts.items():
        if count != 1:
            raise ParseError(
                f"template must reference slot {slot} exactly once, found {count}", 0
            )


def _serialize_features_suffix(features: FeatureSpec) -> str:
    attrs = features.attributes
    return "".join(f".{attrs[a]}" for a in _ATTR_ORDER if a in attrs)


def _serialize_guard(guard: FeatureSpec) -> str:
    attrs = guard.attributes
    values = ",".join(attrs[a] for a in _ATTR_ORDER if a in attrs)
    return f"{guard.slot}={values}" if values else guard.slot


def _serialize_node(node: TemplateNode) -> str:
    if isinstance(node, Literal):
        return node.text
    if isinstance(node, SlotRef):
        return f"[{node.slot}{_serialize_features_suffix(node.features)}]"
    parts = []
    for b in node.branches:
        if isinstance(b.content, SlotRef):
            content = f"{b.content.slot}{_serialize_features_suffix(b.content.features)}"
        else:
            content = b.content
        parts.append(content + (f";{_serialize_guard(b.guard)}" if b.guard else ""))
    return "[" + " | ".join(parts) + "]"


def serialize_template(template: PromptTemplate) -> str:
    """Canonical text form; ``parse_template(serialize_template(t))`` reproduces ``t``."""
    pieces = []
    prev_literal = True
    for node in template.nodes:
        is_literal = isinstance(node, Literal)
        if pieces and not is_literal and not prev_literal:
            pieces.append(" ")
        pieces.append(_serialize_node(node))
        prev_literal = is_literal
    return "".join(pieces)


def select_branch(alt: Alternation, subject_features: FeatureSpec) -> Branch:
    """Pick the branch whose guard the subject's features satisfy.

    A single-branch alternation is returned unconditionally.  When a needed
    feature is unknown and the branches differ, raises
    :class:`AmbiguousFeatures`; when every guard is decidably violated,
    :class:`NoBranchMatches`.
    """
    if len(alt.branches) == 1:
        return alt.branches[0]
    undecidable = False
    for branch in alt.branches:
        if branch.guard is None:
            return branch
        ok, decidable = branch.guard.satisfied_by(subject_features)
        if ok:
            return branch
        if not decidable:
            undecidable = True
    if undecidable:
        if len({b.content for b in alt.branches}) == 1:
            return alt.branches[0]
        raise AmbiguousFeatures(
            "subject features leave the alternation unresolved: "
            + " | ".join(str(b.content) for b in alt.branches)
        )
    raise NoBranchMatches("no branch guard matches the subject features")


@dataclass(frozen=True)
class EntityForm:
    """Pre-inflected surface forms of one entity, keyed by requested features.

    ``surfaces`` maps a sorted tuple of (attribute, value) pairs to a surface
    string; the empty tuple keys the base form.
    """

    entity_id: str
    surfaces: dict
    gender: str | None = None
    number: str | None = None

    def __post_init__(self):
        if not self.surfaces:
            raise ValueError("EntityForm needs at least one surface form")

    @classmethod
    def simple(cls, entity_id: str, surface: str, gender: str | None = None,
               number: str | None = None) -> "EntityForm":
        return cls(entity_id=entity_id, surfaces={(): surface}, gender=gender,
                   number=number)

    def surface_for(self, features: FeatureSpec) -> str:
        key = features.items
        if key in self.surfaces:
            return self.surfaces[key]
        # the nominative is the citation form, so a base form satisfies it
        without_nom = tuple(kv for kv in key if kv != ("case", "Nom"))
        if without_nom != key and without_nom in self.surfaces:
            return self.surfaces[without_nom]
        raise MissingSurfaceForm(
            f"entity {self.entity_id!r} has no surface for {dict(key) or 'base form'}"
        )

    def features(self, slot: str = "X") -> FeatureSpec:
        attrs = {}
        if self.gender:
            attrs["gender"] = self.gender
        if self.number:
            attrs["number"] = self.number
        return FeatureSpec.of(slot, **attrs)


def instantiate(
    template: PromptTemplate,
    subject: EntityForm,
    mask_count: int,
    mask_text: str,
    language: str | None = None,
) -> str:
    """Render a cloze sentence: subject filled in, object slot masked out.

    The object slot becomes ``mask_count`` copies of ``mask_text``, joined by
    a space except for languages written without separators.
    """
    if mask_count < 1:
        raise ValueError("mask_count must be >= 1")
    lang = language if language is not None else template.language
    join = "" if lang in UNSPACED_LANGUAGES else " "
    inter = join
    subject_features = subject.features("X")

    def render(node) -> tuple[str, bool]:
        if isinstance(node, Literal):
            return node.text, True
        if isinstance(node, Alternation):
            branch = select_branch(node, subject_features)
            node = branch.content
            if isinstance(node, str):
                return node, False
        if node.slot == "Y":
            return join.join([mask_text] * mask_count), False
        return subject.surface_for(node.features), False

    pieces = []
    prev_literal = True
    for node in template.nodes:
        text, is_literal = render(node)
        if pieces and not is_literal and not prev_literal:
            pieces.append(inter)
        pieces.append(text)
        prev_literal = is_literal
    return "".join(pieces)
