"""Access to the bundled template corpus (one ``<relation>.<lang>.tmpl`` per pair)."""

from __future__ import annotations

from importlib import resources

from .core import ClozeForgeError
from .prompts import PromptTemplate, parse_template

LANGUAGES = (
    "bn", "ceb", "el", "en", "es", "fr", "he", "hu", "ilo", "ja", "ko", "mg",
    "mr", "nl", "pa", "ru", "sw", "tl", "tr", "vi", "war", "yo", "zh",
)


class TemplateNotFound(ClozeForgeError):
    pass


def _root():
    return resources.files(__package__) / "templates"


def available_templates() -> list[tuple[str, str]]:
    """Sorted (relation_id, language) pairs present in the bundled corpus."""
    out = []
    for entry in _root().iterdir():
        name = entry.name
        if name.endswith(".tmpl"):
            relation, _, lang = name[:-len(".tmpl")].rpartition(".")
            out.append((relation, lang))
    return sorted(out)


def load_template_text(relation_id: str, language: str) -> str:
    entry = _root() / f"{relation_id}.{language}.tmpl"
    try:
        return entry.read_text(encoding="utf-8").rstrip("\n")
    except FileNotFoundError:
        raise TemplateNotFound(
            f"no bundled template for relation {relation_id!r} in {language!r}"
        ) from None


def load_template(relation_id: str, language: str) -> PromptTemplate:
    text = load_template_text(relation_id, language)
    return parse_template(text, relation_id=relation_id, language=language)
