import pytest
from hypothesis import given, settings, strategies as st

from clozeforge.prompts import (
    Alternation,
    AmbiguousFeatures,
    Branch,
    EntityForm,
    FeatureSpec,
    Literal,
    MissingSurfaceForm,
    NoBranchMatches,
    ParseError,
    SlotRef,
    instantiate,
    parse_template,
    select_branch,
    serialize_template,
)
from clozeforge.templates import available_templates, load_template, load_template_text

RU_BIRTH = "[X.Nom] [родился;X=MASC | родилась;X=FEM | родилось;X=NEUT] в [Y.Ess]."


def test_russian_birth_template_ast():
    t = parse_template(RU_BIRTH)
    assert len(t.nodes) == 5
    x, alt, lit, y, dot = t.nodes
    assert x == SlotRef.of("X", case="Nom")
    assert isinstance(alt, Alternation) and len(alt.branches) == 3
    assert [b.content for b in alt.branches] == ["родился", "родилась", "родилось"]
    assert [b.guard.attributes["gender"] for b in alt.branches] == ["MASC", "FEM", "NEUT"]
    assert lit == Literal(" в ")
    assert y == SlotRef.of("Y", case="Ess")
    assert dot == Literal(".")


def test_plain_english_template_ast():
    t = parse_template("[X] was founded in [Y].")
    assert t.nodes == (
        SlotRef.of("X"),
        Literal(" was founded in "),
        SlotRef.of("Y"),
        Literal("."),
    )


@pytest.mark.parametrize("bad", [
    "",
    "[X] is [Y",          # unclosed bracket
    "[X] is] [Y]",        # unmatched close
    "[X] [[Y]]",          # nested bracket
    "[X] and [X] like [Y]",   # duplicate slot chain
    "only [X] here",      # missing Y
    "[X.Fancy] in [Y]",   # unknown attribute value
    "[X.Nom.Gen] in [Y]", # duplicate attribute
    "[a;X=MASC | b;Y=SG] [X] [Y]",  # guards on different slots
    "[;X=MASC] [X] [Y]",  # empty branch
])
def test_parse_errors(bad):
    with pytest.raises(ParseError):
        parse_template(bad)


def test_parse_error_carries_byte_offset():
    with pytest.raises(ParseError) as err:
        parse_template("déjà [X] is ] [Y]")
    assert err.value.offset == len("déjà [X] is ".encode("utf-8"))


def test_round_trip_is_identity_on_asts():
    t = parse_template(RU_BIRTH)
    s = serialize_template(t)
    assert parse_template(s).nodes == t.nodes
    assert serialize_template(parse_template(s)) == s


def test_template_without_alternation_serializes_without_pipe():
    assert "|" not in serialize_template(parse_template("[X] was born in [Y]."))


def test_select_branch_by_gender():
    alt = parse_template(RU_BIRTH).nodes[1]
    assert select_branch(alt, FeatureSpec.of("X", gender="FEM")).content == "родилась"
    assert select_branch(alt, FeatureSpec.of("X", gender="MASC")).content == "родился"


def test_select_branch_unknown_gender_is_ambiguous():
    alt = parse_template(RU_BIRTH).nodes[1]
    with pytest.raises(AmbiguousFeatures):
        select_branch(alt, FeatureSpec.of("X"))


def test_select_branch_no_match():
    alt = Alternation((
        Branch("went", FeatureSpec.of("X", number="SG")),
    ) * 2)
    with pytest.raises(NoBranchMatches):
        select_branch(alt, FeatureSpec.of("X", number="PL"))


def test_select_branch_order_independent_with_exclusive_guards():
    alt = parse_template(RU_BIRTH).nodes[1]
    flipped = Alternation(tuple(reversed(alt.branches)))
    for gender in ("MASC", "FEM", "NEUT"):
        feats = FeatureSpec.of("X", gender=gender)
        assert select_branch(alt, feats).content == select_branch(flipped, feats).content


def test_instantiate_russian_feminine():
    t = parse_template(RU_BIRTH, language="ru")
    subject = EntityForm(
        entity_id="Q1", gender="FEM",
        surfaces={(("case", "Nom"),): "Мария", (("case", "Gen"),): "Марии"},
    )
    out = instantiate(t, subject, 1, "<mask>")
    assert out == "Мария родилась в <mask>."


def test_instantiate_mask_repetition_and_joining():
    t = parse_template("[X] was founded in [Y].", language="en")
    subject = EntityForm.simple("Q2", "Bloomberg L.P.")
    assert instantiate(t, subject, 2, "⟨mask⟩") == (
        "Bloomberg L.P. was founded in ⟨mask⟩ ⟨mask⟩."
    )
    t_zh = parse_template("[X]成立于[Y]。", language="zh")
    assert instantiate(t_zh, subject, 3, "[MASK]") == (
        "Bloomberg L.P.成立于[MASK][MASK][MASK]。"
    )


def test_instantiate_output_has_no_brackets():
    for relation, lang in available_templates():
        t = load_template(relation, lang)
        subject = EntityForm.simple("Q", "Entity", gender="FEM")
        out = instantiate(t, subject, 2, "M")
        assert "[" not in out and "]" not in out


def test_missing_surface_form():
    t = parse_template("[X.Gen] likes [Y].")
    with pytest.raises(MissingSurfaceForm):
        instantiate(t, EntityForm.simple("Q", "Anna"), 1, "<mask>")


def test_base_form_satisfies_nominative():
    t = parse_template("[X.Nom] likes [Y].")
    assert instantiate(t, EntityForm.simple("Q", "Anna"), 1, "_") == "Anna likes _."


def test_bundled_corpus_parses_and_round_trips():
    pairs = available_templates()
    assert len(pairs) == 46
    assert len({lang for _, lang in pairs}) == 23
    for relation, lang in pairs:
        t = load_template(relation, lang)
        canonical = serialize_template(t)
        assert parse_template(canonical).nodes == t.nodes


# --- grammar fuzz ----------------------------------------------------------

_SURFACE = st.text(
    alphabet=st.characters(blacklist_characters="[]|;=.,", blacklist_categories=("Cs",)),
    min_size=1, max_size=8,
)


@st.composite
def template_texts(draw):
    """Well-formed-ish template strings plus arbitrary mutations."""
    x = draw(st.sampled_from(["[X]", "[X.Nom]", "[X.Gen]",
                              "[a;X=MASC | b;X=FEM]", "[went;X=SG | go;X=PL]"]))
    y = draw(st.sampled_from(["[Y]", "[Y.Ess]", "[Y.Loc]"]))
    lit1 = draw(_SURFACE)
    lit2 = draw(_SURFACE)
    text = f"{x}{lit1}{y}{lit2}"
    if draw(st.booleans()):  # mutate: break it in arbitrary ways
        pos = draw(st.integers(min_value=0, max_value=len(text)))
        glitch = draw(st.sampled_from(["[", "]", "|", ";", "=", ".", "[Z]", "[X]"]))
        text = text[:pos] + glitch + text[pos:]
    return text


@given(template_texts())
@settings(max_examples=10_000, deadline=None)
def test_parser_never_panics(text):
    try:
        t = parse_template(text)
    except ParseError:
        return
    # whatever parsed must round-trip through the canonical form
    assert parse_template(serialize_template(t)).nodes == t.nodes
