"""Smoke test over a real pretrained multilingual masked LM.

Skipped (with the reason printed) when no model can be loaded, e.g. in an
offline environment with an empty model cache.  When a model is available:
50 single-token English facts decode in bounded time with accuracy
strictly above zero, and tokenization round-trips multilingual text up to
the tokenizer's own normalization.
"""

import math
import time

import pytest

from lm_bridge_server.models import ModelLoadError, load_model

CANDIDATE_MODELS = [
    "bert-base-multilingual-cased",
    "distilbert-base-multilingual-cased",
    "xlm-roberta-base",
]

# 50 country-capital facts; every capital is one word, and most tokenizers
# keep these city names to a single piece
CAPITALS = [
    ("France", "Paris"), ("Italy", "Rome"), ("Spain", "Madrid"),
    ("Germany", "Berlin"), ("Russia", "Moscow"), ("England", "London"),
    ("Japan", "Tokyo"), ("China", "Beijing"), ("Egypt", "Cairo"),
    ("Greece", "Athens"), ("Austria", "Vienna"), ("Ireland", "Dublin"),
    ("Portugal", "Lisbon"), ("Norway", "Oslo"), ("Sweden", "Stockholm"),
    ("Finland", "Helsinki"), ("Poland", "Warsaw"), ("Ukraine", "Kiev"),
    ("Turkey", "Ankara"), ("Iran", "Tehran"), ("Iraq", "Baghdad"),
    ("India", "Delhi"), ("Thailand", "Bangkok"), ("Vietnam", "Hanoi"),
    ("Indonesia", "Jakarta"), ("Philippines", "Manila"), ("Cuba", "Havana"),
    ("Peru", "Lima"), ("Chile", "Santiago"), ("Argentina", "Buenos"),
    ("Canada", "Ottawa"), ("Kenya", "Nairobi"), ("Ethiopia", "Addis"),
    ("Syria", "Damascus"), ("Lebanon", "Beirut"), ("Jordan", "Amman"),
    ("Afghanistan", "Kabul"), ("Pakistan", "Islamabad"), ("Nepal", "Kathmandu"),
    ("Belgium", "Brussels"), ("Netherlands", "Amsterdam"), ("Denmark", "Copenhagen"),
    ("Hungary", "Budapest"), ("Romania", "Bucharest"), ("Bulgaria", "Sofia"),
    ("Serbia", "Belgrade"), ("Croatia", "Zagreb"), ("Scotland", "Edinburgh"),
    ("Iceland", "Reykjavik"), ("Morocco", "Rabat"),
]

MULTILINGUAL = [
    "New York", "Nueva York", "Нью-Йорк", "ニューヨーク", "纽约",
    "Νέα Υόρκη", "न्यूयॉर्क", "뉴욕", "straße", "Τζακάρτα",
]


@pytest.fixture(scope="module")
def model():
    errors = []
    for name in CANDIDATE_MODELS:
        try:
            return load_model(name)
        except ModelLoadError as exc:
            errors.append(f"{name}: {exc}")
    pytest.skip("no pretrained masked LM reachable:\n" + "\n".join(errors))


def test_detokenize_tokenize_round_trip(model):
    for text in MULTILINGUAL:
        normalized = model.detokenize(model.tokenize(text))
        assert model.detokenize(model.tokenize(normalized)) == normalized


def test_fifty_single_token_facts(model):
    assert len(CAPITALS) == 50
    started = time.monotonic()
    correct = 0
    for country, capital in CAPITALS:
        gold = model.tokenize(capital)
        if len(gold) != 1:
            continue  # multi-piece under this tokenizer; not a single-token fact
        prompt = f"The capital of {country} is {'[MASK]'} ."
        left = model.tokenize(f"The capital of {country} is")
        right = model.tokenize(".")
        tokens = left + [model.mask_id] + right
        (dist,) = model.fill(tokens, [len(left)], top_k=1)
        predicted = model.detokenize([dist[0][0]]).strip()
        if predicted.casefold() == capital.casefold():
            correct += 1
        assert dist[0][1] <= 0.0 and math.isfinite(dist[0][1])
    elapsed = time.monotonic() - started
    assert elapsed < 600, f"smoke run took {elapsed:.0f}s"
    assert correct > 0, "a pretrained multilingual LM should get at least one capital"
