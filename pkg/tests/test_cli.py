import json

import pytest

from clozeforge.cli import EXIT_CONFIG, EXIT_OK, build_provider, main

CORPUS = """\
acme was founded in new york .
acme was founded in berlin .
acme was founded in munich .
"""

TEMPLATE = "[X] was founded in [Y]."


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "corpus.txt").write_text(CORPUS, encoding="utf-8")
    tdir = tmp_path / "templates"
    tdir.mkdir()
    (tdir / "P740.en.tmpl").write_text(TEMPLATE + "\n", encoding="utf-8")
    with open(tmp_path / "facts.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"relation": "P740", "subject": "Q1",
                             "objects": ["Q60"], "frequency": 3}) + "\n")
    with open(tmp_path / "entities.jsonl", "w", encoding="utf-8") as fh:
        for row in (
            {"id": "Q1", "labels": {"en": "acme"}},
            {"id": "Q60", "labels": {"en": "new york"}, "aliases": {"en": ["NYC"]}},
        ):
            fh.write(json.dumps(row) + "\n")
    return tmp_path


def _decode_args(workdir, **extra):
    args = [
        "decode",
        "--backend", f"toy:--corpus {workdir / 'corpus.txt'}",
        "--facts", str(workdir / "facts.jsonl"),
        "--entities", str(workdir / "entities.jsonl"),
        "--templates", str(workdir / "templates"),
        "--lang", "en",
        "--output", str(workdir / "out.jsonl"),
        "--max-masks", "3",
    ]
    for key, value in extra.items():
        args.append(f"--{key.replace('_', '-')}")
        if value is not True:
            args.append(str(value))
    return args


def test_decode_writes_records_and_manifest(workdir):
    assert main(_decode_args(workdir)) == EXIT_OK
    rows = [json.loads(ln) for ln in
            (workdir / "out.jsonl").read_text().splitlines()]
    assert len(rows) == 1
    row = rows[0]
    assert row["prediction"] == "new york"
    assert row["mask_count"] == 2
    assert set(row["per_m_predictions"]) == {"1", "2"}
    manifest = json.loads((workdir / "out.jsonl.manifest.json").read_text())
    assert manifest["decoder"]["max_masks"] == 3
    assert manifest["backend"].startswith("toy:")


def test_decode_resumes_append_only(workdir):
    main(_decode_args(workdir))
    before = (workdir / "out.jsonl").read_text()
    assert main(_decode_args(workdir)) == EXIT_OK
    assert (workdir / "out.jsonl").read_text() == before


def test_decode_missing_template_is_config_error(workdir, capsys):
    (workdir / "templates" / "P740.en.tmpl").unlink()
    assert main(_decode_args(workdir)) == EXIT_CONFIG
    assert "P740" in capsys.readouterr().err


def test_decode_bad_backend_spec(workdir):
    args = _decode_args(workdir)
    args[args.index("--backend") + 1] = "warp:engine"
    assert main(args) == EXIT_CONFIG


def test_eval_reports_macro(workdir, capsys):
    main(_decode_args(workdir))
    capsys.readouterr()  # drop the decode progress line
    code = main([
        "eval",
        "--results", str(workdir / "out.jsonl"),
        "--entities", str(workdir / "entities.jsonl"),
        "--json",
    ])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["macro_average"] == 1.0
    assert report["per_relation_accuracy"]["P740"]["correct"] == 1


def test_eval_oracle_length_flag(workdir, capsys):
    main(_decode_args(workdir))
    code = main([
        "eval", "--results", str(workdir / "out.jsonl"),
        "--entities", str(workdir / "entities.jsonl"),
        "--oracle-length",
    ])
    assert code == EXIT_OK
    assert "macro average: 1.0" in capsys.readouterr().out


def test_sample_is_deterministic(workdir, capsys):
    with open(workdir / "many.jsonl", "w", encoding="utf-8") as fh:
        for i in range(20):
            fh.write(json.dumps({"relation": "P740", "subject": f"S{i}",
                                 "objects": ["Q60"], "frequency": i}) + "\n")
    args = ["sample", "--facts", str(workdir / "many.jsonl"),
            "--output", str(workdir / "s1.jsonl"), "--n", "5", "--seed", "7"]
    assert main(args) == EXIT_OK
    args[args.index(str(workdir / "s1.jsonl"))] = str(workdir / "s2.jsonl")
    assert main(args) == EXIT_OK
    assert (workdir / "s1.jsonl").read_bytes() == (workdir / "s2.jsonl").read_bytes()


def test_sample_per_relation(workdir):
    with open(workdir / "many.jsonl", "w", encoding="utf-8") as fh:
        for rel in ("P19", "P740"):
            for i in range(4):
                fh.write(json.dumps({"relation": rel, "subject": f"{rel}-S{i}",
                                     "objects": ["Q60"], "frequency": 1}) + "\n")
    assert main(["sample", "--facts", str(workdir / "many.jsonl"),
                 "--output", str(workdir / "pr.jsonl"),
                 "--per-relation", "2", "--seed", "1"]) == EXIT_OK
    rows = [json.loads(ln) for ln in (workdir / "pr.jsonl").read_text().splitlines()]
    by_rel = {}
    for row in rows:
        by_rel.setdefault(row["relation"], []).append(row)
    assert {rel: len(v) for rel, v in by_rel.items()} == {"P19": 2, "P740": 2}


def test_prompt_instantiates_bundled_template(capsys):
    code = main(["prompt", "--relation", "P740", "--lang", "es",
                 "--subject", "Bloomberg L.P.", "--gender", "FEM",
                 "--mask-count", "2"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "Bloomberg L.P. fue fundada en ⟨mask⟩ ⟨mask⟩." in out


def test_prompt_parse_error_is_config_error(workdir, capsys):
    bad = workdir / "bad.tmpl"
    bad.write_text("[X] is [Y\n", encoding="utf-8")
    assert main(["prompt", "--template-file", str(bad)]) == EXIT_CONFIG


def test_csgen_end_to_end(workdir, capsys):
    with open(workdir / "sentences.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "text": "Obama spoke in Berlin.",
            "mentions": [[0, 5, "QO"]],
            "lang": "en",
        }) + "\n")
    with open(workdir / "ents2.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"id": "QO", "labels": {"el": "Oμπάμα"}}) + "\n")
    code = main([
        "csgen", "--input", str(workdir / "sentences.jsonl"),
        "--entities", str(workdir / "ents2.jsonl"),
        "--output", str(workdir / "cs.jsonl"),
        "--target-lang", "el", "--p-switch", "1.0", "--seed", "3",
    ])
    assert code == EXIT_OK
    row = json.loads((workdir / "cs.jsonl").read_text().splitlines()[0])
    assert row["text"] == "Oμπάμα spoke in Berlin."


def test_build_provider_uses_cache_env(workdir, monkeypatch):
    cache = workdir / "cache"
    monkeypatch.setenv("CLOZE_FORGE_CACHE", str(cache))
    provider = build_provider(f"toy:--corpus {workdir / 'corpus.txt'}")
    ids = provider.tokenize("acme was")
    assert provider.tokenize("acme was") == ids
    assert cache.is_dir() and list(cache.glob("*.json"))
