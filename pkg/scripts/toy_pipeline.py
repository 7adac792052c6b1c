#!/usr/bin/env python3
"""End-to-end demo on a synthetic corpus: sample facts, decode, evaluate.

Builds a tiny world (companies founded in cities), writes the benchmark
files, runs the decode and eval subcommands against the toy table LM, and
prints the report.  Everything lands in a scratch directory and the whole
run is deterministic.

Usage: python scripts/toy_pipeline.py [--workdir DIR] [--seed N]
"""

import argparse
import json
import pathlib
import sys
import tempfile

from clozeforge.cli import main as cli_main

WORLD = [
    # (subject id, subject label, object id, object label, frequency)
    ("C1", "acme", "T1", "new york", 9),
    ("C2", "globex", "T2", "san francisco", 4),
    ("C3", "initech", "T3", "berlin", 2),
]

# two competing single-token continuations per subject, so the one-mask
# candidate is never certain and the multi-token gold can win the selection
FILLER = [
    "acme was founded in boston .",
    "acme was founded in denver .",
    "globex was founded in chicago .",
    "globex was founded in austin .",
    "initech was founded in munich .",
    "initech was founded in hamburg .",
]


def build_inputs(workdir: pathlib.Path) -> dict:
    corpus = []
    facts = []
    entities = []
    for subject_id, subject, object_id, obj, freq in WORLD:
        corpus.append(f"{subject} was founded in {obj} .")
        facts.append({"relation": "P740", "subject": subject_id,
                      "objects": [object_id], "frequency": freq})
        entities.append({"id": subject_id, "labels": {"en": subject}})
        entities.append({"id": object_id, "labels": {"en": obj}})
    corpus.extend(FILLER)

    paths = {name: workdir / name for name in
             ("corpus.txt", "facts.jsonl", "entities.jsonl", "results.jsonl")}
    paths["corpus.txt"].write_text("\n".join(corpus) + "\n", encoding="utf-8")
    with open(paths["facts.jsonl"], "w", encoding="utf-8") as fh:
        for row in facts:
            fh.write(json.dumps(row) + "\n")
    with open(paths["entities.jsonl"], "w", encoding="utf-8") as fh:
        for row in entities:
            fh.write(json.dumps(row) + "\n")

    tdir = workdir / "templates"
    tdir.mkdir(exist_ok=True)
    (tdir / "P740.en.tmpl").write_text("[X] was founded in [Y].\n", encoding="utf-8")
    paths["templates"] = tdir
    return paths


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default=None)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    workdir = pathlib.Path(args.workdir or tempfile.mkdtemp(prefix="clozeforge-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)
    paths = build_inputs(workdir)
    print(f"inputs in {workdir}")

    code = cli_main([
        "decode",
        "--backend", f"toy:--corpus {paths['corpus.txt']}",
        "--facts", str(paths["facts.jsonl"]),
        "--entities", str(paths["entities.jsonl"]),
        "--templates", str(paths["templates"]),
        "--output", str(paths["results.jsonl"]),
        "--max-masks", "3",
        "--init", "confidence",
        "--refine", "confidence",
        "--recompute",
    ])
    if code != 0:
        return code

    for line in paths["results.jsonl"].read_text().splitlines():
        row = json.loads(line)
        print(f"  {row['subject']}: predicted {row['prediction']!r} "
              f"with {row['mask_count']} mask(s)")

    return cli_main([
        "eval",
        "--results", str(paths["results.jsonl"]),
        "--entities", str(paths["entities.jsonl"]),
    ])


if __name__ == "__main__":
    sys.exit(main())
