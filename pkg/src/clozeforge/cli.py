"""Command-line surface: decode / eval / sample / prompt / csgen.

Exit codes: 0 success, 1 runtime failure, 2 configuration or data error.
Every decode run writes a manifest next to its results file with enough
detail to reproduce the run bit-for-bit against the toy backend.  Results
are append-only JSON lines, so an interrupted run resumes by skipping fact
ids that already have a line.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import datetime
import json
import os
import shlex
import sys

from . import bench, csdata
from .bridge import BridgeProvider, CachingProvider, open_session
from .core import MASK, ClozeForgeError, DecoderConfig, make_query
from .decoder import decode
from .prompts import (
    AmbiguousFeatures,
    EntityForm,
    MissingSurfaceForm,
    NoBranchMatches,
    ParseError,
    instantiate,
    parse_template,
    serialize_template,
)
from .templates import TemplateNotFound, load_template
from .toylm import TableLM

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

#: exceptions that mean "your inputs are wrong", not "the run broke"
_CONFIG_ERRORS = (
    TemplateNotFound,
    ParseError,
    bench.SchemaError,
    FileNotFoundError,
    ValueError,
)

# private-use character standing in for the mask while the rendered prompt
# is split into a prefix and a suffix around the masked span
_MASK_PLACEHOLDER = ""


class _CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def build_provider(spec: str):
    """"toy:<flags>" | "cmd:<command line>" | "tcp:<host:port>"."""
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise _CliError(f"malformed backend spec {spec!r}", EXIT_CONFIG)
    if kind == "toy":
        toy = argparse.ArgumentParser(prog="toy backend", add_help=False)
        toy.add_argument("--corpus", required=True)
        toy.add_argument("--alpha", type=float, default=0.0)
        try:
            opts = toy.parse_args(shlex.split(rest))
        except SystemExit:
            raise _CliError(f"bad toy backend flags {rest!r}", EXIT_CONFIG) from None
        provider = TableLM.from_file(opts.corpus, alpha=opts.alpha)
    elif kind in ("cmd", "tcp"):
        provider = BridgeProvider(open_session(spec))
    else:
        raise _CliError(f"unknown backend kind {kind!r}", EXIT_CONFIG)
    cache_dir = os.environ.get("CLOZE_FORGE_CACHE")
    if cache_dir:
        provider = CachingProvider(provider, cache_dir)
    return provider


def _fact_key(fact: bench.Fact) -> str:
    return f"{fact.relation_id}/{fact.subject_id}"


def _subject_form(record: bench.EntityRecord, language: str) -> EntityForm | None:
    label = record.labels.get(language)
    if label is None:
        return None
    return EntityForm.simple(record.entity_id, label,
                             gender=record.gender, number=record.number)


def _decode_one(fact, entities, template, provider, cfg, language):
    subject = entities.get(fact.subject_id)
    form = _subject_form(subject, language) if subject else None
    skip = lambda: bench.RunRecord(
        fact=fact, language=language, prediction_text="", mask_count_used=0,
        skipped=True,
    )
    if form is None:
        return skip()

    def query_builder(m):
        text = instantiate(template, form, m, _MASK_PLACEHOLDER, language=language)
        prefix, _, suffix = text.partition(_MASK_PLACEHOLDER)
        # strip the rest of the placeholder run (and its joiners) from the suffix
        suffix = suffix.lstrip(_MASK_PLACEHOLDER + " ")
        left = provider.tokenize(prefix)
        right = provider.tokenize(suffix)
        ids = left + [0] * m + right
        return make_query(ids, (len(left), len(left) + m - 1), language=language)

    try:
        result = decode(query_builder, provider, cfg)
    except (AmbiguousFeatures, NoBranchMatches, MissingSurfaceForm, ClozeForgeError):
        return skip()

    best = result.best
    per_m_scores = {m: c.score for m, c in result.per_m.items()}
    per_m_predictions = {m: provider.detokenize(c.filled) for m, c in result.per_m.items()}
    try:
        aliases = bench.gold_aliases(fact, entities, language)
    except ClozeForgeError:
        aliases = []

    def token_count(alias):
        try:
            return len(provider.tokenize(alias))
        except ClozeForgeError:
            return len(alias.split())

    single = any(token_count(a) == 1 for a in aliases)
    return bench.RunRecord(
        fact=fact, language=language,
        prediction_text=provider.detokenize(best.filled),
        mask_count_used=best.mask_count,
        per_m_scores=per_m_scores,
        per_m_predictions=per_m_predictions,
        gold_is_single_token=single,
    )


def _record_row(record: bench.RunRecord) -> dict:
    return {
        "relation": record.fact.relation_id,
        "subject": record.fact.subject_id,
        "objects": sorted(record.fact.object_ids),
        "frequency": record.fact.frequency,
        "language": record.language,
        "prediction": record.prediction_text,
        "mask_count": record.mask_count_used,
        "per_m_scores": {str(m): s for m, s in record.per_m_scores.items()},
        "per_m_predictions": {str(m): p for m, p in record.per_m_predictions.items()},
        "gold_is_single_token": record.gold_is_single_token,
        "skipped": record.skipped,
    }


def _row_record(row: dict) -> bench.RunRecord:
    fact = bench.Fact(
        relation_id=row["relation"], subject_id=row["subject"],
        object_ids=frozenset(row["objects"]), frequency=int(row.get("frequency", 0)),
    )
    return bench.RunRecord(
        fact=fact,
        language=row.get("language", "en"),
        prediction_text=row.get("prediction", ""),
        mask_count_used=int(row.get("mask_count", 0)),
        per_m_scores={int(m): s for m, s in row.get("per_m_scores", {}).items()},
        per_m_predictions={int(m): p for m, p in row.get("per_m_predictions", {}).items()},
        gold_is_single_token=bool(row.get("gold_is_single_token", False)),
        skipped=bool(row.get("skipped", False)),
    )


def cmd_decode(args) -> int:
    provider = build_provider(args.backend)
    facts = bench.load_facts(args.facts)
    entities = bench.load_entities(args.entities)
    cfg = DecoderConfig(
        max_masks=args.max_masks,
        max_iterations=args.max_iterations,
        beam=args.beam,
        init_strategy=args.init,
        refine_strategy=args.refine,
        length_norm=args.length_norm,
        recompute=args.recompute,
    )

    templates = {}
    for fact in facts:
        if fact.relation_id not in templates:
            try:
                templates[fact.relation_id] = (
                    parse_template(
                        open(os.path.join(args.templates, f"{fact.relation_id}.{args.lang}.tmpl"),
                             encoding="utf-8").read().rstrip("\n"),
                        relation_id=fact.relation_id, language=args.lang)
                    if args.templates
                    else load_template(fact.relation_id, args.lang)
                )
            except (FileNotFoundError, TemplateNotFound):
                raise _CliError(
                    f"no template for relation {fact.relation_id!r} "
                    f"in language {args.lang!r}", EXIT_CONFIG,
                ) from None

    done = set()
    if os.path.exists(args.output):
        with open(args.output, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    done.add(f"{row['relation']}/{row['subject']}")
    todo = [f for f in facts if _fact_key(f) not in done]

    work = lambda fact: _decode_one(
        fact, entities, templates[fact.relation_id], provider, cfg, args.lang
    )
    if args.jobs > 1 and getattr(provider, "thread_safe", False):
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(work, todo))
    else:
        records = [work(fact) for fact in todo]
    records.sort(key=lambda r: (r.fact.relation_id, r.fact.subject_id))

    with open(args.output, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(_record_row(record), ensure_ascii=False) + "\n")

    manifest = {
        "command": "decode",
        "backend": args.backend,
        "decoder": dataclasses.asdict(cfg),
        "facts": os.path.abspath(args.facts),
        "entities": os.path.abspath(args.entities),
        "templates": os.path.abspath(args.templates) if args.templates else "bundled",
        "language": args.lang,
        "output": os.path.abspath(args.output),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(args.output + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"decoded {len(records)} facts ({len(done)} resumed) -> {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    entities = bench.load_entities(args.entities)
    records = []
    with open(args.results, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(_row_record(json.loads(line)))
    report = bench.evaluate(records, entities, oracle_length=args.oracle_length)
    if args.json:
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    else:
        sys.stdout.write(report.to_tsv())
        print(f"split[{args.split}]\t\t\t{float(report.splits[args.split]):.6f}")
        print(f"macro average: {float(report.macro_average):.6f}")
        print(f"skipped: {report.skipped_count}")
    return EXIT_OK


def cmd_sample(args) -> int:
    facts = bench.load_facts(args.facts)
    if args.per_relation:
        by_relation: dict = {}
        for fact in facts:
            by_relation.setdefault(fact.relation_id, []).append(fact)
        sampled = []
        for relation in sorted(by_relation):
            sampled.extend(bench.sample_facts(by_relation[relation], args.per_relation, args.seed))
    else:
        sampled = bench.sample_facts(facts, args.n, args.seed)
    with open(args.output, "w", encoding="utf-8") as fh:
        for fact in sampled:
            fh.write(json.dumps({
                "relation": fact.relation_id, "subject": fact.subject_id,
                "objects": sorted(fact.object_ids), "frequency": fact.frequency,
            }, ensure_ascii=False) + "\n")
    print(f"sampled {len(sampled)} facts -> {args.output}")
    return EXIT_OK


def cmd_prompt(args) -> int:
    if args.template_file:
        text = open(args.template_file, encoding="utf-8").read().rstrip("\n")
        template = parse_template(text, relation_id=args.relation or "", language=args.lang)
    else:
        if not args.relation:
            raise _CliError("need --relation (or --template-file)", EXIT_CONFIG)
        template = load_template(args.relation, args.lang)
    print("canonical:", serialize_template(template))
    for i, node in enumerate(template.nodes):
        print(f"  node[{i}] = {node!r}")
    if args.subject:
        form = EntityForm.simple("cli-subject", args.subject,
                                 gender=args.gender, number=args.number)
        rendered = instantiate(template, form, args.mask_count, args.mask_text,
                               language=args.lang)
        print("instantiated:", rendered)
    return EXIT_OK


def cmd_csgen(args) -> int:
    sentences = csdata.read_sentences(args.input)
    entities = bench.load_entities(args.entities)
    aliases = csdata.uniform_alias_table(entities, args.target_lang)
    cfg = csdata.SwitchConfig(
        p_switch=args.p_switch,
        p_mask_word=args.p_mask_word,
        p_mask_mention=args.p_mask_mention,
        target_language=args.target_lang,
        seed=args.seed,
    )
    rows, stats = csdata.generate_corpus(sentences, aliases, cfg)
    csdata.write_rows(rows, args.output)
    print(
        f"{stats['total']} sentences: {stats['switched']} switched, "
        f"{stats['kept']} kept, {stats['unswitchable']} unswitchable -> {args.output}"
    )
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clozeforge",
        description="Multi-token cloze filling with masked language models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="decode a facts file into predictions")
    p.add_argument("--backend", required=True,
                   help='"toy:--corpus f [--alpha a]" | "cmd:<argv>" | "tcp:host:port"')
    p.add_argument("--facts", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--templates", default=None,
                   help="template directory (default: bundled corpus)")
    p.add_argument("--lang", default="en")
    p.add_argument("--output", required=True)
    p.add_argument("--max-masks", type=int, default=5)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--init", default="independent",
                   choices=("independent", "order", "confidence"))
    p.add_argument("--refine", default="none", choices=("none", "order", "confidence"))
    p.add_argument("--length-norm", action="store_true")
    p.add_argument("--recompute", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score a decode results file")
    p.add_argument("--results", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--oracle-length", action="store_true")
    p.add_argument("--split", default="all", choices=("all", "single", "multi"))
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw facts proportionally to frequency")
    p.add_argument("--facts", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--per-relation", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("prompt", help="parse and instantiate a template")
    p.add_argument("--template-file", default=None)
    p.add_argument("--relation", default=None)
    p.add_argument("--lang", default="en")
    p.add_argument("--subject", default=None)
    p.add_argument("--gender", default=None, choices=(None, "MASC", "FEM", "NEUT"))
    p.add_argument("--number", default=None, choices=(None, "SG", "PL"))
    p.add_argument("--mask-count", type=int, default=1)
    p.add_argument("--mask-text", default="⟨mask⟩")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("csgen", help="generate a code-switched training corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--target-lang", required=True)
    p.add_argument("--p-switch", type=float, default=0.30)
    p.add_argument("--p-mask-word", type=float, default=0.15)
    p.add_argument("--p-mask-mention", type=float, default=0.50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_csgen)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ClozeForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
