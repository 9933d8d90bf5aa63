"""Command-line entry point (``tofner``).

Exit codes: 0 success, 1 usage error, 2 invalid input or configuration,
3 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import load_run_config, validate_inputs, write_config
from .convert import QueryTemplateSet, WordMap, mrc_normalize, ner_to_mrc, substitute_words
from .corpus import LabelSet, TaggedSentence, atomic_write_text, read_conll, read_jsonl, serialize_conll, strip_labels, write_jsonl
from .errors import TofError, TrainingError
from .evaluate import entity_f1, parse_paired_conll
from .model import load_checkpoint
from .pipeline import Mode, PipelineTrace, generate_pseudo_labels, resume, run_tof
from .synthetic import make_suite, write_suite

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_TRAINING = 0, 1, 2, 3

log = logging.getLogger("tofner")


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_sentences(path: Path, label_set: LabelSet) -> list[TaggedSentence]:
    if path.suffix.lower() == ".jsonl":
        data = read_jsonl(path)
        if data and not isinstance(data[0], TaggedSentence):
            raise TofError(f"{path}: expected tagged sentences, found MRC records")
        return data
    return read_conll(path, label_set)


def _write_sentences(path: Path, sentences) -> None:
    if path.suffix.lower() == ".jsonl":
        write_jsonl(path, sentences)
    else:
        atomic_write_text(path, serialize_conll(sentences))


# ---------------------------------------------------------------------------
# commands


def cmd_convert(args) -> int:
    src, dst = Path(args.input), Path(args.output)
    label_set = LabelSet.named(args.label_set)
    if args.kind == "ner2mrc":
        templates = QueryTemplateSet.load(args.templates) if args.templates else QueryTemplateSet.default()
        sents = _read_sentences(src, label_set)
        out = ner_to_mrc(sents, templates, label_set)
        write_jsonl(dst, out)
        print(f"ner2mrc: {len(sents)} sentences x {len(label_set.types)} types -> {len(out)} MRC records")
    elif args.kind == "normalize-mrc":
        raw = json.loads(src.read_text(encoding="utf-8"))
        out = mrc_normalize(raw, source=src.stem)
        write_jsonl(dst, out)
        answered = sum(1 for e in out if e.answers)
        print(f"normalize-mrc: {len(out)} examples ({answered} answerable)")
    elif args.kind == "strip-labels":
        sents = _read_sentences(src, label_set)
        _write_sentences(dst, strip_labels(sents))
        print(f"strip-labels: {len(sents)} sentences")
    elif args.kind == "substitute":
        if not args.map:
            raise _Usage("substitute needs --map")
        wmap = WordMap.load(args.map, lowercase_fallback=args.lowercase_fallback)
        sents = _read_sentences(src, label_set)
        _write_sentences(dst, substitute_words(sents, wmap))
        print(f"substitute: {len(sents)} sentences, {len(wmap.mapping)} map entries")
    return EXIT_OK


def _trace_summary(trace: PipelineTrace) -> str:
    lines = [f"{'#':>2} {'stage':<12} {'from':<16} {'to':<16} consumed"]
    for r in trace.records:
        lines.append(
            f"{r.index:>2} {r.stage:<12} {r.source_theta or '-':<16} {r.produced_theta or '-':<16} {', '.join(r.consumed)}"
        )
    lines.append("completed" if trace.completed else "incomplete")
    return "\n".join(lines)


def cmd_train(args) -> int:
    overrides = {"seed": args.seed, "mode": args.mode, "iterations": args.iterations, "out": args.out}
    cfg = load_run_config(args.config, overrides)
    if cfg.out is None:
        raise _Usage("no output directory: pass --out or set 'out' in the config")
    registry = validate_inputs(cfg)
    result = run_tof(registry, cfg.pipeline, cfg.out, cfg.load_templates(), cfg.load_word_map())
    print(_trace_summary(result.trace))
    print(f"run directory: {result.run_dir}")
    return EXIT_OK


def cmd_resume(args) -> int:
    result = resume(args.run_dir)
    print(_trace_summary(result.trace))
    return EXIT_OK


def cmd_predict(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    # input tags are discarded, so accept any entity types in the file
    sents = list(strip_labels(_read_sentences(Path(args.input), LabelSet.span())))
    preds = generate_pseudo_labels(state, sents, None, args.batch_size)
    _write_sentences(Path(args.output), preds)
    print(f"predict: {len(preds)} sentences tagged with {state.stage}")
    return EXIT_OK


def cmd_eval(args) -> int:
    label_set = LabelSet.named(args.label_set)
    if args.pred is None:
        path = Path(args.gold)
        gold, pred = parse_paired_conll(path.read_text(encoding="utf-8"), label_set, path.stem)
    else:
        gold = _read_sentences(Path(args.gold), label_set)
        pred = _read_sentences(Path(args.pred), label_set)
    score = entity_f1(gold, pred)
    print(score.table())
    print(json.dumps(score.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    out = Path(args.out)
    suite = make_suite(seed=args.seed, n_source=args.n_source, n_target=args.n_target)
    paths = write_suite(suite, out)
    config = {
        "corpora": {role: paths[role].name for role in ("s_ner", "s_ner_unlabeled", "t_ner_unlabeled", "t_mrc", "s_mrc")},
        "out": "run",
        "seed": args.seed,
        "mode": "TOF",
        "iterations": 1,
        # 300 source sentences give too few optimizer steps at batch 64
        "ner_batch_size": 16,
    }
    write_config(out / "config.yaml", config)
    print(f"make-synthetic: wrote {len(paths)} corpora and config.yaml to {out} (gold: {paths['t_test_gold'].name})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tofner", description="Zero-resource NER via staged MLM -> MRC -> NER fine-tuning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    c = sub.add_parser("convert", help="convert between corpus formats")
    c.add_argument("kind", choices=["ner2mrc", "normalize-mrc", "strip-labels", "substitute"])
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--templates", help="JSON object mapping entity type -> query (ner2mrc)")
    c.add_argument("--label-set", default="default", help="'default' (PER/LOC/ORG/MISC) or 'span'")
    c.add_argument("--map", help="two-column word map (substitute)")
    c.add_argument("--lowercase-fallback", action="store_true", help="retry lookups lowercased (substitute)")
    c.set_defaults(func=cmd_convert)

    t = sub.add_parser("train", help="run the staged schedule from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=[m.value for m in Mode])
    t.add_argument("--iterations", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("resume", help="continue an interrupted run directory")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_resume)

    pr = sub.add_parser("predict", help="tag sentences with a checkpoint that has an NER head")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    pr.add_argument("--batch-size", type=int, default=64)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="entity-level precision / recall / F1")
    e.add_argument("gold", help="gold file, or a single token/gold/pred column file when PRED is omitted")
    e.add_argument("pred", nargs="?")
    e.add_argument("--label-set", default="default")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("make-synthetic")
    # hidden: argparse has no supported way to drop a subcommand from the listing
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "make-synthetic"]
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=2019)
    m.add_argument("--n-source", type=int, default=300)
    m.add_argument("--n-target", type=int, default=200)
    m.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"tofner: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"tofner: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except TofError as exc:
        print(f"tofner: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        print(f"tofner: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
