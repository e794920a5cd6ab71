"""Command-line pipeline: ingest, train, tag, match, normalize, eval, patterns.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
files), 3 internal error. Diagnostics go to stderr; data outputs go to
files; `--json` prints a machine-readable summary of the run to stdout
(schema in docs/cli_summary.schema.json).
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import corpus, crf, evalkit, lexicon, network, normalizer, numcore, patterns, trainer
from .errors import ConfigError, DataFormatError, NumericsError

logger = logging.getLogger("trialparse")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of calling sys.exit(2)."""

    def error(self, message):
        raise UsageError(message)


def _emit(summary: dict, as_json: bool) -> None:
    quiet = summary.pop("_quiet", False)
    if as_json:
        print(json.dumps(summary, ensure_ascii=False, sort_keys=True))
    elif not quiet:
        for key, value in summary.items():
            if key != "command":
                print(f"{key}: {value}")


# --- subcommands -------------------------------------------------------------


def _cmd_ingest(args) -> dict:
    records = corpus.load_trials(args.trials)
    criteria: list[corpus.Criterion] = []
    excluded = 0
    for record in records:
        if record.excluded:
            excluded += 1
            logger.warning("excluding trial %s: %s", record.trial_id, record.exclusion_reason)
            continue
        criteria.extend(corpus.segment_criteria(record))
    corpus.write_criteria_jsonl(criteria, args.out)
    return {
        "command": "ingest",
        "trials": len(records),
        "excluded": excluded,
        "criteria": len(criteria),
        "out": str(args.out),
    }


def _load_train_config(path) -> trainer.TrainConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"config is not valid JSON ({exc.msg})", path=str(path)) from exc
    if not isinstance(data, dict):
        raise DataFormatError("config must be a JSON object", path=str(path))
    return trainer.TrainConfig.from_dict(data)


def _cmd_train(args) -> dict:
    config = _load_train_config(args.config) if args.config else trainer.TrainConfig()
    train_set = corpus.read_conll(args.data, trial_prefix="train")
    dev_set = corpus.read_conll(args.dev, trial_prefix="dev")
    tag_set = corpus.TagSet.load(args.tagset) if args.tagset else None
    checkpoint, history = trainer.train(config, train_set, dev_set, tag_set=tag_set)
    trainer.save_checkpoint(checkpoint, args.out)
    best = max(history, key=lambda h: (h["dev_accuracy"], -h["epoch"]))
    return {
        "command": "train",
        "train_sequences": len(train_set),
        "dev_sequences": len(dev_set),
        "epochs": len(history),
        "best_epoch": best["epoch"],
        "best_dev_accuracy": round(best["dev_accuracy"], 6),
        "final_dev_loss": round(history[-1]["dev_loss"], 6),
        "out": str(args.out),
    }


def _tag_one(checkpoint: trainer.Checkpoint, criterion: corpus.Criterion, min_confidence: float, mode: str):
    config = checkpoint.config
    tokens = criterion.tokens[: config.max_len]
    if len(criterion.tokens) > config.max_len:
        logger.warning("criterion %s truncated to %d tokens", criterion.ref, config.max_len)
    clipped = corpus.Criterion(
        trial_id=criterion.trial_id,
        arm=criterion.arm,
        index=criterion.index,
        text=criterion.text,
        tokens=list(tokens),
    )
    ids = np.array([checkpoint.vocab.index(t.surface) for t in clipped.tokens], dtype=np.intp)
    emission, _ = network.forward_pass(
        checkpoint.params,
        ids,
        None,
        config.attention_variant,
        score_inputs=config.score_inputs,
        train=False,
    )
    path, _ = crf.viterbi_decode(emission, checkpoint.params.transitions)
    tagged = corpus.TaggedSequence(
        criterion=clipped, tags=[checkpoint.tag_set.tag_name(i) for i in path]
    )
    marginals = crf.token_marginals(emission, checkpoint.params.transitions)
    mentions = []
    for mention in corpus.decode_bio(tagged):
        confidence = crf.entity_confidence(marginals, mention, checkpoint.tag_set, mode=mode)
        if confidence >= min_confidence:
            mentions.append(
                corpus.EntityMention(
                    criterion_ref=mention.criterion_ref,
                    entity_type=mention.entity_type,
                    first=mention.first,
                    last=mention.last,
                    surface=mention.surface,
                    confidence=confidence,
                )
            )
    return mentions


def _map_criteria(worker, criteria, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, criteria))  # map preserves input order
    return [worker(c) for c in criteria]


def _cmd_tag(args) -> dict:
    if not 0.0 <= args.min_confidence <= 1.0:
        raise UsageError(f"--min-confidence must be in [0, 1], got {args.min_confidence}")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    checkpoint = trainer.load_checkpoint(args.model)
    criteria = corpus.read_criteria_jsonl(args.infile)
    per_criterion = _map_criteria(
        lambda c: _tag_one(checkpoint, c, args.min_confidence, args.confidence_mode),
        criteria,
        args.threads,
    )
    mentions = [m for batch in per_criterion for m in batch]
    evalkit.write_mentions_jsonl(mentions, args.out)
    return {
        "command": "tag",
        "criteria": len(criteria),
        "mentions": len(mentions),
        "min_confidence": args.min_confidence,
        "out": str(args.out),
    }


def _cmd_match(args) -> dict:
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    lex = lexicon.load_lexicon(args.lexicon)
    criteria = corpus.read_criteria_jsonl(args.infile)
    per_criterion = _map_criteria(lambda c: lexicon.match_entities(c, lex), criteria, args.threads)
    mentions = [m for batch in per_criterion for m in batch]
    evalkit.write_mentions_jsonl(mentions, args.out)
    return {
        "command": "match",
        "criteria": len(criteria),
        "mentions": len(mentions),
        "concepts": len(lex),
        "out": str(args.out),
    }


def _cmd_normalize(args) -> dict:
    if not 0.0 <= args.threshold <= 1.0:
        raise UsageError(f"--threshold must be in [0, 1], got {args.threshold}")
    lex = lexicon.load_lexicon(args.lexicon)
    rules = normalizer.load_rules(args.rules)
    normalizer.validate_rules(rules, lex, args.threshold)
    mentions = evalkit.read_mentions_jsonl(args.infile)
    pairs = normalizer.normalize_mentions(mentions, lex, rules, args.threshold)
    normalizer.write_variables_jsonl(pairs, args.out)
    sources = {name: 0 for name in (normalizer.SOURCE_LEXICON, normalizer.SOURCE_RULE, normalizer.SOURCE_PASSTHROUGH)}
    for _, variable in pairs:
        sources[variable.source] += 1
    return {
        "command": "normalize",
        "mentions": len(mentions),
        "lexicon_link": sources[normalizer.SOURCE_LEXICON],
        "rule": sources[normalizer.SOURCE_RULE],
        "passthrough": sources[normalizer.SOURCE_PASSTHROUGH],
        "out": str(args.out),
    }


def _cmd_eval(args) -> dict:
    gold = evalkit.read_mentions_jsonl(args.gold)
    pred = evalkit.read_mentions_jsonl(args.pred)
    report = evalkit.entity_prf(pred, gold)
    summary = {"command": "eval", "_quiet": True, **report.to_dict()}
    if not args.json:
        print(f"precision: {report.precision:.3f} ({report.true_positives}/{report.predicted_count})")
        print(f"recall: {report.recall:.3f} ({report.true_positives}/{report.gold_count})")
        print(f"f1: {report.f1:.3f}")
        for name, sub in sorted(report.per_type.items()):
            print(f"  {name}: P={sub.precision:.3f} R={sub.recall:.3f} F1={sub.f1:.3f}")
    return summary


def _cmd_patterns(args) -> dict:
    if args.min_count < 0:
        raise UsageError("--min-count must be >= 0")
    variables = normalizer.read_variables_jsonl(args.infile)
    trials = corpus.load_trials(args.trials)
    table = patterns.aggregate(variables, trials, row_mode=args.row_mode, min_count=args.min_count)
    table.write_csv(args.out)
    return {
        "command": "patterns",
        "rows": len(table.row_keys),
        "columns": len(table.columns),
        "row_mode": args.row_mode,
        "min_count": args.min_count,
        "out": str(args.out),
    }


def _cmd_gradcheck(args) -> dict:
    """Developer verification: finite-difference checks on a small model."""
    rng = np.random.default_rng(args.seed)
    n_tokens, n_types = 14, 3
    results: dict[str, float] = {}
    tolerance = 1e-4
    ids = rng.integers(1, n_tokens, size=6)
    gold = rng.integers(0, 2 * n_types + 1, size=6)
    for variant in network.ATTENTION_VARIANTS:
        params = network.init_params(
            n_tokens, 2 * n_types + 1, d_e=8, d_h=6, d_a=5, d_z=12, d_m=9, variant=variant, rng=rng
        )

        def loss_for(name, arr, params=params, variant=variant):
            def f(values):
                probe = params.copy()
                probe.set_array(name, values)
                emission, _ = network.forward_pass(probe, ids, None, variant)
                value, _, _ = crf.nll_loss(emission, probe.transitions, gold)
                return value

            return f

        emission, cache = network.forward_pass(params, ids, None, variant)
        _, d_p, d_t = crf.nll_loss(emission, params.transitions, gold)
        grads = network.network_backward(cache, d_p)
        grads["transitions"] = d_t
        for name, arr in params.arrays().items():
            if name == "transitions":
                coords = np.flatnonzero(crf.transition_update_mask(params.n_tags).ravel())
            else:
                size = arr.size
                coords = rng.choice(size, size=min(20, size), replace=False)
            err = numcore.grad_check(loss_for(name, arr), arr, grads[name], coords=coords)
            results[f"{variant}.{name}"] = err
    worst = max(results.values())
    summary = {
        "command": "gradcheck",
        "seed": args.seed,
        "checked_groups": len(results),
        "max_relative_error": worst,
        "tolerance": tolerance,
        "ok": bool(worst < tolerance),
    }
    if not summary["ok"]:
        failing = {k: v for k, v in results.items() if v >= tolerance}
        raise NumericsError(f"gradient check failed: {failing}")
    return summary


# --- argument wiring ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trialparse", description=__doc__.splitlines()[0])
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="print a JSON run summary to stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="segment trials.jsonl into criteria.jsonl", parents=[common])
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="train the tagger on CoNLL data", parents=[common])
    p.add_argument("--data", required=True, help="training CoNLL file")
    p.add_argument("--dev", required=True, help="development CoNLL file")
    p.add_argument("--config", help="JSON training config (defaults when omitted)")
    p.add_argument("--tagset", help="entity-type file (derived from data when omitted)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("tag", help="tag criteria.jsonl with a trained model", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-confidence", type=float, default=0.7)
    p.add_argument("--confidence-mode", choices=("min", "mean"), default="min")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_tag)

    p = sub.add_parser("match", help="tag criteria.jsonl with the lexicon baseline", parents=[common])
    p.add_argument("--lexicon", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("normalize", help="normalize mentions into design variables", parents=[common])
    p.add_argument("--lexicon", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=normalizer.DEFAULT_FUZZY_THRESHOLD)
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("eval", help="entity-level P/R/F1 of predictions vs gold", parents=[common])
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("patterns", help="aggregate variables into a frequency table", parents=[common])
    p.add_argument("--in", dest="infile", required=True, help="variables JSONL")
    p.add_argument("--trials", required=True, help="trials JSONL for condition labels")
    p.add_argument("--row-mode", choices=patterns.ROW_MODES, default="type")
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--out", required=True, help="heat-map CSV")
    p.set_defaults(func=_cmd_patterns)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification", parents=[common])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)
        summary = args.func(args)
        _emit(summary, args.json)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ConfigError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(f"internal error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
