"""Command-line entry point: ``relaxsum <subcommand> [options]``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error
(unreadable or malformed input, including a corpus with skipped lines).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from relaxsum import __version__
from relaxsum.bootstrap import DEFAULT_RESAMPLES, bootstrap_test, permutation_test
from relaxsum.control_variate import ControlVariate
from relaxsum.corpus import CorpusError, build_vocab, generate_synthetic_corpus, load_corpus, save_corpus
from relaxsum.coverage_reward import DocumentSet, RewardConfig
from relaxsum.estimators import (
    ENUMERATION_BUDGET, EnumerationBudgetError, estimator_statistics, exact_gradient_oracle, fit_control_variate,
)
from relaxsum.gumbel import TemperatureParam
from relaxsum.text_metrics import Origin, split_words, tokenize
from relaxsum.toy import toy_problem
from relaxsum.trainer import (
    ConfigError, TrainConfig, evaluate, finetune_rl, load_model, metrics_row, prepare, pretrain_nll, save_model,
    write_metrics, write_positions, write_steplog,
)
from relaxsum.vocab import Vocab

log = logging.getLogger("relaxsum")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", type=Path, help="training config (INI, [train] section)"
                   + (" [required]" if config_required else ""))
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relaxsum", description="Coverage-reward RL fine-tuning laboratory.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="write a synthetic train/valid corpus")
    _common(p)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-valid", type=int, default=50)

    p = sub.add_parser("pretrain", help="NLL pretraining with validation-based selection")
    _common(p, config_required=True)
    p.add_argument("--train", type=Path, help="train corpus (default: config train_path)")
    p.add_argument("--valid", type=Path, help="validation corpus (default: config valid_path)")

    p = sub.add_parser("finetune", help="few-shot RL fine-tuning from a checkpoint")
    _common(p, config_required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--train", type=Path)

    p = sub.add_parser("eval", help="greedy-decode a corpus and report metrics by document position")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--system", default="model")

    p = sub.add_parser("score", help="metrics for prediction/reference/document files")
    _common(p)
    p.add_argument("--pred", type=Path, required=True, help="one prediction per line")
    p.add_argument("--ref", type=Path, required=True, help="one reference per line")
    p.add_argument("--docs", type=Path, required=True, help="JSONL with a 'documents' array per line")
    p.add_argument("--system", default="system")
    p.add_argument("--beta", type=float, default=1.0)

    p = sub.add_parser("estimate", help="bias/variance of REINFORCE and RELAX on the toy problem")
    _common(p)
    p.add_argument("--oracle", action="store_true", help="compare against exact enumeration")
    p.add_argument("--vocab-size", type=int, default=3)
    p.add_argument("--max-len", type=int, default=2)
    p.add_argument("--draws", type=int, default=20000)
    p.add_argument("--fit-steps", type=int, default=0, help="control-variate fitting steps before measuring")

    p = sub.add_parser("bootstrap", help="paired bootstrap test on two score files")
    _common(p)
    p.add_argument("--a", type=Path, required=True, help="scores of system A, one per line")
    p.add_argument("--b", type=Path, required=True, help="scores of system B, one per line")
    p.add_argument("--resamples", type=int, default=DEFAULT_RESAMPLES)
    return parser


# -- helpers -----------------------------------------------------------------------


def _config(args, required: bool) -> TrainConfig:
    if args.config is None:
        if required:
            raise UsageError(f"relaxsum {args.command}: the --config flag is required")
        cfg = TrainConfig()
    else:
        try:
            cfg = TrainConfig.from_file(args.config)
        except ConfigError as exc:
            raise DataError(str(exc)) from None
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


class _Corpora:
    """Tracks whether any corpus load skipped lines."""

    def __init__(self):
        self.partial = False

    def load(self, path):
        if path is None or str(path) == "":
            raise UsageError("a corpus path is required (flag or config)")
        try:
            recs = load_corpus(path)
        except OSError as exc:
            raise DataError(f"cannot read corpus: {exc}") from None
        except CorpusError as exc:
            raise DataError(str(exc)) from None
        for lineno, msg in recs.errors:
            print(f"{path}:{lineno}: skipped: {msg}", file=sys.stderr)
        self.partial |= recs.partial
        return recs


def _read_lines(path: Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _read_scores(path: Path) -> np.ndarray:
    vals = []
    for i, line in enumerate(_read_lines(path), start=1):
        if line.strip():
            try:
                vals.append(float(line))
            except ValueError:
                raise DataError(f"{path}:{i}: not a number: {line!r}") from None
    return np.array(vals)


# -- subcommands -------------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    cfg = _config(args, required=False)
    seed = args.seed if args.seed is not None else cfg.corpus_seed
    if args.n_train < 1 or args.n_valid < 1:
        raise UsageError("--n-train and --n-valid must be >= 1")
    recs = generate_synthetic_corpus(args.n_train + args.n_valid, seed=seed)
    save_corpus(recs[:args.n_train], args.out / "train.jsonl")
    save_corpus(recs[args.n_train:], args.out / "valid.jsonl")
    return 0


def cmd_pretrain(args, corpora: _Corpora) -> int:
    cfg = _config(args, required=True)
    train = corpora.load(args.train or cfg.train_path)
    valid = corpora.load(args.valid or cfg.valid_path)
    vocab = build_vocab(list(train) + list(valid))
    res = pretrain_nll(cfg, prepare(train, vocab, cfg), prepare(valid, vocab, cfg), vocab_size=len(vocab))
    write_steplog(res.logs, args.out / "pretrain_log.csv")
    save_model(args.out / "nll.json", res.policy, vocab)
    with open(args.out / "validation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "mean_rouge"))
        w.writerows((s, repr(v)) for s, v in res.history)
    return 0


def _load_checkpoint(path):
    try:
        return load_model(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from None


def cmd_finetune(args, corpora: _Corpora) -> int:
    cfg = _config(args, required=True)
    policy, vocab, _, _ = _load_checkpoint(args.checkpoint)
    train = corpora.load(args.train or cfg.train_path)
    res = finetune_rl(cfg, prepare(train, vocab, cfg), policy)
    write_steplog(res.logs, args.out / "steplog.csv")
    save_model(args.out / "finetuned.json", res.policy, vocab, res.cv, res.temp)
    return 0


def cmd_eval(args, corpora: _Corpora) -> int:
    cfg = _config(args, required=False)
    policy, vocab, _, _ = _load_checkpoint(args.checkpoint)
    data = corpora.load(args.data)
    examples = prepare(data, vocab, cfg)
    res = evaluate(policy, sorted(examples, key=lambda e: e.id), cfg.max_output_len, args.system, cfg.reward_cfg)
    write_metrics(res.rows, args.out / "metrics.csv")
    write_positions(res, args.out / "positions.csv")
    with open(args.out / "predictions.jsonl", "w") as fh:
        for row, pred in zip(res.rows, res.predictions):
            fh.write(json.dumps({"id": row.record_id, "prediction": vocab.decode(pred)}) + "\n")
    print(f"R1 {res.r1:.4f}  R2 {res.r2:.4f}  RL {res.rl:.4f}  mean EFC {res.mean_efc:.4f}")
    return 0


def cmd_score(args) -> int:
    preds, refs = _read_lines(args.pred), _read_lines(args.ref)
    docs_lines = [ln for ln in _read_lines(args.docs) if ln.strip()]
    if not (len(preds) == len(refs) == len(docs_lines)):
        raise DataError(f"line counts differ: pred {len(preds)}, ref {len(refs)}, docs {len(docs_lines)}")
    doc_texts = []
    for i, line in enumerate(docs_lines, start=1):
        try:
            obj = json.loads(line)
            docs = obj["documents"] if isinstance(obj, dict) else obj
            if not isinstance(docs, list) or not all(isinstance(d, str) for d in docs):
                raise ValueError("'documents' must be an array of strings")
        except (ValueError, KeyError) as exc:
            raise DataError(f"{args.docs}:{i}: {exc}") from None
        doc_texts.append(docs)
    vocab = Vocab((w for texts in (preds, refs, *doc_texts) for t in texts for w in split_words(t)), frozen=True)
    cfg = RewardConfig(beta=args.beta)
    rows = []
    for i, (p, r, docs) in enumerate(zip(preds, refs, doc_texts), start=1):
        ref = tokenize(r, vocab, Origin.REFERENCE).tokens
        toks = [tokenize(d, vocab, Origin.DOCUMENT).tokens for d in docs]
        toks = [t for t in toks if t]
        if not ref or not toks:
            raise DataError(f"record {i}: empty reference or no nonempty documents")
        rows.append(metrics_row(args.system, str(i), tokenize(p, vocab, Origin.PREDICTION).tokens,
                                ref, DocumentSet(tuple(toks)), cfg))
    write_metrics(rows, args.out / "metrics.csv")
    return 0


def cmd_estimate(args) -> int:
    seed = 3 if args.seed is None else args.seed
    if args.vocab_size < 2 or args.max_len < 1 or args.draws < 2:
        raise UsageError("need --vocab-size >= 2, --max-len >= 1, --draws >= 2")
    prob = toy_problem(args.vocab_size, args.max_len, seed=seed)
    oracle = None
    if args.oracle:
        try:
            oracle = exact_gradient_oracle(prob.policy, prob.x, prob.ref, prob.docs, prob.reward_cfg, prob.max_len)
        except EnumerationBudgetError as exc:
            raise DataError(f"oracle refused: {exc} (enumeration budget {ENUMERATION_BUDGET})") from None
    task = prob.task()
    cv = ControlVariate(prob.policy.V, 16, prob.max_len, rng=np.random.default_rng(seed + 1))
    temp = TemperatureParam()
    if args.fit_steps:
        fit_control_variate(prob.policy, cv, temp, task, steps=args.fit_steps, seed=seed)
    grad = None if oracle is None else oracle.gradient
    base = 10 ** 7
    stats = {name: estimator_statistics(name, args.draws, prob.policy, task, rng_base=base, cv=cv, temp=temp,
                                        oracle=grad) for name in ("REINFORCE", "RELAX")}
    with open(args.out / "estimate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("estimator", "coordinate", "mean", "variance", "se", "oracle", "z"))
        for name, s in stats.items():
            for i in range(prob.policy.size):
                orc = "" if grad is None else repr(float(-grad[i]))
                z = "" if grad is None or s.se[i] == 0 else repr(float(s.bias[i] / s.se[i]))
                w.writerow((name, i, repr(float(s.mean[i])), repr(float(s.variance[i])), repr(float(s.se[i])), orc, z))
    for name, s in stats.items():
        msg = f"{name}: total variance {s.variance.sum():.4g}"
        if grad is not None:
            z = np.abs(s.bias) / np.where(s.se > 0, s.se, np.inf)
            msg += f", max |bias|/se {z.max():.2f}"
        print(msg)
    return 0


def cmd_bootstrap(args) -> int:
    a, b = _read_scores(args.a), _read_scores(args.b)
    seed = 0 if args.seed is None else args.seed
    try:
        p_boot = bootstrap_test(a, b, args.resamples, rng=seed)
        p_perm = permutation_test(a, b, args.resamples, rng=seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    with open(args.out / "bootstrap.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("n", "mean_a", "mean_b", "diff", "resamples", "p_bootstrap", "p_permutation"))
        w.writerow((a.size, repr(float(a.mean())), repr(float(b.mean())), repr(float(a.mean() - b.mean())), args.resamples,
                    repr(p_boot), repr(p_perm)))
    print(f"mean diff {a.mean() - b.mean():.6g}  bootstrap p = {p_boot:.4g}  permutation p = {p_perm:.4g}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError("a subcommand is required")
        args.out.mkdir(parents=True, exist_ok=True)
        corpora = _Corpora()
        handlers = {
            "gen-corpus": lambda: cmd_gen_corpus(args),
            "pretrain": lambda: cmd_pretrain(args, corpora),
            "finetune": lambda: cmd_finetune(args, corpora),
            "eval": lambda: cmd_eval(args, corpora),
            "score": lambda: cmd_score(args),
            "estimate": lambda: cmd_estimate(args),
            "bootstrap": lambda: cmd_bootstrap(args),
        }
        status = handlers[args.command]()
        if corpora.partial:
            print("warning: corpus partially loaded (see skipped lines above)", file=sys.stderr)
            return 2
        return status
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
