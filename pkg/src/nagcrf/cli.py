"""Command-line entry point: ``nagcrf <command> [flags]``.

Commands
    make-data     synthetic train/dev/test corpora, vocabulary and a stats report
    train         train a model, write a checkpoint and a per-epoch log
    decode        decode a corpus with a checkpoint
    eval          score a decode file against a reference corpus
    bench         single-example latency and quality for several decode configs
    oracle-check  run the brute-force CRF oracle suites

Every command writes its fully resolved configuration next to its main output
as ``<output>.config`` (``key = value`` lines). ``--config FILE`` reads the
same format; flags given on the command line override it.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 config or invariant
error, 5 oracle-suite failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_ORACLE = 0, 2, 3, 4, 5

log = logging.getLogger("nagcrf")


class ConfigError(Exception):
    pass


class OracleFailure(Exception):
    pass


# ---------------------------------------------------------------- config files

def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def write_config_echo(path, args: argparse.Namespace) -> None:
    items = sorted((k, v) for k, v in vars(args).items() if k not in ("func", "config"))
    lines = [f"{k} = {'' if v is None else v}" for k, v in items]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _apply_config_file(sub: argparse.ArgumentParser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config_file(known.config)
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in actions or key in ("help", "config"):
            raise ConfigError(f"{known.config}: unknown key {key!r}")
        action = actions[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{known.config}: {key} expects a boolean, got {raw!r}")
            flag = raw.lower() in ("true", "1", "yes")
            defaults[key] = flag if isinstance(action, argparse._StoreTrueAction) else not flag
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except (TypeError, ValueError) as err:
                raise ConfigError(f"{known.config}: bad value for {key}: {err}") from err
            if action.choices is not None and defaults[key] not in action.choices:
                raise ConfigError(f"{known.config}: {key} must be one of {list(action.choices)}")
    sub.set_defaults(**defaults)


# ------------------------------------------------------------------- helpers

def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _require_writable(path) -> Path:
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    if not os.access(parent, os.W_OK):
        raise PermissionError(f"output directory is not writable: {parent}")
    return p


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from err


def _decode_config(args, model, prior_pairs=None):
    """A DecodeConfig, or an LpdPlan when LPD candidates come from a prior corpus."""
    from .decode import DecodeConfig, LengthPrior, LpdPlan

    beam_k = args.beam_k if args.beam_k is not None else model.crf.beam_k
    if args.strategy == "fixed_length" and not args.lengths:
        if prior_pairs is None:
            raise ConfigError("fixed_length needs --lengths or --prior")
        return LpdPlan(LengthPrior.from_pairs(prior_pairs), n=args.lpd_n, beam_k=beam_k)
    try:
        return DecodeConfig(args.strategy, args.alpha, list(args.lengths or []), beam_k)
    except ValueError as err:
        raise ConfigError(str(err)) from err


def format_decode_line(idx: int, tokens, score: float, latency_ns: int) -> str:
    return f"{idx}\t{' '.join(tokens)}\t{score!r}\t{latency_ns}"


def read_decode_file(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ConfigError(f"{path}:{line_no}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), parts[1].split(), float(parts[2]), int(parts[3])))
            except ValueError as err:
                raise ConfigError(f"{path}:{line_no}: {err}") from err
    return rows


# ------------------------------------------------------------------ commands

def cmd_make_data(args) -> int:
    from .data import TaskSpec, build_vocab, corpus_stats, format_stats, generate_splits, save_corpus

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        spec = TaskSpec(kind=args.task, vocab_size=args.vocab_size, min_len=args.min_len,
                        max_len=args.max_len, keep_ratio=args.keep_ratio,
                        repetition_bias=args.repetition_bias, seed=args.seed)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    splits = generate_splits(spec, {"train": args.n_train, "dev": args.n_dev, "test": args.n_test})
    for name, corpus in splits.items():
        save_corpus(corpus, out / f"{name}.tsv")
    build_vocab(splits["train"]).save(out / "vocab.txt")
    (out / "stats.txt").write_text(format_stats(corpus_stats(splits["train"])), encoding="utf-8")
    write_config_echo(out / "make-data.config", args)
    log.info("wrote %s", ", ".join(f"{n}={len(c)}" for n, c in splits.items()))
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import build_vocab, load_corpus
    from .encoder import EncoderConfig, Vocabulary
    from .model import NagModel
    from .train import TrainConfig, train

    train_path = _require_file(args.train, "training corpus")
    dev_path = _require_file(args.dev, "dev corpus") if args.dev else None
    vocab_path = _require_file(args.vocab, "vocabulary") if args.vocab else None
    ckpt = _require_writable(args.checkpoint)
    log_path = _require_writable(args.log or f"{args.checkpoint}.log.tsv")

    train_corpus = load_corpus(train_path, "train")
    dev_corpus = load_corpus(dev_path, "dev") if dev_path else None
    vocab = Vocabulary.load(vocab_path) if vocab_path else build_vocab(train_corpus)
    try:
        enc = EncoderConfig(n_layers=args.n_layers, d_model=args.d_model, n_heads=args.n_heads,
                            d_ffn=args.d_ffn, max_len=args.max_len, plain_eq_mode=args.plain)
        tc = TrainConfig(lam=args.lam, window_c=args.window_c, lr=args.lr, epochs=args.epochs,
                         batch_size=args.batch_size, seed=args.seed, train_k=args.train_k,
                         append_eos=not args.no_eos, use_crf=not args.no_crf,
                         eval_size=args.eval_size)
        model = NagModel.init(vocab, enc, rank=args.rank_d, beam_k=args.beam_k, seed=args.seed,
                              task_kind=args.task_kind)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    write_config_echo(f"{ckpt}.config", args)
    dev_pairs = dev_corpus.examples if dev_corpus else train_corpus.examples[: tc.eval_size]
    with open(log_path, "w", encoding="utf-8") as fh:
        def log_fn(rec):
            fh.write(rec.tsv() + "\n")
            fh.flush()

        result = train(model, train_corpus.examples, dev_pairs, tc, checkpoint_path=ckpt, log_fn=log_fn)
    log.info("best epoch %d, skipped %d examples", result.best_epoch, result.skipped)
    return EXIT_OK


def cmd_decode(args) -> int:
    from .data import load_corpus
    from .model import load_checkpoint

    ckpt = _require_file(args.checkpoint, "checkpoint")
    corpus_path = _require_file(args.corpus, "corpus")
    prior_path = _require_file(args.prior, "prior corpus") if args.prior else None
    out = _require_writable(args.output)
    model, _ = load_checkpoint(ckpt)
    corpus = load_corpus(corpus_path)
    prior = load_corpus(prior_path).examples if prior_path else None
    cfg = _decode_config(args, model, prior)
    write_config_echo(f"{out}.config", args)
    lines = []
    for idx, (src, _) in enumerate(corpus, 1):
        try:
            ids = model.input_ids(src)
            res = model.decode_ids(ids, cfg(src, ids) if callable(cfg) else cfg,
                                   include_encoding=not args.exclude_encoding)
        except ValueError as err:
            raise ConfigError(f"example {idx}: {err}") from err
        latency = 0 if args.no_timing else res.latency_ns
        lines.append(format_decode_line(idx, model.vocab.decode(res.output), res.score, latency))
    out.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_corpus
    from .eval import score_outputs

    rows = read_decode_file(_require_file(args.decoded, "decode file"))
    refs = load_corpus(_require_file(args.references, "reference corpus"))
    if len(rows) != len(refs):
        raise ConfigError(f"{len(rows)} decoded lines but {len(refs)} references")
    sources = [s for s, _ in refs] if args.task == "compression" else None
    label = args.label if args.label is not None else Path(args.decoded).stem
    report = score_outputs([r[1] for r in rows], [t for _, t in refs], sources, label=label)
    lat = np.array([r[3] for r in rows], dtype=np.float64)
    report.mean_latency_ns = float(lat.mean()) if lat.size else 0.0
    report.median_latency_ns = float(np.median(lat)) if lat.size else 0.0
    if args.baseline_ns and report.mean_latency_ns > 0:
        report.speedup_vs_baseline = args.baseline_ns / report.mean_latency_ns
    _emit_reports([report], args)
    return EXIT_OK


def _emit_reports(reports, args) -> None:
    text = "\n".join(r.to_text() for r in reports)
    if args.output:
        out = _require_writable(args.output)
        out.write_text(text, encoding="utf-8")
        write_config_echo(f"{out}.config", args)
    else:
        sys.stdout.write(text)
    if args.tsv:
        tsv = _require_writable(args.tsv)
        new = not tsv.exists() or tsv.stat().st_size == 0
        with open(tsv, "a", encoding="utf-8") as fh:
            if new:
                fh.write(reports[0].tsv_header() + "\n")
            for r in reports:
                fh.write(r.tsv_row() + "\n")


def parse_bench_spec(spec: str):
    """``dynamic`` | ``ratio_first:ALPHA`` | ``fixed:L1,L2`` | ``lpd:N``."""
    name, _, arg = spec.partition(":")
    if name == "dynamic" and not arg:
        return ("dynamic", None)
    if name == "ratio_first" and arg:
        return ("ratio_first", float(arg))
    if name == "fixed" and arg:
        return ("fixed", _int_list(arg))
    if name == "lpd" and arg:
        return ("lpd", int(arg))
    raise ConfigError(f"bad bench config {spec!r}; use dynamic, ratio_first:A, fixed:L1,L2 or lpd:N")


def cmd_bench(args) -> int:
    from .data import load_corpus
    from .decode import DecodeConfig, LengthPrior, LpdPlan
    from .eval import benchmark
    from .model import load_checkpoint

    ckpt = _require_file(args.checkpoint, "checkpoint")
    corpus = load_corpus(_require_file(args.corpus, "corpus"))
    prior_path = _require_file(args.prior, "prior corpus") if args.prior else None
    specs = [parse_bench_spec(s) for s in args.configs]
    model, _ = load_checkpoint(ckpt)
    beam_k = args.beam_k if args.beam_k is not None else model.crf.beam_k
    configs = []
    try:
        for kind, arg in specs:
            if kind == "dynamic":
                configs.append(DecodeConfig(beam_k=beam_k))
            elif kind == "ratio_first":
                configs.append(DecodeConfig("ratio_first", arg, beam_k=beam_k))
            elif kind == "fixed":
                configs.append(DecodeConfig("fixed_length", 1.0, arg, beam_k))
            else:
                if prior_path is None:
                    raise ConfigError("lpd:N needs --prior")
                configs.append(LpdPlan(LengthPrior.from_pairs(load_corpus(prior_path).examples), arg, beam_k))
    except ValueError as err:
        raise ConfigError(str(err)) from err
    pairs = corpus.examples[: args.limit] if args.limit else corpus.examples
    reports = benchmark(model, pairs, configs, list(args.configs), repeats=args.repeats,
                        warmup=args.warmup, baseline_latency_ns=args.baseline_ns,
                        include_encoding=not args.exclude_encoding)
    _emit_reports(reports, args)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .oracle import run_oracle_suites

    results = run_oracle_suites(args.max_vocab, args.max_len, args.instances, args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}\t{name}\t{detail}")
    if not all(ok for _, ok, _ in results):
        raise OracleFailure("oracle suite failed")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nagcrf", description="Non-autoregressive generation with a low-rank CRF.")
    p.add_argument("-v", "--verbose", action="store_true")
    subs = p.add_subparsers(dest="command", required=True)

    def sub(name, func, help_):
        s = subs.add_parser(name, help=help_)
        s.add_argument("--config", help="key = value file; command-line flags override it")
        s.add_argument("--seed", type=int, default=0)
        s.set_defaults(func=func)
        return s

    s = sub("make-data", cmd_make_data, "generate synthetic corpora")
    s.add_argument("--task", default="compression",
                   choices=["compression", "noisy-copy", "substitution-translation"])
    s.add_argument("--vocab-size", type=int, default=200)
    s.add_argument("--min-len", type=int, default=10)
    s.add_argument("--max-len", type=int, default=30)
    s.add_argument("--keep-ratio", type=float, default=0.3)
    s.add_argument("--repetition-bias", type=float, default=0.0)
    s.add_argument("--n-train", type=int, default=20000)
    s.add_argument("--n-dev", type=int, default=500)
    s.add_argument("--n-test", type=int, default=500)
    s.add_argument("--out-dir", required=True)

    s = sub("train", cmd_train, "train a model")
    s.add_argument("--train", required=True)
    s.add_argument("--dev")
    s.add_argument("--vocab")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--log", help="per-epoch TSV log (default: <checkpoint>.log.tsv)")
    s.add_argument("--n-layers", type=int, default=4)
    s.add_argument("--d-model", type=int, default=128)
    s.add_argument("--n-heads", type=int, default=4)
    s.add_argument("--d-ffn", type=int, default=256)
    s.add_argument("--max-len", type=int, default=64)
    s.add_argument("--plain", action="store_true", help="no residuals or layer norm")
    s.add_argument("--task-kind", default="length-reducing", choices=["length-reducing", "general"])
    s.add_argument("--rank-d", type=int, default=32)
    s.add_argument("--beam-k", type=int, default=256)
    s.add_argument("--train-k", type=int, help="training lattice width (default: --beam-k)")
    s.add_argument("--window-c", type=int, default=3)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--eval-size", type=int, default=300)
    s.add_argument("--no-eos", action="store_true", help="train without end markers (LPD variant)")
    s.add_argument("--no-crf", action="store_true", help="cross-entropy only, no transitions")

    def decode_flags(s):
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--corpus", required=True)
        s.add_argument("--beam-k", type=int, help="decode lattice width (default: the checkpoint's)")
        s.add_argument("--prior", help="corpus whose length ratios give LPD candidates")
        s.add_argument("--exclude-encoding", action="store_true", help="time decoding only")

    s = sub("decode", cmd_decode, "decode a corpus")
    decode_flags(s)
    s.add_argument("--output", required=True)
    s.add_argument("--strategy", default="dynamic", choices=["dynamic", "ratio_first", "fixed_length"])
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--lengths", type=_int_list, help="fixed-length candidates, e.g. 3,4,5")
    s.add_argument("--lpd-n", type=int, default=10, help="LPD candidates drawn from --prior")
    s.add_argument("--no-timing", action="store_true", help="write 0 latency so files are reproducible")

    s = sub("eval", cmd_eval, "score a decode file")
    s.add_argument("--decoded", required=True)
    s.add_argument("--references", required=True)
    s.add_argument("--task", default="compression", help="'compression' enables token-kept F1")
    s.add_argument("--label", help="report label (default: decode file name)")
    s.add_argument("--baseline-ns", type=float)
    s.add_argument("--output")
    s.add_argument("--tsv")

    s = sub("bench", cmd_bench, "latency benchmark")
    decode_flags(s)
    s.add_argument("configs", nargs="+", help="dynamic | ratio_first:A | fixed:L1,L2 | lpd:N")
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--warmup", type=int, default=3)
    s.add_argument("--limit", type=int)
    s.add_argument("--baseline-ns", type=float)
    s.add_argument("--output")
    s.add_argument("--tsv")

    s = sub("oracle-check", cmd_oracle_check, "run the brute-force oracle suites")
    s.add_argument("--max-vocab", type=int, default=6)
    s.add_argument("--max-len", type=int, default=5)
    s.add_argument("--instances", type=int, default=200)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        # find the subcommand so a --config file can seed its defaults
        cmd = next((a for a in argv if not a.startswith("-")), None)
        subparsers = parser._subparsers._group_actions[0].choices
        if cmd in subparsers:
            _apply_config_file(subparsers[cmd], argv[argv.index(cmd) + 1:])
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    except ConfigError as err:
        print(f"nagcrf: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"nagcrf: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .data import CorpusFormatError
    from .model import CheckpointError

    try:
        return args.func(args)
    except (OSError, CorpusFormatError, CheckpointError) as err:
        print(f"nagcrf: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as err:
        print(f"nagcrf: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleFailure as err:
        print(f"nagcrf: {err}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
