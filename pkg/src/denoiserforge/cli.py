"""The ``forge`` command line: one binary over the whole pipeline.

Subcommands: ingest, train-vocab, encode, mlm, nsp, clm, sp, rtd, mod,
render, score, toylm (train/ppl/zeroshot/penlp/fit-threshold/generate), co2.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors. All
randomness flows from ``--seed``. A ``key=value`` config file given with
``--config`` supplies defaults; explicit flags win. The ``FORGE_LOG``
environment variable (error, info, debug) controls log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import struct
import sys
from pathlib import Path

import numpy as np

from . import corpus, metrics, objectives, templates, tokenizer, toylm

log = logging.getLogger("forge")

_TOKENS_HEADER = "denoiserforge-tokens"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class ForgeParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# ---------------------------------------------------------------------------
# Token stream files


def write_tokens(path: str | Path, seqs, vocab_id: str) -> int:
    count = 0
    with open(path, "wb") as fh:
        fh.write(f"{_TOKENS_HEADER} v1 {vocab_id}\n".encode("ascii"))
        for seq in seqs:
            ids = seq.ids if isinstance(seq, tokenizer.TokenSeq) else list(seq)
            fh.write(struct.pack("<I", len(ids)))
            fh.write(struct.pack(f"<{len(ids)}I", *ids))
            count += 1
    return count


def read_tokens(path: str | Path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) < 2 or header[0] != _TOKENS_HEADER or header[1] != "v1":
            raise DataError(f"{path}: not a token stream file")
        vocab_id = header[2] if len(header) > 2 else ""
        seqs = []
        while True:
            head = fh.read(4)
            if not head:
                break
            (n,) = struct.unpack("<I", head)
            data = fh.read(4 * n)
            if len(data) != 4 * n:
                raise DataError(f"{path}: truncated token record")
            seqs.append(tokenizer.TokenSeq(list(struct.unpack(f"<{n}I", data)), vocab_id))
    return seqs


def _read_blank_line_docs(path: str | Path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    return [d.strip() for d in re.split(r"\n{2,}", text) if d.strip()]


def _read_lines(path: str | Path) -> list[str]:
    return [
        line.rstrip("\n") for line in Path(path).read_text(encoding="utf-8").splitlines()
    ]


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_ingest(args) -> int:
    manifest = corpus.CorpusManifest.load(args.manifest)
    stream = corpus.ingest(manifest, seed=args.seed, dedup=not args.no_dedup)
    with open(args.out, "w", encoding="utf-8") as fh:
        for doc in stream:
            fh.write(doc.text)
            fh.write("\n\n")
    stream.report.print_skip_report()
    return 0


def _parse_specials(value: str) -> list[str] | None:
    if value == "default":
        return None
    if value == "none":
        return []
    return value.split(",")


def _cmd_train_vocab(args) -> int:
    docs = _read_blank_line_docs(args.infile)
    vocab = tokenizer.train_vocab(
        docs, args.scheme, args.size, _parse_specials(args.specials)
    )
    tokenizer.save_vocab(vocab, args.out)
    log.info("trained %s vocabulary of %d tokens", vocab.scheme, vocab.size)
    return 0


def _cmd_encode(args) -> int:
    vocab = tokenizer.load_vocab(args.vocab)
    docs = _read_blank_line_docs(args.infile)
    seqs = (tokenizer.encode(d, vocab, parse_specials=args.parse_specials) for d in docs)
    n = write_tokens(args.out, seqs, vocab.vocab_id)
    log.info("encoded %d documents", n)
    return 0


def _emit_examples(args, make_one) -> int:
    vocab = tokenizer.load_vocab(args.vocab)
    seqs = read_tokens(args.infile)
    skipped = 0

    def generate():
        nonlocal skipped
        for i, seq in enumerate(seqs):
            try:
                yield make_one(seq, vocab, args.seed ^ i)
            except objectives.ObjectiveError as exc:
                skipped += 1
                log.debug("skipping document %d: %s", i, exc)

    n = objectives.write_examples(args.out, generate())
    if skipped:
        print(f"skipped={skipped}", file=sys.stderr)
    log.info("wrote %d examples", n)
    return 0


def _cmd_mlm(args) -> int:
    return _emit_examples(
        args, lambda seq, vocab, seed: objectives.make_mlm(seq, args.p_mask, vocab, seed)
    )


def _cmd_rtd(args) -> int:
    return _emit_examples(
        args,
        lambda seq, vocab, seed: objectives.make_rtd_input(seq, args.p_mask, vocab, seed),
    )


def _cmd_sp(args) -> int:
    by_token = {s.control_token: s for s in objectives.BUILTIN_DENOISERS}
    if args.denoiser not in by_token:
        raise DataError(f"unknown denoiser {args.denoiser!r}; choose from {sorted(by_token)}")
    spec = by_token[args.denoiser]
    return _emit_examples(
        args, lambda seq, vocab, seed: objectives.span_corrupt(seq, spec, vocab, seed)
    )


def _cmd_mod(args) -> int:
    if args.denoisers:
        by_token = {s.control_token: s for s in objectives.BUILTIN_DENOISERS}
        specs = tuple(by_token[name] for name in args.denoisers.split(","))
    else:
        specs = objectives.BUILTIN_DENOISERS
    return _emit_examples(
        args,
        lambda seq, vocab, seed: objectives.mod_sample(
            seq, vocab, seed, specs=specs, jitter=args.jitter
        ),
    )


def _cmd_clm(args) -> int:
    vocab = tokenizer.load_vocab(args.vocab)
    seqs = read_tokens(args.infile)
    n = objectives.write_examples(
        args.out, objectives.pack_clm(seqs, args.ctx_len, vocab)
    )
    log.info("wrote %d examples", n)
    return 0


def _cmd_nsp(args) -> int:
    vocab = tokenizer.load_vocab(args.vocab)
    texts = _read_blank_line_docs(args.infile)
    docs = [corpus.Document.from_text(t) for t in texts]
    if len(docs) < 2:
        raise DataError("nsp needs at least 2 documents")
    skipped = 0

    def generate():
        nonlocal skipped
        for i, doc in enumerate(docs):
            rng = np.random.default_rng(args.seed ^ i)
            other = docs[(i + 1 + int(rng.integers(0, len(docs) - 1))) % len(docs)]
            try:
                yield objectives.make_nsp_pair(
                    doc, other, vocab, int(rng.integers(0, 2**63)), p_mask=args.p_mask
                )
            except objectives.SentenceSplitError:
                skipped += 1

    n = objectives.write_examples(args.out, generate())
    if skipped:
        print(f"skipped={skipped}", file=sys.stderr)
    log.info("wrote %d examples", n)
    return 0


def _cmd_render(args) -> int:
    spec = templates.get_template(args.task, args.family)
    instances = templates.load_instances(args.infile, args.task)
    with open(args.out, "w", encoding="utf-8") as fh:
        for i, instance in enumerate(instances):
            instance_id = str(instance.fields.get("idx", i))
            for label, text in templates.render(instance, spec):
                fh.write(f"{instance_id}\t{label}\t{text}\n")
    return 0


def _cmd_score(args) -> int:
    name = args.metric
    if name == "co2":
        value = metrics.co2(metrics.Co2Params(args.pue, args.kwh, args.intensity))
        print(f"metric=co2 score={value:.10g} n=1")
        return 0
    if args.pred is None:
        raise UsageError(f"forge score: --pred is required for metric {name}")
    if name not in ("joint",) and args.gold is None:
        raise UsageError(f"forge score: --gold is required for metric {name}")
    if name == "sari" and args.src is None:
        raise UsageError("forge score: --src is required for sari")
    preds = _read_lines(args.pred)
    if name == "joint":
        rows = [line.split("\t") for line in preds if line]
        try:
            sta, sim, fl = zip(*[(float(a), float(b), float(c)) for a, b, c in rows])
        except ValueError as exc:
            raise DataError(f"joint expects three tab-separated floats per line: {exc}")
        report = metrics.joint_detox(list(sta), list(sim), list(fl))
    else:
        golds = _read_lines(args.gold)
        if name == "mcc":
            report = metrics.mcc(preds, golds)
        elif name in ("f1", "em"):
            f1_report, em_report = metrics.f1_em(preds, [g.split("\t") for g in golds])
            report = f1_report if name == "f1" else em_report
        elif name == "sari":
            sources = _read_lines(args.src)
            report = metrics.sari(sources, preds, [g.split("\t") for g in golds])
        elif name == "bleu":
            report = metrics.bleu(preds, [g.split("\t") for g in golds])
        elif name == "chrf":
            report = metrics.chrf1(preds, [g.split("\t") for g in golds])
        elif name == "rougeL":
            report = metrics.rouge_l(preds, [g.split("\t") for g in golds])
        elif name == "meteor":
            report = metrics.meteor_lite(preds, [g.split("\t") for g in golds])
        else:
            raise DataError(f"unknown metric {name!r}")
    print(f"metric={report.name} score={report.score:.10g} n={report.support}")
    return 0


def _cmd_co2(args) -> int:
    value = metrics.co2(metrics.Co2Params(args.pue, args.kwh, args.intensity))
    print(f"co2_kg={value:g}")
    return 0


_TOYLM_REQUIRED = {
    "train": ("vocab", "infile", "out"),
    "ppl": ("vocab", "model"),
    "zeroshot": ("vocab", "model", "infile", "out"),
    "penlp": ("vocab", "model"),
    "fit-threshold": ("infile",),
    "generate": ("vocab", "model"),
}
_TOYLM_FLAG_NAMES = {"infile": "--in"}


def _cmd_toylm(args) -> int:
    action = args.action
    for attr in _TOYLM_REQUIRED[action]:
        if getattr(args, attr) is None:
            flag = _TOYLM_FLAG_NAMES.get(attr, f"--{attr}")
            raise UsageError(f"forge toylm {action}: {flag} is required")
    if action in ("ppl", "penlp") and args.text is None and args.infile is None:
        raise UsageError(f"forge toylm {action}: give --text or --in")
    if action == "train":
        vocab = tokenizer.load_vocab(args.vocab)
        examples = list(objectives.read_examples(args.infile, vocab.vocab_id))
        model = toylm.ToyModel(
            logits=np.zeros((vocab.size, vocab.size)),
            unigram_logits=np.zeros(vocab.size),
            interp=args.interp,
            vocab_id=vocab.vocab_id,
        )
        model, curve = toylm.train(model, examples, args.lr, args.epochs, args.seed)
        toylm.save_model(model, args.out)
        for epoch, loss in enumerate(curve, start=1):
            print(f"epoch={epoch} loss={loss:.10g}", file=sys.stderr)
        return 0
    if action == "fit-threshold":
        scores = []
        for line in _read_lines(args.infile):
            if not line:
                continue
            score, label = line.split("\t")
            scores.append((float(score), int(label)))
        result = toylm.fit_threshold(scores, folds=args.folds, seed=args.seed)
        print(f"threshold={result.threshold:.10g} mcc={result.mcc:.10g}")
        return 0
    model = toylm.load_model(args.model)
    vocab = tokenizer.load_vocab(args.vocab)
    if action == "ppl":
        texts = [args.text] if args.text else _read_lines(args.infile)
        for text in texts:
            seq = tokenizer.encode(text, vocab)
            print(f"ppl={toylm.perplexity(model, seq):.10g}")
        return 0
    if action == "penlp":
        cfg = toylm.PenLPConfig(alpha=args.alpha, pivot=args.pivot)
        texts = [args.text] if args.text else _read_lines(args.infile)
        for text in texts:
            seq = tokenizer.encode(text, vocab)
            print(f"{toylm.penlp(model, seq, cfg):.10g}")
        return 0
    if action == "zeroshot":
        groups: dict[str, list[tuple[str, str]]] = {}
        order = []
        for line in _read_lines(args.infile):
            if not line:
                continue
            instance_id, label, text = line.split("\t", 2)
            if instance_id not in groups:
                groups[instance_id] = []
                order.append(instance_id)
            candidate = text if args.no_append_label else f"{text} {label}"
            groups[instance_id].append((label, candidate))
        with open(args.out, "w", encoding="utf-8") as fh:
            for instance_id in order:
                label = toylm.zero_shot_classify(model, groups[instance_id], vocab)
                fh.write(f"{instance_id}\t{label}\n")
        return 0
    if action == "generate":
        seq = tokenizer.encode(args.prefix, vocab)
        out = toylm.beam_search(
            model,
            seq,
            beams=args.beams,
            rep_penalty=args.rep_penalty,
            max_len=args.max_len,
            eos_id=vocab.specials.get("eos"),
        )
        print(tokenizer.decode(out, vocab))
        return 0
    raise UsageError(f"unknown toylm action {action!r}")


# ---------------------------------------------------------------------------
# Parser assembly


def _add_common(p: ForgeParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("--threads", type=int, default=1, help="worker hint; output order does not depend on it")
    p.add_argument("--config", default=None, help=argparse.SUPPRESS)


def build_parser() -> ForgeParser:
    parser = ForgeParser(prog="forge", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=ForgeParser)

    p = sub.add_parser("ingest", help="stream a manifest into normalized documents")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-dedup", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train-vocab", help="train a subword vocabulary")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--scheme", choices=("bpe", "bbpe", "unigram"), required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--specials", default="default", help="'default', 'none', or a comma list")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_train_vocab)

    p = sub.add_parser("encode", help="tokenize blank-line-delimited documents")
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parse-specials", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_encode)

    for name, func, extra in (
        ("mlm", _cmd_mlm, {"--p-mask": 0.15}),
        ("rtd", _cmd_rtd, {"--p-mask": 0.25}),
        ("sp", _cmd_sp, {"--denoiser": "<SC1>"}),
        ("mod", _cmd_mod, {}),
    ):
        p = sub.add_parser(name, help=f"emit {name} examples from a token stream")
        p.add_argument("--vocab", required=True)
        p.add_argument("--in", dest="infile", required=True)
        p.add_argument("--out", required=True)
        for flag, default in extra.items():
            if isinstance(default, float):
                p.add_argument(flag, dest=flag.lstrip("-").replace("-", "_"), type=float, default=default)
            else:
                p.add_argument(flag, dest=flag.lstrip("-").replace("-", "_"), default=default)
        if name == "mod":
            p.add_argument("--jitter", action="store_true")
            p.add_argument("--denoisers", default="", help="comma list of control tokens")
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("clm", help="pack a token stream into causal LM blocks")
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--ctx-len", dest="ctx_len", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_clm)

    p = sub.add_parser("nsp", help="emit sentence-pair examples from documents")
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p-mask", dest="p_mask", type=float, default=0.15)
    _add_common(p)
    p.set_defaults(func=_cmd_nsp)

    p = sub.add_parser("render", help="render task instances into prompt strings")
    p.add_argument("--task", choices=templates.TASKS, required=True)
    p.add_argument("--family", choices=templates.FAMILIES, required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("score", help="compute a metric over prediction files")
    p.add_argument(
        "--metric",
        choices=("mcc", "f1", "em", "sari", "bleu", "chrf", "rougeL", "meteor", "joint", "co2"),
        required=True,
    )
    p.add_argument("--pred", default=None)
    p.add_argument("--gold", default=None)
    p.add_argument("--src", default=None)
    p.add_argument("--pue", type=float, default=1.3)
    p.add_argument("--kwh", type=float, default=0.0)
    p.add_argument("--intensity", type=float, default=0.0)
    _add_common(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("co2", help="emissions from power figures")
    p.add_argument("--pue", type=float, required=True)
    p.add_argument("--kwh", type=float, required=True)
    p.add_argument("--intensity", type=float, required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_co2)

    p = sub.add_parser("toylm", help="train and query the toy language model")
    p.add_argument(
        "action",
        choices=("train", "ppl", "zeroshot", "penlp", "fit-threshold", "generate"),
    )
    p.add_argument("--vocab", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--in", dest="infile", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--text", default=None)
    p.add_argument("--prefix", default="")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--interp", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--pivot", type=int, default=5)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--beams", type=int, default=5)
    p.add_argument("--rep-penalty", dest="rep_penalty", type=float, default=1.05)
    p.add_argument("--max-len", dest="max_len", type=int, default=64)
    p.add_argument("--no-append-label", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_toylm)

    return parser


def _load_config(path: str) -> list[str]:
    flags = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        flags.extend([f"--{key.strip().replace('_', '-')}", value.strip()])
    return flags


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("FORGE_LOG", "error").lower()
    logging.basicConfig(
        level={"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
            level, logging.ERROR
        ),
        format="%(name)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    try:
        if "--config" in argv:
            idx = argv.index("--config")
            try:
                config_path = argv[idx + 1]
            except IndexError:
                raise UsageError("forge: --config needs a file argument")
            config_flags = _load_config(config_path)
            del argv[idx : idx + 2]
            # config values act as defaults; later (explicit) flags win
            argv = argv[:1] + config_flags + argv[1:]
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage())
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (
        DataError,
        corpus.CorpusError,
        tokenizer.VocabError,
        objectives.ObjectiveError,
        templates.TemplateError,
        metrics.MetricError,
        toylm.ToyLmError,
        OSError,
        ValueError,
    ) as exc:
        print(f"forge: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
