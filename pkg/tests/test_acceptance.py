"""Acceptance criteria, one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion. Tolerances and trial counts are fixed here; nothing is deferred
to later calibration.
"""

import hashlib
import math
import subprocess
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
import scipy.stats

from denoiserforge import metrics as m
from denoiserforge import objectives as obj
from denoiserforge import templates as tp
from denoiserforge import tokenizer as tk
from denoiserforge import toylm as tl

from test_metric_oracles import (
    ALPHABET,
    all_sentences,
    assert_pair_equivalence,
    oracle_sari,
)
from test_templates import GOLDEN, GOLDEN_INSTANCES
from test_toylm import greedy_decode, loop_prone_model, max_repeat


def report(criterion: int, text: str) -> None:
    print(f"\ncriterion {criterion}: PASS - {text}")


@pytest.fixture(scope="module")
def vocab() -> tk.Vocab:
    return tk.train_vocab(
        ["the cat sat on the mat кошка спит на ковре"],
        "bbpe",
        256 + 24 + len(tk.default_specials()),
    )


def natural_seq(vocab, naturals, rng, length):
    ids = [int(x) for x in naturals[rng.integers(0, len(naturals), length)]]
    return tk.TokenSeq(ids, vocab.vocab_id), ids


def test_criterion_01_denoiser_table():
    expected = (
        ("<LM>", None, 0.25, 1),
        ("<SC1>", 3, 0.15, 1),
        ("<SC2>", 8, 0.15, 1),
        ("<SC3>", 64, 0.15, 1),
        ("<SC4>", 3, 0.5, 1),
        ("<SC5>", 8, 0.5, 1),
        ("<SC6>", 64, 0.5, 1),
    )
    got = tuple(
        (s.control_token, s.mu, s.r, s.n) for s in obj.BUILTIN_DENOISERS
    )
    assert got == expected
    assert obj.BUILTIN_DENOISERS[0].resolved_mu(100) == 25.0  # mu = L/4
    report(1, "the seven built-in denoisers match the reference table exactly")


def test_criterion_02_lossless_reconstruction_fuzz(vocab):
    naturals = np.array(vocab.natural_ids())
    rng = np.random.default_rng(20240202)
    start = time.time()
    trials = 100_000
    for _ in range(trials):
        spec = obj.BUILTIN_DENOISERS[int(rng.integers(0, 7))]
        low = 2 if spec.mu is None else max(2, int(spec.mu))
        length = int(rng.integers(low, low + 64))
        seq, ids = natural_seq(vocab, naturals, rng, length)
        example = obj.span_corrupt(seq, spec, vocab, seed=int(rng.integers(0, 2**31)))
        assert obj.reconstruct(example, vocab) == ids
    elapsed = time.time() - start
    assert elapsed < 60
    report(2, f"{trials} random corruption triples reconstructed exactly in {elapsed:.1f}s")


def test_criterion_03_corruption_rate_concentration(vocab):
    naturals = np.array(vocab.natural_ids())
    length = 10_000
    start = time.time()
    for spec in obj.BUILTIN_DENOISERS[1:]:
        sigma = math.sqrt(spec.r * (1 - spec.r) / length)
        passes = 0
        for trial in range(100):
            rng = np.random.default_rng(1000 * trial + 7)
            seq, ids = natural_seq(vocab, naturals, rng, length)
            example = obj.span_corrupt(seq, spec, vocab, seed=trial)
            kept = sum(1 for t in example.input_ids.ids if not vocab.is_special(t))
            realized = (length - kept) / length
            if abs(realized - spec.r) <= 3 * sigma:
                passes += 1
        assert passes >= 99, (spec.control_token, passes)
    elapsed = time.time() - start
    assert elapsed < 60
    report(3, f"realized corruption within 3-sigma of r for all six denoisers ({elapsed:.1f}s)")


def test_criterion_04_mixture_uniformity(vocab):
    naturals = np.array(vocab.natural_ids())
    rng = np.random.default_rng(4)
    seq, _ = natural_seq(vocab, naturals, rng, 64)
    counts = Counter()
    start = time.time()
    draws = 70_000
    for i in range(draws):
        example = obj.mod_sample(seq, vocab, seed=1 ^ i)
        counts[example.meta["denoiser"]] += 1
    observed = [counts[s.control_token] for s in obj.BUILTIN_DENOISERS]
    stat, pvalue = scipy.stats.chisquare(observed)
    elapsed = time.time() - start
    assert pvalue > 0.01, (observed, pvalue)
    assert elapsed < 30
    report(4, f"chi-square p={pvalue:.3f} over {draws} denoiser draws ({elapsed:.1f}s)")


def test_criterion_05_bbpe_totality(vocab):
    rng = np.random.default_rng(5)
    start = time.time()
    trials = 100_000
    for _ in range(trials):
        length = int(rng.integers(0, 40))
        codepoints = rng.integers(1, 0x2FFFF, length)
        text = "".join(
            chr(c) for c in codepoints if not 0xD800 <= c <= 0xDFFF
        )
        seq = tk.encode(text, vocab)
        assert tk.decode(seq, vocab) == text
    elapsed = time.time() - start
    assert elapsed < 30
    report(5, f"{trials} random UTF-8 strings roundtrip byte-exactly ({elapsed:.1f}s)")


def test_criterion_06_metric_oracle_equivalence():
    start = time.time()
    checked = 0
    # exhaustive over the 4-symbol alphabet within a total-length budget
    for pred_tokens in all_sentences(6):
        for ref_tokens in all_sentences(6 - len(pred_tokens)):
            assert_pair_equivalence(pred_tokens, ref_tokens)
            checked += 1
    # SARI over exhaustive triples within its budget
    sari_checked = 0
    for src_tokens in all_sentences(4):
        for pred_tokens in all_sentences(4 - len(src_tokens)):
            rest = 4 - len(src_tokens) - len(pred_tokens)
            for ref_tokens in all_sentences(rest):
                got = m.sari(
                    [" ".join(src_tokens)],
                    [" ".join(pred_tokens)],
                    [[" ".join(ref_tokens)]],
                ).score
                assert math.isclose(
                    got, oracle_sari(src_tokens, pred_tokens, [ref_tokens]), abs_tol=1e-9
                )
                sari_checked += 1
    # seeded sweep covering the full <=6 x <=6 range
    rng = np.random.default_rng(6)
    for _ in range(3000):
        np_, nr = int(rng.integers(0, 7)), int(rng.integers(0, 7))
        pred_tokens = [ALPHABET[i] for i in rng.integers(0, 4, np_)]
        ref_tokens = [ALPHABET[i] for i in rng.integers(0, 4, nr)]
        assert_pair_equivalence(pred_tokens, ref_tokens)
        checked += 1
    elapsed = time.time() - start
    assert elapsed < 300
    report(
        6,
        f"BLEU/chrF1/ROUGE-L match the brute-force oracle on {checked} pairs, "
        f"SARI on {sari_checked} triples ({elapsed:.1f}s)",
    )


def test_criterion_07_classification_hand_cases():
    preds = ["1"] * 45 + ["0"] * 40 + ["1"] * 5 + ["0"] * 10
    golds = ["1"] * 45 + ["0"] * 40 + ["0"] * 5 + ["1"] * 10
    expected = (45 * 40 - 5 * 10) / math.sqrt(50 * 50 * 55 * 45)
    assert abs(m.mcc(preds, golds).score - expected) < 1e-9
    f1, em = m.f1_em(["a b"], ["a b c d"])
    assert abs(f1.score - 2 / 3) < 1e-9
    assert abs(em.score - 0.0) < 1e-9
    f1p, emp = m.f1_em(["a b", "c"], ["a b", "c"])
    assert abs(f1p.score - 1.0) < 1e-9 and abs(emp.score - 1.0) < 1e-9
    report(7, "MCC and F1/EM hand-computed cases match to 1e-9")


def test_criterion_08_co2_formula():
    assert abs(m.co2(m.Co2Params(1.3, 1000.0, 300.0)) - 390.0) < 1e-9
    assert abs(m.co2(m.Co2Params(1.0, 1000.0, 1000.0)) - 1000.0) < 1e-9
    assert m.co2(m.Co2Params(1.3, 0.0, 300.0)) == 0.0
    report(8, "emissions formula reproduces the 390 kg hand case to 1e-9")


def test_criterion_09_template_bit_exactness():
    expected = [
        tuple(line.split("\t"))
        for line in GOLDEN.read_text(encoding="utf-8").splitlines()
    ]
    produced = []
    for task in tp.TASKS:
        instance = tp.TaskInstance(task, dict(GOLDEN_INSTANCES[task]))
        for family in tp.FAMILIES:
            spec = tp.get_template(task, family)
            for label, rendered in tp.render(instance, spec):
                produced.append((task, family, label, rendered))
    assert produced == expected
    report(9, f"all 9 tasks x 3 families match the golden transcription ({len(expected)} rows)")


def test_criterion_10_gradient_check():
    rng = np.random.default_rng(10)
    h = 1e-5
    start = time.time()
    for trial in range(100):
        interp = float(rng.choice([1.0, 0.8, 0.5]))
        model = tl.ToyModel.random(5, seed=trial, interp=interp)
        counts = rng.integers(0, 5, (5, 5)).astype(float)
        counts[int(rng.integers(0, 5)), int(rng.integers(0, 5))] += 1
        _, grad_logits, grad_unigram = tl.ce_and_grads(model, counts)
        for i in range(5):
            for j in range(5):
                bumped = model.logits.copy()
                bumped[i, j] += h
                up, _, _ = tl.ce_and_grads(
                    tl.ToyModel(bumped, model.unigram_logits, interp), counts
                )
                bumped[i, j] -= 2 * h
                down, _, _ = tl.ce_and_grads(
                    tl.ToyModel(bumped, model.unigram_logits, interp), counts
                )
                assert abs((up - down) / (2 * h) - grad_logits[i, j]) < 1e-6
            ub = model.unigram_logits.copy()
            ub[i] += h
            up, _, _ = tl.ce_and_grads(tl.ToyModel(model.logits, ub, interp), counts)
            ub[i] -= 2 * h
            down, _, _ = tl.ce_and_grads(tl.ToyModel(model.logits, ub, interp), counts)
            assert abs((up - down) / (2 * h) - grad_unigram[i]) < 1e-6
    # non-increasing loss on a fixed batch
    ids = [int(x) for x in rng.integers(0, 5, 500)]
    example = obj.ObjectiveExample(
        tk.TokenSeq(ids, ""), tk.TokenSeq(ids[1:] + [obj.IGNORE_ID], ""), "clm", {}
    )
    model0 = tl.ToyModel.random(5, seed=999, interp=0.9)
    initial = tl.cross_entropy(model0, [example])
    _, curve = tl.train(model0, [example], lr=1e-2, epochs=40)
    series = [initial] + curve
    assert all(a >= b - 1e-12 for a, b in zip(series, series[1:]))
    elapsed = time.time() - start
    assert elapsed < 30
    report(10, f"analytic gradients match finite differences on 100 models ({elapsed:.1f}s)")


def test_criterion_11_zero_shot_protocol():
    start = time.time()
    rng = np.random.default_rng(11)
    words = ["bad", "cab", "dig", "elm", "fig", "gap", "hat", "ice", "jam", "keg", "lab", "mat"]

    def prompt(r):
        return " ".join(words[i] for i in r.integers(0, len(words), 4))

    docs = []
    for _ in range(2000):
        label = "yes" if rng.random() < 0.9 else "no"
        docs.append(prompt(rng) + " " + label)
    vocab = tk.train_vocab(docs, "bbpe", 256 + 16 + len(tk.default_specials()))
    seqs = [tk.encode(d, vocab) for d in docs]
    examples = list(obj.pack_clm(seqs, 32, vocab))
    model0 = tl.ToyModel(
        np.zeros((vocab.size, vocab.size)), np.zeros(vocab.size), vocab_id=vocab.vocab_id
    )
    model, _ = tl.train(model0, examples, lr=2.0, epochs=60)
    held_out = np.random.default_rng(911)
    hits = 0
    for _ in range(1000):
        p = prompt(held_out)
        choice = tl.zero_shot_classify(
            model, [("yes", p + " yes"), ("no", p + " no")], vocab
        )
        hits += choice == "yes"
    elapsed = time.time() - start
    assert hits >= 950, hits
    assert elapsed < 60
    report(11, f"dominant label selected on {hits}/1000 held-out templates ({elapsed:.1f}s)")


def test_criterion_12_penlp_threshold_protocol():
    rng = np.random.default_rng(12)
    separable = [(float(-5 - 5 * rng.random()), 1) for _ in range(80)]
    separable += [(float(-25 - 5 * rng.random()), 0) for _ in range(80)]
    result = tl.fit_threshold(separable, folds=10, seed=1)
    assert result.mcc == 1.0
    assert -20 < result.threshold < -10

    shuffled_rng = np.random.default_rng(5)
    values = shuffled_rng.normal(0, 1, 1000)
    labels = shuffled_rng.integers(0, 2, 1000)
    shuffled = tl.fit_threshold(
        list(zip(values.tolist(), labels.tolist())), folds=10, seed=5
    )
    assert abs(shuffled.mcc) < 0.1

    base_scores = [(float(i), int(i > 12)) for i in range(25)]
    shifted = [(s + 8.0, l) for s, l in base_scores]
    r_base = tl.fit_threshold(base_scores, folds=5, seed=3)
    r_shift = tl.fit_threshold(shifted, folds=5, seed=3)
    assert r_shift.threshold == r_base.threshold + 8.0
    assert r_shift.mcc == r_base.mcc
    report(12, "separable MCC=1.0, shuffled |MCC|<0.1, shift-invariance exact")


def test_criterion_13_beam_search():
    start = time.time()
    for seed in range(1000):
        model = tl.ToyModel.random(7, seed=seed, scale=1.5)
        got = tl.beam_search(model, [0], beams=1, rep_penalty=1.05, max_len=8, eos_id=6)
        assert got.ids == greedy_decode(model, [0], 1.05, 8, 6), seed
    wins = 0
    for seed in range(100):
        model = loop_prone_model(seed)
        plain = tl.beam_search(model, [0], beams=5, rep_penalty=1.0, max_len=16)
        penalized = tl.beam_search(model, [0], beams=5, rep_penalty=1.05, max_len=16)
        wins += max_repeat(penalized.ids) < max_repeat(plain.ids)
    elapsed = time.time() - start
    assert wins >= 90, wins
    assert elapsed < 60
    report(13, f"beam-1 equals greedy on 1000 models; penalty reduced repeats on {wins}/100 ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# Criterion 14: end-to-end determinism on a 10 MB corpus


_SYLLABLES = [
    "ба", "ве", "ги", "до", "жу", "зы", "ка", "ло", "ми", "ну",
    "по", "ра", "су", "ти", "фо", "ха", "че", "шу", "na", "mo",
    "li", "te", "ra", "su", "ko", "vi",
]


def _make_words(rng, count):
    words = set()
    while len(words) < count:
        n = int(rng.integers(2, 5))
        words.add("".join(_SYLLABLES[i] for i in rng.integers(0, len(_SYLLABLES), n)))
    return sorted(words)


def _write_10mb_corpus(path: Path, seed: int = 14) -> None:
    rng = np.random.default_rng(seed)
    words = _make_words(rng, 400)
    target = 10 * 1024 * 1024
    chunks = []
    size = 0
    while size < target:
        n_sents = int(rng.integers(3, 8))
        sents = []
        for _ in range(n_sents):
            n_words = int(rng.integers(6, 14))
            sents.append(" ".join(words[i] for i in rng.integers(0, len(words), n_words)) + ".")
        doc = " ".join(sents)
        chunks.append(doc)
        size += len(doc.encode("utf-8")) + 2
    path.write_text("\n\n".join(chunks), encoding="utf-8")


def _run_pipeline(workdir: Path, corpus: Path) -> dict[str, str]:
    workdir.mkdir(exist_ok=True)
    manifest = workdir / "manifest.tsv"
    manifest.write_text(f"{corpus}\tc4\t1.0\n", encoding="utf-8")
    docs = workdir / "docs.txt"
    vocab_file = workdir / "v.vocab"
    toks = workdir / "toks.bin"
    examples = workdir / "ex.bin"
    model = workdir / "model.bin"
    gen = workdir / "gen.txt"
    score = workdir / "score.txt"
    ref = workdir / "ref.txt"
    ref.write_text("бало вети кало.\n", encoding="utf-8")

    def forge(*args, stdout=None):
        proc = subprocess.run(
            [sys.executable, "-m", "denoiserforge.cli", *args],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, (args, proc.stderr)
        if stdout is not None:
            stdout.write_text(proc.stdout, encoding="utf-8")

    size = 256 + 150 + len(tk.default_specials())
    forge("ingest", "--manifest", str(manifest), "--out", str(docs), "--seed", "1")
    forge("train-vocab", "--in", str(docs), "--scheme", "bbpe", "--size", str(size), "--out", str(vocab_file))
    forge("encode", "--vocab", str(vocab_file), "--in", str(docs), "--out", str(toks))
    forge("mod", "--vocab", str(vocab_file), "--in", str(toks), "--out", str(examples), "--seed", "1")
    forge(
        "toylm", "train", "--vocab", str(vocab_file), "--in", str(examples),
        "--out", str(model), "--epochs", "2", "--lr", "1.0", "--seed", "1",
    )
    forge(
        "toylm", "generate", "--vocab", str(vocab_file), "--model", str(model),
        "--prefix", "бало", "--max-len", "16", stdout=gen,
    )
    forge("score", "--metric", "chrf", "--pred", str(gen), "--gold", str(ref), stdout=score)

    hashes = {}
    for artifact in (docs, vocab_file, toks, examples, model, gen, score):
        hashes[artifact.name] = hashlib.sha256(artifact.read_bytes()).hexdigest()
    return hashes


@pytest.mark.slow
def test_criterion_14_end_to_end_determinism(tmp_path):
    start = time.time()
    corpus = tmp_path / "corpus.txt"
    _write_10mb_corpus(corpus)
    assert corpus.stat().st_size >= 10 * 1024 * 1024
    first = _run_pipeline(tmp_path / "run1", corpus)
    second = _run_pipeline(tmp_path / "run2", corpus)
    elapsed = time.time() - start
    assert first == second
    assert elapsed < 300
    report(14, f"two pipeline runs produced byte-identical artifacts ({elapsed:.0f}s)")
