import math
from collections import Counter

import numpy as np
import pytest

from denoiserforge import objectives as obj
from denoiserforge import tokenizer as tk
from denoiserforge import toylm as tl
from denoiserforge.tokenizer import TokenSeq


def clm_example(ids):
    return obj.ObjectiveExample(
        TokenSeq(list(ids), ""),
        TokenSeq(list(ids[1:]) + [obj.IGNORE_ID], ""),
        "clm",
        {},
    )


# ---------------------------------------------------------------------------
# Model basics


def test_rows_are_distributions():
    model = tl.ToyModel.random(6, seed=0, interp=0.6)
    for ctx in range(6):
        probs = np.exp(model.next_log_probs(ctx))
        assert abs(probs.sum() - 1.0) < 1e-9
    assert abs(np.exp(model.first_log_probs()).sum() - 1.0) < 1e-9


def test_mixture_identity():
    model = tl.ToyModel.random(5, seed=1, interp=0.3)
    big = np.exp(model.logits - np.max(model.logits, axis=1, keepdims=True))
    big = big / big.sum(axis=1, keepdims=True)
    uni = np.exp(model.unigram_logits - model.unigram_logits.max())
    uni = uni / uni.sum()
    for ctx in range(5):
        mixed = 0.3 * big[ctx] + 0.7 * uni
        assert np.allclose(np.exp(model.next_log_probs(ctx)), mixed, atol=1e-12)


def test_uniform_perplexity_is_vocab_size():
    model = tl.ToyModel.uniform(50_000)
    seq = TokenSeq([3, 49_999, 120, 7], "")
    assert math.isclose(tl.perplexity(model, seq), 50_000, rel_tol=1e-9)


def test_deterministic_model_perplexity_approaches_one():
    size = 4
    logits = np.full((size, size), -40.0)
    for i in range(size):
        logits[i, (i + 1) % size] = 40.0
    model = tl.ToyModel(logits, np.zeros(size))
    seq = [0, 1, 2, 3, 0, 1]
    assert tl.perplexity(model, seq) < 1.0 + 1e-9


def test_perplexity_hand_case():
    # P(1|0)=0.5, P(2|1)=0.25 by construction
    logits = np.log(
        np.array(
            [
                [0.25, 0.5, 0.25],
                [0.5, 0.25, 0.25],
                [1 / 3, 1 / 3, 1 / 3],
            ]
        )
    )
    model = tl.ToyModel(logits, np.zeros(3))
    got = tl.perplexity(model, [0, 1, 2])
    expected = math.exp(-(math.log(0.5) + math.log(0.25)) / 2)
    assert math.isclose(got, expected, rel_tol=1e-12)


def test_perplexity_checks_inputs():
    model = tl.ToyModel.uniform(4)
    with pytest.raises(tl.ToyLmError):
        tl.perplexity(model, [1])
    with pytest.raises(tl.ToyLmError):
        tl.perplexity(model, [1, 9])


# ---------------------------------------------------------------------------
# Training


def test_training_learns_deterministic_bigram():
    ids = [0, 1] * 300
    model0 = tl.ToyModel(np.zeros((2, 2)), np.zeros(2))
    model, curve = tl.train(model0, [clm_example(ids)], lr=5.0, epochs=300)
    assert np.exp(model.next_log_probs(0)[1]) > 0.99
    assert np.exp(model.next_log_probs(1)[0]) > 0.99
    assert curve[-1] < curve[0]


def test_zero_epochs_is_identity():
    model0 = tl.ToyModel.random(3, seed=2)
    model, curve = tl.train(model0, [clm_example([0, 1, 2, 0])], lr=1.0, epochs=0)
    assert np.array_equal(model.logits, model0.logits)
    assert np.array_equal(model.unigram_logits, model0.unigram_logits)
    assert curve == []


def test_bad_learning_rate():
    with pytest.raises(tl.ToyLmError):
        tl.train(tl.ToyModel.uniform(2), [clm_example([0, 1])], lr=0.0, epochs=1)


def test_loss_non_increasing_small_lr():
    rng = np.random.default_rng(3)
    ids = [int(x) for x in rng.integers(0, 5, 400)]
    model0 = tl.ToyModel.random(5, seed=4, interp=0.8)
    examples = [clm_example(ids)]
    initial = tl.cross_entropy(model0, examples)
    _, curve = tl.train(model0, examples, lr=1e-2, epochs=50)
    series = [initial] + curve
    assert all(a >= b - 1e-12 for a, b in zip(series, series[1:]))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    h = 1e-5
    for trial in range(10):
        interp = float(rng.choice([1.0, 0.5, 0.9]))
        model = tl.ToyModel.random(5, seed=100 + trial, interp=interp)
        counts = rng.integers(0, 5, (5, 5)).astype(float)
        counts[0, 0] += 1  # guarantee at least one pair
        _, grad_logits, grad_unigram = tl.ce_and_grads(model, counts)
        max_err = 0.0
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
                max_err = max(max_err, abs((up - down) / (2 * h) - grad_logits[i, j]))
            ub = model.unigram_logits.copy()
            ub[i] += h
            up, _, _ = tl.ce_and_grads(tl.ToyModel(model.logits, ub, interp), counts)
            ub[i] -= 2 * h
            down, _, _ = tl.ce_and_grads(tl.ToyModel(model.logits, ub, interp), counts)
            max_err = max(max_err, abs((up - down) / (2 * h) - grad_unigram[i]))
        assert max_err < 1e-6


def test_training_pairs_extraction():
    aligned = obj.ObjectiveExample(
        TokenSeq([5, 6, 7], ""), TokenSeq([obj.IGNORE_ID, 9, obj.IGNORE_ID], ""), "mlm", {}
    )
    assert tl.training_pairs([aligned]) == [(6, 9)]
    seq2seq = obj.ObjectiveExample(
        TokenSeq([1, 2], ""), TokenSeq([3, 4], ""), "span_corruption", {}
    )
    assert tl.training_pairs([seq2seq]) == [(1, 2), (3, 4)]


# ---------------------------------------------------------------------------
# Zero-shot classification


def test_classify_scores_argmin_and_ties():
    assert tl.classify_scores([("a", 2.0), ("b", 1.0)]) == "b"
    assert tl.classify_scores([("a", 1.0), ("b", 1.0)]) == "a"  # tie rule
    with pytest.raises(tl.ToyLmError):
        tl.classify_scores([("only", 1.0)])


def test_classify_scores_monotone_invariance():
    rng = np.random.default_rng(6)
    for _ in range(100):
        scores = [(f"l{i}", float(s)) for i, s in enumerate(rng.random(5) + 0.1)]
        base = tl.classify_scores(scores)
        scaled = [(l, 3.7 * s) for l, s in scores]
        assert tl.classify_scores(scaled) == base
        shifted = [(l, s**2) for l, s in scores]  # monotone on positives
        assert tl.classify_scores(shifted) == base


def test_zero_shot_picks_trained_label():
    vocab = tk.train_vocab(
        ["ab cd ef yes", "cd ab ef yes", "ef ab cd yes"],
        "bbpe",
        256 + 5 + len(tk.default_specials()),
    )
    corpus_docs = ["ab cd yes", "cd ef yes", "ef ab yes", "ab ef yes"] * 20
    seqs = [tk.encode(d, vocab) for d in corpus_docs]
    examples = list(obj.pack_clm(seqs, 16, vocab))
    model0 = tl.ToyModel(
        np.zeros((vocab.size, vocab.size)), np.zeros(vocab.size), vocab_id=vocab.vocab_id
    )
    model, _ = tl.train(model0, examples, lr=2.0, epochs=50)
    pick = tl.zero_shot_classify(
        model, [("yes", "cd ab yes"), ("no", "cd ab no")], vocab
    )
    assert pick == "yes"


def test_zero_shot_identical_candidates_tie():
    vocab = tk.train_vocab(["x y z"], "bbpe", 256, specials=[])
    model = tl.ToyModel.uniform(vocab.size, vocab_id=vocab.vocab_id)
    pick = tl.zero_shot_classify(model, [("first", "x y"), ("second", "x y")], vocab)
    assert pick == "first"


def test_zero_shot_continuation_only():
    vocab = tk.train_vocab(["p q r s"], "bbpe", 256, specials=[])
    model = tl.ToyModel.random(vocab.size, seed=8)
    prompt = "p q"
    full = tl.zero_shot_classify(
        model, [("r", "p q r"), ("s", "p q s")], vocab,
        continuation_only=True, prompt=prompt,
    )
    assert full in ("r", "s")


# ---------------------------------------------------------------------------
# PenLP


def test_penlp_single_token_identity():
    # unigram gives the scored token probability exactly 1/e
    uni = np.log(np.array([1 / math.e, 1 - 1 / math.e]))
    model = tl.ToyModel(np.zeros((2, 2)), uni)
    assert math.isclose(tl.penlp(model, [0]), -1.0, abs_tol=1e-12)


def test_penlp_alpha_zero_is_raw_logprob():
    model = tl.ToyModel.random(4, seed=9)
    seq = [0, 2, 1, 3]
    cfg = tl.PenLPConfig(alpha=0.0)
    assert math.isclose(
        tl.penlp(model, seq, cfg), tl.sequence_log_prob(model, seq), rel_tol=1e-12
    )


def test_penlp_hand_case():
    probs = np.array(
        [
            [0.5, 0.3, 0.2],
            [0.1, 0.6, 0.3],
            [0.25, 0.25, 0.5],
        ]
    )
    uni = np.array([0.2, 0.5, 0.3])
    model = tl.ToyModel(np.log(probs), np.log(uni))
    seq = [1, 0, 0, 2, 2, 1]
    logp = math.log(0.5) + math.log(0.1) + math.log(0.5) + math.log(0.2) + math.log(0.5) + math.log(0.25)
    penalty = ((5 + 6) / (5 + 1)) ** 0.8
    assert math.isclose(tl.penlp(model, seq), logp / penalty, rel_tol=1e-12)


def test_penlp_config_validation():
    with pytest.raises(tl.ToyLmError):
        tl.PenLPConfig(alpha=1.5)
    with pytest.raises(tl.ToyLmError):
        tl.PenLPConfig(pivot=-1)


# ---------------------------------------------------------------------------
# Threshold fitting


def test_fit_threshold_separable():
    rng = np.random.default_rng(10)
    scores = [(float(-10 + 3 * rng.random()), 1) for _ in range(60)]
    scores += [(float(-23 + 3 * rng.random()), 0) for _ in range(60)]
    result = tl.fit_threshold(scores, folds=10, seed=1)
    assert -20 < result.threshold < -10
    assert result.mcc == 1.0


def test_fit_threshold_random_labels():
    rng = np.random.default_rng(5)
    values = rng.normal(0, 1, 1000)
    labels = rng.integers(0, 2, 1000)
    result = tl.fit_threshold(
        list(zip(values.tolist(), labels.tolist())), folds=10, seed=5
    )
    assert abs(result.mcc) < 0.1


def test_fit_threshold_shift_invariance_exact():
    # integer scores make every midpoint arithmetic exact in floating point
    base = [(float(i), int(i > 12)) for i in range(25)]
    shifted = [(s + 8.0, l) for s, l in base]
    r_base = tl.fit_threshold(base, folds=5, seed=3)
    r_shift = tl.fit_threshold(shifted, folds=5, seed=3)
    assert r_shift.threshold == r_base.threshold + 8.0
    assert r_shift.mcc == r_base.mcc


def test_fit_threshold_validation():
    with pytest.raises(tl.ToyLmError):
        tl.fit_threshold([(1.0, 1)] * 20, folds=10, seed=0)  # single class
    with pytest.raises(tl.ToyLmError):
        tl.fit_threshold([(1.0, 1), (0.0, 0)], folds=10, seed=0)  # too few


# ---------------------------------------------------------------------------
# Beam search


def greedy_decode(model, prefix, rep_penalty, max_len, eos_id):
    """Independent greedy oracle with the same penalty semantics."""
    seen = set(prefix)
    out = []
    last = prefix[-1]
    for _ in range(max_len):
        lp = np.array(model.next_log_probs(last), copy=True)
        for t in seen:
            lp[t] = lp[t] * rep_penalty
        token = int(np.lexsort((np.arange(len(lp)), -lp))[0])
        if eos_id is not None and token == eos_id:
            break
        out.append(token)
        seen.add(token)
        last = token
    return out


def test_beam_one_equals_greedy_oracle():
    for seed in range(200):
        model = tl.ToyModel.random(7, seed=seed, scale=1.5)
        got = tl.beam_search(model, [0], beams=1, rep_penalty=1.05, max_len=8, eos_id=6)
        want = greedy_decode(model, [0], 1.05, 8, 6)
        assert got.ids == want, seed


def test_beam_chain_model():
    size = 4  # 0 -> 1 -> 2 -> eos(3)
    logits = np.full((size, size), -20.0)
    logits[0, 1] = 5.0
    logits[1, 2] = 5.0
    logits[2, 3] = 5.0
    model = tl.ToyModel(logits, np.zeros(size))
    out = tl.beam_search(model, [0], beams=5, rep_penalty=1.0, max_len=10, eos_id=3)
    assert out.ids == [1, 2]


def test_beam_validation():
    model = tl.ToyModel.uniform(4)
    with pytest.raises(tl.ToyLmError):
        tl.beam_search(model, [0], beams=0)
    with pytest.raises(tl.ToyLmError):
        tl.beam_search(model, [0], rep_penalty=0.9)
    with pytest.raises(tl.ToyLmError):
        tl.beam_search(model, [0], max_len=0)


def loop_prone_model(seed):
    """Token 0 is a slightly preferred attractor from every context; tokens
    1..4 form the alternative cycle."""
    rng = np.random.default_rng(seed)
    size = 6
    logits = np.full((size, size), -8.0) + rng.normal(0, 0.01, (size, size))
    nxt = {0: 1, 1: 2, 2: 3, 3: 4, 4: 1, 5: 1}
    for t in range(size):
        logits[t, 0] = 1.0 + rng.uniform(0.005, 0.03)
        logits[t, nxt[t]] = 1.0
    return tl.ToyModel(logits, np.zeros(size))


def max_repeat(ids):
    return max(Counter(ids).values()) if ids else 0


def test_repetition_penalty_reduces_repeats():
    wins = 0
    for seed in range(100):
        model = loop_prone_model(seed)
        plain = tl.beam_search(model, [0], beams=5, rep_penalty=1.0, max_len=16)
        penalized = tl.beam_search(model, [0], beams=5, rep_penalty=1.05, max_len=16)
        if max_repeat(penalized.ids) < max_repeat(plain.ids):
            wins += 1
    assert wins >= 90


def test_beam_score_at_least_greedy():
    for seed in range(100):
        model = tl.ToyModel.random(8, seed=1000 + seed, scale=2.0)
        beam = tl._beam(model, [0], 4, 1.05, 10, 7)
        greedy = tl._beam(model, [0], 1, 1.05, 10, 7)
        public = tl.beam_search(model, [0], beams=4, rep_penalty=1.05, max_len=10, eos_id=7)
        assert max(beam.score(), greedy.score()) >= greedy.score()
        # the public result realizes the better of the two
        returned = beam if beam.score() >= greedy.score() else greedy
        expected_ids = list(returned.tokens)
        if expected_ids and expected_ids[-1] == 7:
            expected_ids = expected_ids[:-1]
        assert public.ids == expected_ids


# ---------------------------------------------------------------------------
# Serialization


def test_model_roundtrip(tmp_path):
    model = tl.ToyModel.random(6, seed=11, interp=0.75)
    path = tmp_path / "model.bin"
    tl.save_model(model, path)
    loaded = tl.load_model(path)
    assert loaded.size == 6
    assert loaded.interp == 0.75
    assert np.allclose(loaded.logits, model.logits, atol=1e-6)
    header = path.read_bytes().split(b"\n", 1)[0]
    assert header == b"denoiserforge-toylm v1 6 0.75"
