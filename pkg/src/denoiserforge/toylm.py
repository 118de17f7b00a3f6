"""A small trainable bigram language model and the evaluation protocols on it.

The model is a dense table of next-token logits per context token, optionally
interpolated with a unigram distribution:

    P(next | ctx) = interp * softmax(logits[ctx]) + (1 - interp) * softmax(unigram)

The first token of a sequence, having no context, is scored from the unigram
distribution. Everything downstream of the model is protocol code that works
for any autoregressive scorer: perplexity ranking over rendered candidates,
length-penalized log-probability with cross-validated thresholding, and beam
search with a repetition penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .metrics import mcc
from .objectives import IGNORE_ID, ObjectiveExample
from .tokenizer import TokenSeq, Vocab, encode


class ToyLmError(Exception):
    pass


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


@dataclass
class ToyModel:
    logits: np.ndarray  # [V, V], row = context token
    unigram_logits: np.ndarray  # [V]
    interp: float = 1.0
    vocab_id: str = ""
    _row_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.interp <= 1.0:
            raise ToyLmError(f"interpolation weight must be in [0,1], got {self.interp}")
        if self.logits.shape != (self.size, self.size):
            raise ToyLmError(f"logit table must be square, got {self.logits.shape}")

    @property
    def size(self) -> int:
        return len(self.unigram_logits)

    @classmethod
    def uniform(cls, size: int, vocab_id: str = "") -> "ToyModel":
        # broadcast_to keeps the table virtual, so large uniform models stay cheap
        return cls(
            logits=np.broadcast_to(np.zeros(size), (size, size)),
            unigram_logits=np.zeros(size),
            vocab_id=vocab_id,
        )

    @classmethod
    def random(cls, size: int, seed: int, scale: float = 1.0, interp: float = 1.0) -> "ToyModel":
        rng = np.random.default_rng(seed)
        return cls(
            logits=rng.normal(0, scale, (size, size)),
            unigram_logits=rng.normal(0, scale, size),
            interp=interp,
        )

    def first_log_probs(self) -> np.ndarray:
        cached = self._row_cache.get("first")
        if cached is None:
            cached = _log_softmax(np.asarray(self.unigram_logits, dtype=np.float64))
            self._row_cache["first"] = cached
        return cached

    def next_log_probs(self, ctx: int) -> np.ndarray:
        """Log of the interpolated next-token distribution for one context."""
        if not 0 <= ctx < self.size:
            raise ToyLmError(f"context token {ctx} out of range for size {self.size}")
        cached = self._row_cache.get(ctx)
        if cached is not None:
            return cached
        row = _log_softmax(np.asarray(self.logits[ctx], dtype=np.float64))
        if self.interp >= 1.0:
            mixed = row
        elif self.interp <= 0.0:
            mixed = self.first_log_probs()
        else:
            mixed = np.logaddexp(
                math.log(self.interp) + row,
                math.log(1 - self.interp) + self.first_log_probs(),
            )
        self._row_cache[ctx] = mixed
        return mixed

    def _check_ids(self, ids: Sequence[int]) -> None:
        for i in ids:
            if not 0 <= i < self.size:
                raise ToyLmError(f"token id {i} out of range for size {self.size}")


# ---------------------------------------------------------------------------
# Training


def training_pairs(examples: Iterable[ObjectiveExample]) -> list[tuple[int, int]]:
    """Extract (context, next) token pairs from objective examples.

    Position-aligned objectives (mlm, mlm_nsp, rtd_input, clm) pair each
    input token with its target at the same position, skipping ignored
    positions. Sequence-to-sequence objectives contribute consecutive bigrams
    within the input and within the target.
    """
    pairs: list[tuple[int, int]] = []
    for ex in examples:
        if ex.objective in ("mlm", "mlm_nsp", "rtd_input", "clm"):
            for ctx, tgt in zip(ex.input_ids.ids, ex.target_ids.ids):
                if tgt != IGNORE_ID:
                    pairs.append((ctx, tgt))
        else:
            for ids in (ex.input_ids.ids, ex.target_ids.ids):
                for ctx, tgt in zip(ids, ids[1:]):
                    if ctx != IGNORE_ID and tgt != IGNORE_ID:
                        pairs.append((ctx, tgt))
    return pairs


def _pair_counts(pairs: Sequence[tuple[int, int]], size: int) -> np.ndarray:
    counts = np.zeros((size, size), dtype=np.float64)
    if pairs:
        arr = np.asarray(pairs, dtype=np.int64)
        if arr.min() < 0 or arr.max() >= size:
            raise ToyLmError("training pair ids out of vocabulary range")
        np.add.at(counts, (arr[:, 0], arr[:, 1]), 1.0)
    return counts


def ce_and_grads(
    model: ToyModel, counts: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over counted pairs and its analytic gradients.

    Gradients are with respect to the bigram logit table and the unigram
    logits, for the mean (not summed) loss.
    """
    total = counts.sum()
    if total == 0:
        raise ToyLmError("no training pairs")
    lam = model.interp
    p_big = np.exp(_log_softmax(np.asarray(model.logits, dtype=np.float64)))
    p_uni = np.exp(_log_softmax(np.asarray(model.unigram_logits, dtype=np.float64)))
    p_mix = lam * p_big + (1 - lam) * p_uni[None, :]

    loss = -np.sum(counts * np.log(p_mix)) / total

    ratio = counts / p_mix
    w = lam * p_big * ratio
    grad_logits = (p_big * w.sum(axis=1, keepdims=True) - w) / total
    v = (1 - lam) * p_uni[None, :] * ratio
    grad_unigram = (p_uni * v.sum() - v.sum(axis=0)) / total
    return float(loss), grad_logits, grad_unigram


def train(
    model: ToyModel,
    examples: Iterable[ObjectiveExample],
    lr: float,
    epochs: int,
    seed: int = 0,
) -> tuple[ToyModel, list[float]]:
    """Full-batch gradient descent on the cross-entropy of target tokens.

    Returns a new model and the loss curve (mean cross-entropy after each
    epoch's update). Zero epochs returns the model unchanged with an empty
    curve. The seed is accepted for interface stability; full-batch descent
    is deterministic without it.
    """
    if lr <= 0:
        raise ToyLmError(f"learning rate must be positive, got {lr}")
    if epochs < 0:
        raise ToyLmError(f"epochs must be non-negative, got {epochs}")
    counts = _pair_counts(training_pairs(examples), model.size)
    logits = np.array(model.logits, dtype=np.float64, copy=True)
    unigram = np.array(model.unigram_logits, dtype=np.float64, copy=True)
    current = ToyModel(logits, unigram, model.interp, model.vocab_id)
    curve: list[float] = []
    for _ in range(epochs):
        _, grad_logits, grad_unigram = ce_and_grads(current, counts)
        logits = logits - lr * grad_logits
        unigram = unigram - lr * grad_unigram
        current = ToyModel(logits, unigram, model.interp, model.vocab_id)
        loss, _, _ = ce_and_grads(current, counts)
        curve.append(loss)
    return current, curve


def cross_entropy(model: ToyModel, examples: Iterable[ObjectiveExample]) -> float:
    counts = _pair_counts(training_pairs(examples), model.size)
    loss, _, _ = ce_and_grads(model, counts)
    return loss


# ---------------------------------------------------------------------------
# Scoring protocols


def perplexity(model: ToyModel, seq: TokenSeq | Sequence[int]) -> float:
    """exp of the mean negative log-likelihood over positions 2..n."""
    ids = list(seq.ids if isinstance(seq, TokenSeq) else seq)
    if len(ids) < 2:
        raise ToyLmError(f"perplexity needs at least 2 tokens, got {len(ids)}")
    model._check_ids(ids)
    nll = 0.0
    for ctx, nxt in zip(ids, ids[1:]):
        nll -= float(model.next_log_probs(ctx)[nxt])
    return math.exp(nll / (len(ids) - 1))


def sequence_log_prob(model: ToyModel, ids: Sequence[int]) -> float:
    """Total log-probability: unigram for the first token, bigram mixture after."""
    ids = list(ids)
    if not ids:
        raise ToyLmError("cannot score an empty sequence")
    model._check_ids(ids)
    logp = float(model.first_log_probs()[ids[0]])
    for ctx, nxt in zip(ids, ids[1:]):
        logp += float(model.next_log_probs(ctx)[nxt])
    return logp


@dataclass(frozen=True)
class PenLPConfig:
    alpha: float = 0.8
    pivot: int = 5

    def __post_init__(self) -> None:
        # alpha 0 is allowed and reduces the score to the raw log-probability
        if not 0.0 <= self.alpha <= 1.0:
            raise ToyLmError(f"alpha must be in [0,1], got {self.alpha}")
        if self.pivot < 0:
            raise ToyLmError(f"pivot must be >= 0, got {self.pivot}")


def penlp(
    model: ToyModel, seq: TokenSeq | Sequence[int], cfg: PenLPConfig = PenLPConfig()
) -> float:
    """Length-penalized log-probability:
    logP(s) / (((pivot + |s|) / (pivot + 1)) ** alpha)."""
    ids = list(seq.ids if isinstance(seq, TokenSeq) else seq)
    logp = sequence_log_prob(model, ids)
    penalty = ((cfg.pivot + len(ids)) / (cfg.pivot + 1)) ** cfg.alpha
    return logp / penalty


def classify_scores(scored: Sequence[tuple[str, float]]) -> str:
    """Label with the lowest score; ties go to the earliest candidate."""
    if len(scored) < 2:
        raise ToyLmError("need at least 2 candidates")
    best_label, best_score = scored[0]
    for label, score in scored[1:]:
        if score < best_score:
            best_label, best_score = label, score
    return best_label


def zero_shot_classify(
    model: ToyModel,
    rendered: Sequence[tuple[str, str]],
    vocab: Vocab,
    continuation_only: bool = False,
    prompt: str | None = None,
) -> str:
    """Pick the candidate whose rendered string has the lowest perplexity.

    With ``continuation_only`` set (and a ``prompt`` that every candidate
    string extends), only the continuation positions contribute to the score.
    """
    scored = []
    for label, text in rendered:
        ids = encode(text, vocab).ids
        if continuation_only:
            if prompt is None:
                raise ToyLmError("continuation_only scoring needs the prompt")
            skip = len(encode(prompt, vocab).ids)
            if len(ids) <= skip:
                raise ToyLmError("candidate does not extend the prompt")
            model._check_ids(ids)
            nll = 0.0
            for pos in range(max(skip, 1), len(ids)):
                nll -= float(model.next_log_probs(ids[pos - 1])[ids[pos]])
            scored.append((label, math.exp(nll / (len(ids) - max(skip, 1)))))
        else:
            scored.append((label, perplexity(model, ids)))
    return classify_scores(scored)


# ---------------------------------------------------------------------------
# Threshold fitting


class FitResult(NamedTuple):
    threshold: float
    mcc: float


def _sweep_mcc(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Best (threshold, mcc) over midpoints of sorted scores; ties take the
    smallest threshold. Predictions are ``score > threshold``."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    n = len(s)
    total_pos = int(y.sum())
    cum_pos = np.concatenate(([0], np.cumsum(y)))
    best_t = None
    best_m = -2.0
    for k in range(1, n):
        if s[k - 1] == s[k]:
            continue
        tp = total_pos - cum_pos[k]
        fn = cum_pos[k]
        fp = (n - k) - tp
        tn = k - fn
        denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        m = 0.0 if denom == 0 else (tp * tn - fp * fn) / math.sqrt(denom)
        if m > best_m:
            best_m = m
            best_t = (s[k - 1] + s[k]) / 2
    if best_t is None:
        best_t = float(s[0])
        best_m = 0.0
    return float(best_t), float(best_m)


def fit_threshold(
    scores: Sequence[tuple[float, int]], folds: int = 10, seed: int = 0
) -> FitResult:
    """Cross-validated threshold for a score-based binary classifier.

    For each fold, the threshold maximizing MCC on the held-in portion is
    found by sweeping midpoints of the sorted held-in scores. The final
    threshold is the mean over folds; the reported MCC pools each fold's
    held-out predictions.
    """
    values = np.array([s for s, _ in scores], dtype=np.float64)
    labels = np.array([int(l) for _, l in scores], dtype=np.int64)
    n = len(values)
    if n < folds:
        raise ToyLmError(f"need at least {folds} examples, got {n}")
    classes = set(labels.tolist())
    if classes != {0, 1}:
        raise ToyLmError(f"need both classes 0 and 1, got {sorted(classes)}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold_slices = np.array_split(order, folds)

    thresholds = []
    pooled_preds = np.zeros(n, dtype=np.int64)
    for held_out in fold_slices:
        held_in = np.setdiff1d(order, held_out, assume_unique=True)
        t, _ = _sweep_mcc(values[held_in], labels[held_in])
        thresholds.append(t)
        pooled_preds[held_out] = (values[held_out] > t).astype(np.int64)
    threshold = float(np.mean(thresholds))
    validation = mcc(pooled_preds.tolist(), labels.tolist()).score
    return FitResult(threshold=threshold, mcc=validation)


# ---------------------------------------------------------------------------
# Beam search


@dataclass
class _Hypothesis:
    tokens: tuple[int, ...]  # generated tokens, eos included when reached
    logp: float
    seen: frozenset[int]
    finished: bool

    def score(self) -> float:
        return self.logp / max(1, len(self.tokens))


def _beam(
    model: ToyModel,
    prefix_ids: list[int],
    beams: int,
    rep_penalty: float,
    max_len: int,
    eos_id: int | None,
) -> _Hypothesis:
    live = [_Hypothesis((), 0.0, frozenset(prefix_ids), False)]
    finished: list[_Hypothesis] = []
    last_of = lambda hyp: hyp.tokens[-1] if hyp.tokens else prefix_ids[-1]

    for _ in range(max_len):
        if not live:
            break
        candidates: list[tuple[float, tuple[int, ...], _Hypothesis, int, float]] = []
        for hyp in live:
            lp = np.array(model.next_log_probs(last_of(hyp)), dtype=np.float64, copy=True)
            if rep_penalty > 1.0 and hyp.seen:
                seen = np.fromiter(hyp.seen, dtype=np.int64)
                # log-probs are non-positive; scaling by the penalty pushes
                # already-seen tokens down
                lp[seen] = lp[seen] * rep_penalty
            top = np.lexsort((np.arange(model.size), -lp))[:beams]
            for token in top:
                token = int(token)
                new_logp = hyp.logp + float(lp[token])
                candidates.append((-new_logp, hyp.tokens + (token,), hyp, token, new_logp))
        candidates.sort(key=lambda c: (c[0], c[1]))
        next_live = []
        for _, new_tokens, hyp, token, new_logp in candidates[:beams]:
            new_hyp = _Hypothesis(
                tokens=new_tokens,
                logp=new_logp,
                seen=hyp.seen | {token},
                finished=eos_id is not None and token == eos_id,
            )
            if new_hyp.finished:
                finished.append(new_hyp)
            else:
                next_live.append(new_hyp)
        live = next_live

    pool = finished + live
    pool.sort(key=lambda h: (-h.score(), h.tokens))
    return pool[0]


def beam_search(
    model: ToyModel,
    prefix: TokenSeq | Sequence[int],
    beams: int = 5,
    rep_penalty: float = 1.05,
    max_len: int = 64,
    eos_id: int | None = None,
) -> TokenSeq:
    """Beam search over next-token log-probabilities.

    Tokens already present in a hypothesis (prefix included) have their
    log-probability scaled by ``rep_penalty`` before ranking. Hypotheses end
    at ``eos_id`` or after ``max_len`` generated tokens; the result is the
    best hypothesis by length-normalized log-probability. The greedy
    continuation is always kept as a candidate, so the returned hypothesis
    never scores below it. The returned sequence excludes the prefix and any
    final eos token.
    """
    if beams < 1:
        raise ToyLmError(f"beams must be >= 1, got {beams}")
    if rep_penalty < 1.0:
        raise ToyLmError(f"repetition penalty must be >= 1, got {rep_penalty}")
    if max_len < 1:
        raise ToyLmError(f"max_len must be >= 1, got {max_len}")
    if isinstance(prefix, TokenSeq):
        prefix_ids = list(prefix.ids)
        vocab_id = prefix.vocab_id
    else:
        prefix_ids = list(prefix)
        vocab_id = ""
    if not prefix_ids:
        raise ToyLmError("prefix must be non-empty")
    model._check_ids(prefix_ids)

    best = _beam(model, prefix_ids, beams, rep_penalty, max_len, eos_id)
    if beams > 1:
        greedy = _beam(model, prefix_ids, 1, rep_penalty, max_len, eos_id)
        if greedy.score() > best.score():
            best = greedy
    tokens = list(best.tokens)
    if eos_id is not None and tokens and tokens[-1] == eos_id:
        tokens = tokens[:-1]
    return TokenSeq(tokens, vocab_id)


# ---------------------------------------------------------------------------
# Serialization

_MODEL_HEADER = "denoiserforge-toylm"


def save_model(model: ToyModel, path: str | Path) -> None:
    header = f"{_MODEL_HEADER} v1 {model.size} {model.interp!r}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(model.logits, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.unigram_logits, dtype="<f4").tobytes())


def load_model(path: str | Path) -> ToyModel:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 4 or header[0] != _MODEL_HEADER or header[1] != "v1":
            raise ToyLmError(f"{path}: bad model header")
        size = int(header[2])
        interp = float(header[3])
        logits = np.frombuffer(fh.read(4 * size * size), dtype="<f4").reshape(size, size)
        unigram = np.frombuffer(fh.read(4 * size), dtype="<f4")
    return ToyModel(
        logits=logits.astype(np.float64),
        unigram_logits=unigram.astype(np.float64),
        interp=interp,
    )
