"""Evaluation metrics: classification, generation, the detox combiner, CO2.

Conventions used throughout:

* Tokenization is plain whitespace splitting; no stemming or lowercasing.
* BLEU is corpus-level 4-gram with brevity penalty, reported in [0, 1].
  Precisions for n >= 2 get add-one smoothing; a zero unigram precision
  floors the score at exactly 0.
* chrF1 is a character 6-gram F-score with beta=1 on whitespace-stripped
  text, reported in [0, 100]. Orders with no grams anywhere in the corpus
  are skipped when averaging.
* ROUGE-L is the LCS-based F1 averaged over examples, in [0, 1].
* METEOR here is a reduced variant: exact unigram matches only, recall
  weighted 9:1, with the standard fragmentation penalty.
* SARI averages the add/keep F-scores and the delete precision over n-gram
  orders 1..4, in [0, 100]. Components with nothing to do and nothing done
  count as satisfied.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

ReferenceSet = Sequence[str] | str


class MetricError(Exception):
    pass


@dataclass
class MetricReport:
    name: str
    score: float
    support: int
    per_example: list[float] | None = None


def merge_reports(reports: Iterable[MetricReport]) -> MetricReport:
    """Support-weighted mean of reports that share a name."""
    reports = list(reports)
    if not reports:
        raise MetricError("no reports to merge")
    name = reports[0].name
    if any(r.name != name for r in reports):
        raise MetricError("cannot merge reports with different names")
    total = sum(r.support for r in reports)
    if total == 0:
        raise MetricError("merged support is zero")
    score = sum(r.score * r.support for r in reports) / total
    return MetricReport(name=name, score=score, support=total)


def _as_ref_list(refs: ReferenceSet) -> list[str]:
    if isinstance(refs, str):
        return [refs]
    return list(refs)


def _check_lengths(*lists) -> int:
    lengths = {len(x) for x in lists}
    if len(lengths) != 1:
        raise MetricError(f"length mismatch: {sorted(len(x) for x in lists)}")
    n = lengths.pop()
    if n == 0:
        raise MetricError("empty input")
    return n


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# Classification


def mcc(preds: Sequence, golds: Sequence) -> MetricReport:
    """Matthews correlation from the confusion matrix (multiclass form).

    Degenerate cases with a zero denominator (all predictions or all golds a
    single class) score 0 by convention.
    """
    n = _check_lengths(preds, golds)
    labels = sorted({str(x) for x in preds} | {str(x) for x in golds})
    index = {lab: i for i, lab in enumerate(labels)}
    k = len(labels)
    conf = [[0] * k for _ in range(k)]
    for p, g in zip(preds, golds):
        conf[index[str(g)]][index[str(p)]] += 1

    correct = sum(conf[i][i] for i in range(k))
    t = [sum(conf[i]) for i in range(k)]  # gold counts
    p = [sum(conf[i][j] for i in range(k)) for j in range(k)]  # predicted counts
    s = n
    cov = correct * s - sum(pi * ti for pi, ti in zip(p, t))
    denom_p = s * s - sum(pi * pi for pi in p)
    denom_t = s * s - sum(ti * ti for ti in t)
    if denom_p <= 0 or denom_t <= 0:
        return MetricReport("mcc", 0.0, n)
    return MetricReport("mcc", cov / math.sqrt(denom_p * denom_t), n)


def _token_f1(pred: str, gold: str) -> float:
    pred_tokens = pred.split()
    gold_tokens = gold.split()
    if not pred_tokens or not gold_tokens:
        return 1.0 if pred_tokens == gold_tokens else 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_em(
    preds: Sequence[str],
    golds: Sequence[ReferenceSet],
    groups: Sequence | None = None,
) -> tuple[MetricReport, MetricReport]:
    """Bag-of-tokens F1 and exact match, averaged over examples.

    Each gold may be a single string or a set of acceptable answers (the
    best-matching one counts). With ``groups`` given, F1 is macro-averaged
    per group first (the per-question variant) and reported as ``f1_a``.
    """
    n = _check_lengths(preds, golds)
    if groups is not None and len(groups) != n:
        raise MetricError("groups length mismatch")
    f1s = []
    ems = []
    for pred, gold in zip(preds, golds):
        gold_list = _as_ref_list(gold)
        if not gold_list:
            raise MetricError("empty gold set")
        f1s.append(max(_token_f1(pred, g) for g in gold_list))
        ems.append(max(1.0 if pred.strip() == g.strip() else 0.0 for g in gold_list))
    if groups is None:
        f1_report = MetricReport("f1", sum(f1s) / n, n, per_example=f1s)
    else:
        by_group: dict = {}
        for g, score in zip(groups, f1s):
            by_group.setdefault(g, []).append(score)
        group_means = [sum(v) / len(v) for v in by_group.values()]
        f1_report = MetricReport(
            "f1_a", sum(group_means) / len(group_means), n, per_example=f1s
        )
    em_report = MetricReport("em", sum(ems) / n, n, per_example=ems)
    return f1_report, em_report


# ---------------------------------------------------------------------------
# Generation metrics


def bleu(predictions: Sequence[str], references: Sequence[ReferenceSet]) -> MetricReport:
    n = _check_lengths(predictions, references)
    match = [0] * 4
    total = [0] * 4
    hyp_len = 0
    ref_len = 0
    for pred, refs in zip(predictions, references):
        pred_tokens = pred.split()
        ref_token_lists = [r.split() for r in _as_ref_list(refs)]
        hyp_len += len(pred_tokens)
        # closest reference length, ties to the shorter
        ref_len += min(
            (abs(len(r) - len(pred_tokens)), len(r)) for r in ref_token_lists
        )[1]
        for order in range(1, 5):
            pred_grams = _ngrams(pred_tokens, order)
            if not pred_grams:
                continue
            best = Counter()
            for ref_tokens in ref_token_lists:
                ref_grams = _ngrams(ref_tokens, order)
                for gram, count in ref_grams.items():
                    if count > best[gram]:
                        best[gram] = count
            clipped = pred_grams & best
            match[order - 1] += sum(clipped.values())
            total[order - 1] += sum(pred_grams.values())
    if hyp_len == 0 or total[0] == 0 or match[0] == 0:
        return MetricReport("bleu", 0.0, n)
    log_sum = math.log(match[0] / total[0])
    for order in range(2, 5):
        log_sum += math.log((match[order - 1] + 1) / (total[order - 1] + 1))
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1 - ref_len / hyp_len)
    return MetricReport("bleu", brevity * math.exp(log_sum / 4), n)


def chrf1(predictions: Sequence[str], references: Sequence[ReferenceSet]) -> MetricReport:
    n = _check_lengths(predictions, references)
    orders = 6
    match = [0] * orders
    hyp_total = [0] * orders
    ref_total = [0] * orders
    for pred, refs in zip(predictions, references):
        pred_chars = "".join(pred.split())
        ref_list = _as_ref_list(refs)
        # single best reference per example by total character overlap
        best_chars = max(
            ("".join(r.split()) for r in ref_list),
            key=lambda rc: sum((Counter(pred_chars) & Counter(rc)).values()),
        )
        for order in range(1, orders + 1):
            pg = _ngrams(pred_chars, order)
            rg = _ngrams(best_chars, order)
            match[order - 1] += sum((pg & rg).values())
            hyp_total[order - 1] += sum(pg.values())
            ref_total[order - 1] += sum(rg.values())
    f_scores = []
    for order in range(orders):
        if hyp_total[order] == 0 and ref_total[order] == 0:
            continue
        precision = match[order] / hyp_total[order] if hyp_total[order] else 0.0
        recall = match[order] / ref_total[order] if ref_total[order] else 0.0
        f = (
            2 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        f_scores.append(f)
    score = 100 * sum(f_scores) / len(f_scores) if f_scores else 0.0
    return MetricReport("chrf1", score, n)


def _lcs_len(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(predictions: Sequence[str], references: Sequence[ReferenceSet]) -> MetricReport:
    n = _check_lengths(predictions, references)
    scores = []
    for pred, refs in zip(predictions, references):
        pred_tokens = pred.split()
        best = 0.0
        for ref in _as_ref_list(refs):
            ref_tokens = ref.split()
            lcs = _lcs_len(pred_tokens, ref_tokens)
            if lcs == 0:
                continue
            precision = lcs / len(pred_tokens)
            recall = lcs / len(ref_tokens)
            best = max(best, 2 * precision * recall / (precision + recall))
        scores.append(best)
    return MetricReport("rougeL", sum(scores) / n, n, per_example=scores)


def _meteor_single(pred_tokens: list[str], ref_tokens: list[str]) -> float:
    if not pred_tokens or not ref_tokens:
        return 0.0
    # Greedy left-to-right alignment to the earliest unused identical token.
    used = [False] * len(ref_tokens)
    alignment = []
    for i, tok in enumerate(pred_tokens):
        for j, ref_tok in enumerate(ref_tokens):
            if not used[j] and tok == ref_tok:
                used[j] = True
                alignment.append((i, j))
                break
    m = len(alignment)
    if m == 0:
        return 0.0
    chunks = 1
    for (i1, j1), (i2, j2) in zip(alignment, alignment[1:]):
        if i2 != i1 + 1 or j2 != j1 + 1:
            chunks += 1
    precision = m / len(pred_tokens)
    recall = m / len(ref_tokens)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1 - penalty)


def meteor_lite(predictions: Sequence[str], references: Sequence[ReferenceSet]) -> MetricReport:
    n = _check_lengths(predictions, references)
    scores = []
    for pred, refs in zip(predictions, references):
        pred_tokens = pred.split()
        scores.append(
            max(_meteor_single(pred_tokens, r.split()) for r in _as_ref_list(refs))
        )
    return MetricReport("meteor", sum(scores) / n, n, per_example=scores)


def _pr_f(match: float, cand_total: float, target_total: float) -> float:
    """F1 with the vacuous-success convention for empty sides."""
    if cand_total > 0:
        precision = match / cand_total
    else:
        precision = 1.0 if target_total == 0 else 0.0
    if target_total > 0:
        recall = match / target_total
    else:
        recall = 1.0 if cand_total == 0 else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _sari_order(src: Counter, cand: Counter, refs: list[Counter]) -> float:
    r = len(refs)
    src_r = Counter({g: c * r for g, c in src.items()})
    cand_r = Counter({g: c * r for g, c in cand.items()})
    ref_sum: Counter = Counter()
    for rc in refs:
        ref_sum.update(rc)

    # keep: n-grams retained from the source
    keep_cand = src_r & cand_r
    keep_target = src_r & ref_sum
    keep_match = keep_cand & keep_target
    f_keep = _pr_f(
        sum(keep_match.values()), sum(keep_cand.values()), sum(keep_target.values())
    )

    # add: n-grams introduced beyond the source (set semantics, one copy each)
    add_cand = Counter({g: 1 for g in cand if g not in src})
    add_target = Counter({g: 1 for g in ref_sum if g not in src})
    add_match = add_cand & add_target
    f_add = _pr_f(
        sum(add_match.values()), sum(add_cand.values()), sum(add_target.values())
    )

    # delete: n-grams dropped from the source, precision only
    del_cand = src_r - cand_r
    del_target = src_r - ref_sum
    del_match = del_cand & del_target
    cand_total = sum(del_cand.values())
    if cand_total > 0:
        p_del = sum(del_match.values()) / cand_total
    else:
        p_del = 1.0 if sum(del_target.values()) == 0 else 0.0

    return (f_add + f_keep + p_del) / 3


def sari(
    sources: Sequence[str],
    predictions: Sequence[str],
    references: Sequence[ReferenceSet],
) -> MetricReport:
    """Simplification score over add/keep/delete operations, n-grams 1..4."""
    n = _check_lengths(sources, predictions, references)
    scores = []
    for src, pred, refs in zip(sources, predictions, references):
        src_tokens = src.split()
        pred_tokens = pred.split()
        ref_token_lists = [r.split() for r in _as_ref_list(refs)]
        if not ref_token_lists:
            raise MetricError("each example needs at least one reference")
        per_order = []
        for order in range(1, 5):
            per_order.append(
                _sari_order(
                    _ngrams(src_tokens, order),
                    _ngrams(pred_tokens, order),
                    [_ngrams(rt, order) for rt in ref_token_lists],
                )
            )
        scores.append(100 * sum(per_order) / len(per_order))
    return MetricReport("sari", sum(scores) / n, n, per_example=scores)


# ---------------------------------------------------------------------------
# Detox combiner and CO2


def joint_detox(
    sta: Sequence[float], sim: Sequence[float], fl: Sequence[float]
) -> MetricReport:
    """Per-example product of the three component probabilities, mean, x100."""
    n = _check_lengths(sta, sim, fl)
    products = []
    for values in zip(sta, sim, fl):
        for v in values:
            if not 0.0 <= v <= 1.0:
                raise MetricError(f"component {v} outside [0, 1]")
        products.append(values[0] * values[1] * values[2])
    return MetricReport(
        "joint", 100 * sum(products) / n, n, per_example=[100 * p for p in products]
    )


@dataclass(frozen=True)
class Co2Params:
    pue: float
    kwh: float
    intensity: float  # grams CO2 per kWh

    def __post_init__(self) -> None:
        for name, value in (("pue", self.pue), ("kwh", self.kwh), ("intensity", self.intensity)):
            if not math.isfinite(value):
                raise MetricError(f"{name} must be finite")
            if value < 0:
                raise MetricError(f"{name} must be non-negative")
        if self.pue < 1:
            raise MetricError("pue must be >= 1")


def co2(params: Co2Params) -> float:
    """Emissions in kilograms: pue * kwh * intensity / 1000."""
    return params.pue * params.kwh * params.intensity / 1000


# ---------------------------------------------------------------------------
# Pluggable embedding similarity (stand-in for encoder-based scoring)


def _char_ngram_vector(text: str, order: int = 3) -> Counter:
    chars = "".join(text.split())
    return _ngrams(chars, order) + _ngrams(chars, 1)


def embedding_similarity(
    predictions: Sequence[str],
    references: Sequence[ReferenceSet],
    embed: Callable[[str], Counter] | None = None,
) -> MetricReport:
    """Mean cosine similarity under a pluggable text embedding.

    The default embedding is a bag of character n-grams, which keeps
    generation pipelines runnable without a pretrained encoder. Pass a
    custom ``embed`` callable returning sparse count vectors to swap it out.
    """
    n = _check_lengths(predictions, references)
    embed = embed or _char_ngram_vector
    scores = []
    for pred, refs in zip(predictions, references):
        pv = embed(pred)
        best = 0.0
        for ref in _as_ref_list(refs):
            rv = embed(ref)
            dot = sum(pv[g] * rv[g] for g in pv.keys() & rv.keys())
            norm = math.sqrt(sum(v * v for v in pv.values())) * math.sqrt(
                sum(v * v for v in rv.values())
            )
            if norm > 0:
                best = max(best, dot / norm)
        scores.append(best)
    return MetricReport("embedding_similarity", sum(scores) / n, n, per_example=scores)
