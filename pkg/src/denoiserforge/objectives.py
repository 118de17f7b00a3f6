"""Training-example construction for every supported pretraining objective.

The exported operations turn token sequences into (input, target) records:

* ``make_mlm``: 80/10/10 masked language modeling.
* ``make_rtd_input``: mask-only inputs plus a positions map for a generator.
* ``make_nsp_pair``: sentence-pair construction with an is-next label and
  MLM masking applied on top.
* ``pack_clm``: document packing into fixed-length causal LM blocks.
* ``span_corrupt``: sentinel span corruption, including the prefix-LM split
  used by the ``<LM>`` denoiser.
* ``mod_sample``: uniform choice over a denoiser set with the chosen control
  token prepended to the corrupted input.

Target sequences use ``IGNORE_ID`` (-1) at positions that carry no loss.
Every operation is a pure function of its inputs and seed; batch helpers
derive per-example seeds as ``seed ^ index``.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .corpus import Document
from .tokenizer import TokenSeq, Vocab, encode

IGNORE_ID = -1

OBJECTIVES = ("mlm", "mlm_nsp", "clm", "span_corruption", "rtd_input", "mod")

_PLACEMENT_ATTEMPTS = 1000


class ObjectiveError(Exception):
    """Raised when an example cannot be constructed from the given sequence."""


class SentenceSplitError(ObjectiveError):
    """Raised when a document has too few sentences for pair construction."""


@dataclass(frozen=True)
class DenoiserSpec:
    """One denoiser configuration: control token, mean span length, corruption
    rate, and minimum span count.

    ``mu`` of ``None`` means the mean span length resolves to a quarter of the
    input length at apply time (the prefix-LM denoiser).
    """

    control_token: str
    mu: float | None
    r: float
    n: int

    def __post_init__(self) -> None:
        if not 0 < self.r < 1:
            raise ObjectiveError(f"corruption rate must be in (0,1), got {self.r}")
        if self.n < 1:
            raise ObjectiveError(f"span count must be >= 1, got {self.n}")
        if self.mu is not None and self.mu < 1:
            raise ObjectiveError(f"mean span length must be >= 1, got {self.mu}")

    @property
    def kind(self) -> str:
        """R for light short-span corruption, S for the sequential prefix-LM
        regime, X for extreme corruption (heavy rate or long spans)."""
        if self.mu is None:
            return "S"
        if self.r >= 0.5 or self.mu >= 64:
            return "X"
        return "R"

    def resolved_mu(self, length: int) -> float:
        if self.mu is None:
            return max(1.0, length / 4)
        return self.mu


#: The seven built-in denoisers of the mixture, in control-token order.
BUILTIN_DENOISERS: tuple[DenoiserSpec, ...] = (
    DenoiserSpec("<LM>", None, 0.25, 1),
    DenoiserSpec("<SC1>", 3, 0.15, 1),
    DenoiserSpec("<SC2>", 8, 0.15, 1),
    DenoiserSpec("<SC3>", 64, 0.15, 1),
    DenoiserSpec("<SC4>", 3, 0.5, 1),
    DenoiserSpec("<SC5>", 8, 0.5, 1),
    DenoiserSpec("<SC6>", 64, 0.5, 1),
)


@dataclass
class ObjectiveExample:
    input_ids: TokenSeq
    target_ids: TokenSeq
    objective: str
    meta: dict[str, str] = field(default_factory=dict)


def _natural_id_array(vocab: Vocab) -> np.ndarray:
    cached = getattr(vocab, "_natural_id_array", None)
    if cached is None:
        cached = np.array(vocab.natural_ids(), dtype=np.int64)
        vocab._natural_id_array = cached
    return cached


def _special_mask(ids: np.ndarray, vocab: Vocab) -> np.ndarray:
    if not vocab.special_ids:
        return np.zeros(len(ids), dtype=bool)
    specials = np.array(sorted(vocab.special_ids), dtype=np.int64)
    return np.isin(ids, specials)


# ---------------------------------------------------------------------------
# Masked language modeling


def make_mlm(seq: TokenSeq, p_mask: float, vocab: Vocab, seed: int) -> ObjectiveExample:
    """Apply the 80/10/10 masking rule.

    Each maskable (non-special) position is selected independently with
    probability ``p_mask``. Of the selected positions, 80% become the mask
    token, 10% a random natural token, 10% stay unchanged. Targets hold the
    original ids at selected positions and ``IGNORE_ID`` elsewhere.
    """
    if len(seq) == 0:
        raise ObjectiveError("cannot mask an empty sequence")
    if not 0 < p_mask < 1:
        raise ObjectiveError(f"mask probability must be in (0,1), got {p_mask}")
    ids = np.asarray(seq.ids, dtype=np.int64)
    maskable = ~_special_mask(ids, vocab)
    if not maskable.any():
        raise ObjectiveError("sequence contains only special tokens")

    rng = np.random.default_rng(seed)
    selected = maskable & (rng.random(len(ids)) < p_mask)
    roll = rng.random(len(ids))
    naturals = _natural_id_array(vocab)
    randoms = naturals[rng.integers(0, len(naturals), size=len(ids))]

    inputs = ids.copy()
    mask_id = vocab.specials["mask"]
    inputs[selected & (roll < 0.8)] = mask_id
    inputs[selected & (roll >= 0.8) & (roll < 0.9)] = randoms[
        selected & (roll >= 0.8) & (roll < 0.9)
    ]
    targets = np.where(selected, ids, IGNORE_ID)

    positions = ",".join(str(i) for i in np.flatnonzero(selected))
    return ObjectiveExample(
        input_ids=TokenSeq(inputs.tolist(), seq.vocab_id),
        target_ids=TokenSeq(targets.tolist(), seq.vocab_id),
        objective="mlm",
        meta={"p_mask": repr(p_mask), "mask_positions": positions},
    )


def make_rtd_input(
    seq: TokenSeq, p_mask: float, vocab: Vocab, seed: int
) -> ObjectiveExample:
    """Masked input for a downstream generator: mask-token substitution only,
    no random or kept variants. The positions map in ``meta`` marks exactly
    the mask locations."""
    if len(seq) == 0:
        raise ObjectiveError("cannot mask an empty sequence")
    if not 0 < p_mask < 1:
        raise ObjectiveError(f"mask probability must be in (0,1), got {p_mask}")
    ids = np.asarray(seq.ids, dtype=np.int64)
    maskable = ~_special_mask(ids, vocab)
    if not maskable.any():
        raise ObjectiveError("sequence contains only special tokens")
    rng = np.random.default_rng(seed)
    selected = maskable & (rng.random(len(ids)) < p_mask)
    inputs = ids.copy()
    inputs[selected] = vocab.specials["mask"]
    targets = np.where(selected, ids, IGNORE_ID)
    positions = ",".join(str(i) for i in np.flatnonzero(selected))
    return ObjectiveExample(
        input_ids=TokenSeq(inputs.tolist(), seq.vocab_id),
        target_ids=TokenSeq(targets.tolist(), seq.vocab_id),
        objective="rtd_input",
        meta={"p_mask": repr(p_mask), "mask_positions": positions},
    )


# ---------------------------------------------------------------------------
# Next sentence prediction

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?…])\s+")


def split_sentences(text: str) -> list[str]:
    """Split on sentence-final punctuation followed by whitespace."""
    return [s for s in _SENTENCE_SPLIT.split(text) if s.strip()]


def make_nsp_pair(
    doc_a: Document,
    doc_b: Document,
    vocab: Vocab,
    seed: int,
    p_mask: float = 0.15,
    p_is_next: float = 0.5,
) -> ObjectiveExample:
    """Build one sentence pair with an is-next label, then mask it.

    With probability ``p_is_next`` the pair is two consecutive sentences of
    ``doc_a`` (label ``is_next``); otherwise the second sentence is drawn at
    random from ``doc_b`` (label ``not_next``).
    """
    sents_a = split_sentences(doc_a.text)
    if len(sents_a) < 2:
        raise SentenceSplitError(
            f"document {doc_a.id:#x} has fewer than 2 sentences"
        )
    rng = np.random.default_rng(seed)
    is_next = rng.random() < p_is_next
    if is_next:
        i = int(rng.integers(0, len(sents_a) - 1))
        first, second = sents_a[i], sents_a[i + 1]
    else:
        sents_b = split_sentences(doc_b.text)
        if not sents_b:
            raise SentenceSplitError(
                f"document {doc_b.id:#x} has no usable sentences"
            )
        first = sents_a[int(rng.integers(0, len(sents_a)))]
        second = sents_b[int(rng.integers(0, len(sents_b)))]

    ids_a = encode(first, vocab).ids
    ids_b = encode(second, vocab).ids
    combined = TokenSeq(ids_a + ids_b, vocab.vocab_id)
    masked = make_mlm(combined, p_mask, vocab, int(rng.integers(0, 2**63)))
    masked.objective = "mlm_nsp"
    masked.meta["nsp_label"] = "is_next" if is_next else "not_next"
    masked.meta["segment_boundary"] = str(len(ids_a))
    return masked


# ---------------------------------------------------------------------------
# Causal LM packing


def pack_clm(
    docs: Iterable[TokenSeq], ctx_len: int, vocab: Vocab
) -> Iterator[ObjectiveExample]:
    """Join documents with the eos token and chunk into exact ``ctx_len`` blocks.

    The final partial block is dropped. Targets are the input shifted left by
    one; the last target position of each block is ``IGNORE_ID``.
    """
    if ctx_len < 2:
        raise ObjectiveError(f"context length must be >= 2, got {ctx_len}")
    eos = vocab.specials["eos"]
    buffer: list[int] = []
    vocab_id = vocab.vocab_id
    for doc in docs:
        buffer.extend(doc.ids)
        buffer.append(eos)
        while len(buffer) >= ctx_len:
            block = buffer[:ctx_len]
            buffer = buffer[ctx_len:]
            target = block[1:] + [IGNORE_ID]
            yield ObjectiveExample(
                input_ids=TokenSeq(block, vocab_id),
                target_ids=TokenSeq(target, vocab_id),
                objective="clm",
                meta={},
            )


# ---------------------------------------------------------------------------
# Span corruption


def _draw_span_lengths(total: int, count: int, rng: np.random.Generator) -> list[int]:
    """Uniform random composition of ``total`` into ``count`` parts, each >= 1.

    Equivalent in distribution to i.i.d. geometric lengths conditioned on
    their sum, so the span-length mean stays at total/count.
    """
    if count == 1:
        return [total]
    cuts = np.sort(rng.choice(np.arange(1, total), size=count - 1, replace=False))
    bounds = np.concatenate(([0], cuts, [total]))
    return np.diff(bounds).tolist()


def _place_spans(
    lengths: list[int],
    blocked: np.ndarray,
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """Place non-overlapping spans avoiding blocked positions.

    Rejection sampling runs for up to 1000 attempts per span; if that budget
    is exhausted the remaining feasible start positions are enumerated
    exactly and one is drawn, so placement only fails when no feasible
    position exists at all.
    """
    length = len(blocked)
    occupied = blocked.copy()
    spans: list[tuple[int, int]] = []
    for span_len in sorted(lengths, reverse=True):
        placed = False
        if span_len <= length:
            for _ in range(_PLACEMENT_ATTEMPTS):
                start = int(rng.integers(0, length - span_len + 1))
                if not occupied[start : start + span_len].any():
                    placed = True
                    break
            if not placed:
                free = (~occupied).astype(np.int64)
                window = np.convolve(free, np.ones(span_len, dtype=np.int64), "valid")
                feasible = np.flatnonzero(window == span_len)
                if len(feasible):
                    start = int(feasible[int(rng.integers(0, len(feasible)))])
                    placed = True
        if not placed:
            raise ObjectiveError(
                f"cannot place a span of length {span_len}; sequence too crowded"
            )
        occupied[start : start + span_len] = True
        spans.append((start, start + span_len))
    spans.sort()
    return spans


def span_corrupt(
    seq: TokenSeq, spec: DenoiserSpec, vocab: Vocab, seed: int
) -> ObjectiveExample:
    """Corrupt a sequence according to one denoiser.

    R/X kinds replace ``round(r * maskable)`` tokens, drawn as spans with mean
    length ``mu``, with sentinels in order of appearance; the target lists
    each sentinel followed by the removed tokens and ends with one extra
    sentinel. The S kind splits at ``ceil((1-r)*L)``: the input is the prefix
    and the target is the suffix, so targets never precede inputs.
    """
    ids = list(seq.ids)
    length = len(ids)
    if length < 2:
        raise ObjectiveError(f"sequence too short to corrupt: {length} tokens")
    mu = spec.resolved_mu(length)
    if mu > length:
        raise ObjectiveError(
            f"mean span length {mu} exceeds sequence length {length}"
        )

    meta = {"denoiser": spec.control_token, "kind": spec.kind}
    if spec.kind == "S":
        split = math.ceil((1 - spec.r) * length)
        return ObjectiveExample(
            input_ids=TokenSeq(ids[:split], seq.vocab_id),
            target_ids=TokenSeq(ids[split:], seq.vocab_id),
            objective="span_corruption",
            meta=meta,
        )

    rng = np.random.default_rng(seed)
    id_arr = np.asarray(ids, dtype=np.int64)
    blocked = _special_mask(id_arr, vocab)
    maskable = int((~blocked).sum())
    if maskable < 1:
        raise ObjectiveError("sequence contains only special tokens")

    num_noise = max(spec.n, round(spec.r * maskable))
    num_noise = min(num_noise, maskable)
    num_spans = max(spec.n, round(num_noise / mu))
    num_spans = min(num_spans, num_noise)
    lengths = _draw_span_lengths(num_noise, num_spans, rng)
    spans = _place_spans(lengths, blocked, rng)

    input_ids: list[int] = []
    target_ids: list[int] = []
    cursor = 0
    for k, (start, end) in enumerate(spans):
        input_ids.extend(ids[cursor:start])
        sentinel = vocab.sentinel_id(k)
        input_ids.append(sentinel)
        target_ids.append(sentinel)
        target_ids.extend(ids[start:end])
        cursor = end
    input_ids.extend(ids[cursor:])
    target_ids.append(vocab.sentinel_id(len(spans)))

    meta["num_spans"] = str(len(spans))
    return ObjectiveExample(
        input_ids=TokenSeq(input_ids, seq.vocab_id),
        target_ids=TokenSeq(target_ids, seq.vocab_id),
        objective="span_corruption",
        meta=meta,
    )


def mod_sample(
    seq: TokenSeq,
    vocab: Vocab,
    seed: int,
    specs: tuple[DenoiserSpec, ...] | list[DenoiserSpec] = BUILTIN_DENOISERS,
    jitter: bool = False,
) -> ObjectiveExample:
    """Pick one denoiser uniformly at random and prepend its control token.

    With ``jitter`` set, the chosen denoiser's mean span length and rate are
    perturbed by a uniform factor in [0.5, 1.5] (rate clamped below 1) before
    applying, instead of using the fixed table values.
    """
    if not specs:
        raise ObjectiveError("denoiser list is empty")
    rng = np.random.default_rng(seed)
    spec = specs[int(rng.integers(0, len(specs)))]
    if jitter:
        factor_mu = 0.5 + rng.random()
        factor_r = 0.5 + rng.random()
        spec = DenoiserSpec(
            spec.control_token,
            None if spec.mu is None else max(1.0, spec.mu * factor_mu),
            min(0.99, spec.r * factor_r),
            spec.n,
        )
    child_seed = int(rng.integers(0, 2**63))
    example = span_corrupt(seq, spec, vocab, child_seed)
    control = vocab.specials[spec.control_token]
    example.input_ids = TokenSeq([control] + example.input_ids.ids, seq.vocab_id)
    example.objective = "mod"
    return example


# ---------------------------------------------------------------------------
# Reconstruction (the losslessness check)


def reconstruct(example: ObjectiveExample, vocab: Vocab) -> list[int]:
    """Recover the original token sequence from an example.

    Span-corruption targets are spliced back at sentinel positions by order
    of appearance; prefix-LM examples concatenate input and target; masked
    objectives overwrite selected positions with their target ids.
    """
    obj = example.objective
    input_ids = list(example.input_ids.ids)
    target_ids = list(example.target_ids.ids)

    if obj == "mod":
        input_ids = input_ids[1:]  # drop the control token
    if obj in ("span_corruption", "mod"):
        if example.meta.get("kind") == "S":
            return input_ids + target_ids
        sentinel_ids = {
            i for name, i in vocab.specials.items() if name.startswith("sentinel_")
        }
        segments: list[list[int]] = []
        current: list[int] | None = None
        for token_id in target_ids:
            if token_id in sentinel_ids:
                if current is not None:
                    segments.append(current)
                current = []
            elif current is not None:
                current.append(token_id)
        out: list[int] = []
        span_index = 0
        for token_id in input_ids:
            if token_id in sentinel_ids:
                if span_index >= len(segments):
                    raise ObjectiveError("more sentinels in input than target spans")
                out.extend(segments[span_index])
                span_index += 1
            else:
                out.append(token_id)
        return out
    if obj in ("mlm", "mlm_nsp", "rtd_input"):
        return [
            t if t != IGNORE_ID else i for i, t in zip(input_ids, target_ids)
        ]
    if obj == "clm":
        return input_ids
    raise ObjectiveError(f"cannot reconstruct objective {obj!r}")


# ---------------------------------------------------------------------------
# Length-prefixed binary record format

_OBJECTIVE_TAGS = {name: i for i, name in enumerate(OBJECTIVES)}
_TAG_OBJECTIVES = {i: name for name, i in _OBJECTIVE_TAGS.items()}
_U32_MASK = 0xFFFFFFFF


def _pack_ids(ids: list[int]) -> bytes:
    # IGNORE_ID is stored as 0xFFFFFFFF; real ids are far below 2**32.
    return struct.pack(f"<{len(ids)}I", *[i & _U32_MASK for i in ids])


def _unpack_ids(data: bytes) -> list[int]:
    raw = struct.unpack(f"<{len(data) // 4}I", data)
    return [IGNORE_ID if v == _U32_MASK else v for v in raw]


def write_example(fh: BinaryIO, example: ObjectiveExample) -> None:
    body = bytearray()
    body += struct.pack("<B", _OBJECTIVE_TAGS[example.objective])
    body += struct.pack("<I", len(example.input_ids.ids))
    body += _pack_ids(example.input_ids.ids)
    body += struct.pack("<I", len(example.target_ids.ids))
    body += _pack_ids(example.target_ids.ids)
    body += struct.pack("<H", len(example.meta))
    for key, value in example.meta.items():
        kb = key.encode("utf-8")
        vb = str(value).encode("utf-8")
        body += struct.pack("<H", len(kb)) + kb
        body += struct.pack("<I", len(vb)) + vb
    fh.write(struct.pack("<I", len(body)))
    fh.write(bytes(body))


def write_examples(
    path: str | Path, examples: Iterable[ObjectiveExample]
) -> int:
    count = 0
    with open(path, "wb") as fh:
        for example in examples:
            write_example(fh, example)
            count += 1
    return count


def read_examples(path: str | Path, vocab_id: str = "") -> Iterator[ObjectiveExample]:
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                return
            (record_len,) = struct.unpack("<I", head)
            body = fh.read(record_len)
            if len(body) != record_len:
                raise ObjectiveError(f"{path}: truncated record")
            offset = 0
            (tag,) = struct.unpack_from("<B", body, offset)
            offset += 1
            (n_in,) = struct.unpack_from("<I", body, offset)
            offset += 4
            input_ids = _unpack_ids(body[offset : offset + 4 * n_in])
            offset += 4 * n_in
            (n_tgt,) = struct.unpack_from("<I", body, offset)
            offset += 4
            target_ids = _unpack_ids(body[offset : offset + 4 * n_tgt])
            offset += 4 * n_tgt
            (n_meta,) = struct.unpack_from("<H", body, offset)
            offset += 2
            meta = {}
            for _ in range(n_meta):
                (klen,) = struct.unpack_from("<H", body, offset)
                offset += 2
                key = body[offset : offset + klen].decode("utf-8")
                offset += klen
                (vlen,) = struct.unpack_from("<I", body, offset)
                offset += 4
                meta[key] = body[offset : offset + vlen].decode("utf-8")
                offset += vlen
            yield ObjectiveExample(
                input_ids=TokenSeq(input_ids, vocab_id),
                target_ids=TokenSeq(target_ids, vocab_id),
                objective=_TAG_OBJECTIVES[tag],
                meta=meta,
            )
