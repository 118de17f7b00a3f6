"""Subword vocabularies: character BPE, byte-level BPE, and a unigram segmenter.

Three schemes share one ``Vocab`` container and one serialization:

* ``bpe``: greedy pair merges over the characters seen in the training corpus.
  Unseen characters encode to the ``unk`` special.
* ``bbpe``: greedy pair merges over raw bytes. The 256 single-byte tokens are
  always present, so every byte string is encodable and decode(encode(x)) == x.
* ``unigram``: a unigram piece inventory trained with EM plus pruning and
  applied with Viterbi segmentation. The inventory keeps all 256 single bytes,
  so coverage is total and no ``unk`` is ever produced.

Merges never cross a whitespace boundary: text is pre-split into alternating
runs of whitespace and non-whitespace, and each run is tokenized independently.
Ties in pair frequency during merge training are broken by lexicographic byte
order of the (left, right) pair.
"""

from __future__ import annotations

import base64
import hashlib
import heapq
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus import Document

SENTINEL_COUNT = 100
DENOISER_TOKENS = ("<LM>", "<SC1>", "<SC2>", "<SC3>", "<SC4>", "<SC5>", "<SC6>")
CORE_SPECIALS = ("pad", "eos", "unk", "mask")

# Vocabulary sizes of the released model families this toolkit mirrors.
MODEL_VOCAB_SIZES = {
    "rubert": 120_000,
    "ruroberta": 50_000,
    "ruelectra_small": 256_000,
    "ruelectra_medium": 64_000,
    "ruelectra_large": 120_000,
    "rugpt3": 50_000,
    "rut5": 32_000,
    "fred_t5": 50_000,
}

_UNIGRAM_MAX_PIECE = 8
_UNIGRAM_SMOOTH = 0.01
_FORMAT_HEADER = "denoiserforge-vocab"


class VocabError(Exception):
    """Raised for untrainable configurations and serialization problems."""


def default_specials() -> list[str]:
    """Core specials, then denoiser control tokens, then sentinels at the top ids."""
    names = list(CORE_SPECIALS)
    names.extend(DENOISER_TOKENS)
    names.extend(f"sentinel_{i}" for i in range(SENTINEL_COUNT))
    return names


def special_surface(name: str) -> str:
    """Rendered text form of a special: its name in angle brackets."""
    return name if name.startswith("<") else f"<{name}>"


_PRETOKEN_BYTES_RE = re.compile(rb"[ \t\n\r\f\v]+|[^ \t\n\r\f\v]+")
_PRETOKEN_STR_RE = re.compile(r"[ \t\n\r\f\v]+|[^ \t\n\r\f\v]+")


@dataclass
class TokenSeq:
    """A list of token ids bound to the vocabulary that produced them."""

    ids: list[int]
    vocab_id: str

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


@dataclass
class Vocab:
    """A trained subword vocabulary.

    ``tokens`` holds the byte string of every id (dense 0..size-1), including
    the rendered surface of specials. ``merges`` lists (left_id, right_id)
    pairs in training order; it is empty for the unigram scheme.
    ``piece_logprobs`` is only populated for unigram vocabularies.
    """

    scheme: str
    tokens: list[bytes]
    merges: list[tuple[int, int]]
    specials: dict[str, int]
    piece_logprobs: list[float] | None = None

    _vocab_id: str = field(default="", repr=False)
    _encode_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.scheme not in ("bpe", "bbpe", "unigram"):
            raise VocabError(f"unknown scheme {self.scheme!r}")
        self._merge_ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._special_ids = frozenset(self.specials.values())
        self._special_by_id = {i: n for n, i in self.specials.items()}
        base = {}
        for i, tok in enumerate(self.tokens):
            if i in self._special_ids:
                continue
            base.setdefault(tok, i)
        self._piece_index = base

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def vocab_id(self) -> str:
        if not self._vocab_id:
            digest = hashlib.blake2b(serialize_vocab(self).encode("utf-8"), digest_size=8)
            self._vocab_id = digest.hexdigest()
        return self._vocab_id

    @property
    def special_ids(self) -> frozenset[int]:
        return self._special_ids

    def is_special(self, token_id: int) -> bool:
        return token_id in self._special_ids

    def natural_ids(self) -> list[int]:
        return [i for i in range(self.size) if i not in self._special_ids]

    def sentinel_id(self, k: int) -> int:
        return self.specials[f"sentinel_{k % SENTINEL_COUNT}"]


# ---------------------------------------------------------------------------
# Merge training (bpe / bbpe)


def _merge_word(word: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    i = 0
    n = len(word)
    while i < n:
        if i + 1 < n and word[i] == pair[0] and word[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return out


def _train_merges(
    words: list[list[int]],
    freqs: list[int],
    tokens: list[bytes],
    n_merges: int,
    n_specials: int,
) -> list[tuple[int, int]]:
    """Greedy highest-frequency pair merging with incremental count updates.

    A lazy max-heap keyed by (count, left bytes, right bytes) provides the
    deterministic tie-break; stale entries are dropped when their recorded
    count no longer matches.
    """
    pair_counts: Counter = Counter()
    pair_words: defaultdict = defaultdict(set)
    for wi, (word, f) in enumerate(zip(words, freqs)):
        for pair in zip(word, word[1:]):
            pair_counts[pair] += f
            pair_words[pair].add(wi)

    heap: list[tuple[int, bytes, bytes, tuple[int, int]]] = []

    def push(pair: tuple[int, int]) -> None:
        c = pair_counts.get(pair, 0)
        if c > 0:
            heapq.heappush(heap, (-c, tokens[pair[0]], tokens[pair[1]], pair))

    for pair in pair_counts:
        push(pair)

    merges: list[tuple[int, int]] = []
    while len(merges) < n_merges:
        pair = None
        while heap:
            negc, _, _, cand = heap[0]
            if pair_counts.get(cand, 0) == -negc:
                pair = cand
                break
            heapq.heappop(heap)
        if pair is None:
            raise VocabError(
                "corpus too small to reach target size; "
                f"achievable size is {len(tokens) + n_specials}"
            )
        heapq.heappop(heap)

        new_id = len(tokens)
        tokens.append(tokens[pair[0]] + tokens[pair[1]])
        merges.append(pair)

        touched: set[tuple[int, int]] = set()
        for wi in sorted(pair_words.pop(pair, ())):
            word = words[wi]
            f = freqs[wi]
            if not any(p == pair for p in zip(word, word[1:])):
                continue
            for p in zip(word, word[1:]):
                pair_counts[p] -= f
                touched.add(p)
            new_word = _merge_word(word, pair, new_id)
            words[wi] = new_word
            for p in zip(new_word, new_word[1:]):
                pair_counts[p] += f
                pair_words[p].add(wi)
                touched.add(p)
        pair_counts.pop(pair, None)
        touched.discard(pair)
        for p in touched:
            push(p)
    return merges


def _doc_texts(docs: Iterable[Document | str]) -> Iterable[str]:
    for doc in docs:
        yield doc.text if isinstance(doc, Document) else doc


def _pretoken_freqs_bytes(texts: Iterable[str]) -> Counter:
    freqs: Counter = Counter()
    for text in texts:
        freqs.update(_PRETOKEN_BYTES_RE.findall(text.encode("utf-8")))
    return freqs


def _append_specials(tokens: list[bytes], specials: list[str]) -> dict[str, int]:
    table = {}
    for name in specials:
        table[name] = len(tokens)
        tokens.append(special_surface(name).encode("utf-8"))
    return table


def train_vocab(
    docs: Iterable[Document | str],
    scheme: str,
    target_size: int,
    specials: list[str] | None = None,
) -> Vocab:
    """Train a vocabulary of exactly ``target_size`` ids, specials included.

    Merge training (bpe/bbpe) runs until the natural token count reaches
    ``target_size - len(specials)``; unigram training prunes its piece
    inventory down to the same count. Raises ``VocabError`` with the
    achievable size when the corpus cannot support the target.
    """
    specials = list(default_specials() if specials is None else specials)
    if len(set(specials)) != len(specials):
        raise VocabError("duplicate special names")
    texts = list(_doc_texts(docs))

    if scheme == "bbpe":
        tokens = [bytes([b]) for b in range(256)]
        n_merges = target_size - len(specials) - 256
        if n_merges < 0:
            raise VocabError(
                f"target size {target_size} below byte alphabet plus "
                f"{len(specials)} specials"
            )
        freqs = _pretoken_freqs_bytes(texts)
        words = [[b for b in w] for w in freqs]
        merges = _train_merges(words, list(freqs.values()), tokens, n_merges, len(specials))
        special_table = _append_specials(tokens, specials)
        return Vocab("bbpe", tokens, merges, special_table)

    if scheme == "bpe":
        char_freqs: Counter = Counter()
        for text in texts:
            char_freqs.update(_PRETOKEN_STR_RE.findall(text))
        alphabet = sorted({ch for tok in char_freqs for ch in tok}, key=lambda c: c.encode("utf-8"))
        tokens = [ch.encode("utf-8") for ch in alphabet]
        char_to_id = {ch: i for i, ch in enumerate(alphabet)}
        n_merges = target_size - len(specials) - len(tokens)
        if n_merges < 0:
            raise VocabError(
                f"target size {target_size} below base alphabet of {len(tokens)} "
                f"plus {len(specials)} specials"
            )
        words = [[char_to_id[ch] for ch in w] for w in char_freqs]
        merges = _train_merges(words, list(char_freqs.values()), tokens, n_merges, len(specials))
        special_table = _append_specials(tokens, specials)
        return Vocab("bpe", tokens, merges, special_table)

    if scheme == "unigram":
        return _train_unigram(texts, target_size, specials)

    raise VocabError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Unigram training


def _viterbi(
    data: bytes, piece_table: dict[bytes, tuple[int, float]]
) -> list[int]:
    """Best segmentation of ``data`` under piece log-probs.

    Ties prefer the longer piece at each boundary. Single-byte pieces are
    always available, so the lattice never dead-ends.
    """
    n = len(data)
    best = [-math.inf] * (n + 1)
    back: list[tuple[int, int]] = [(0, 0)] * (n + 1)
    best[0] = 0.0
    for i in range(n):
        if best[i] == -math.inf:
            continue
        max_len = min(_UNIGRAM_MAX_PIECE, n - i)
        for length in range(max_len, 0, -1):
            piece = data[i : i + length]
            entry = piece_table.get(piece)
            if entry is None:
                continue
            pid, lp = entry
            score = best[i] + lp
            if score > best[i + length]:
                best[i + length] = score
                back[i + length] = (i, pid)
    ids = []
    pos = n
    while pos > 0:
        prev, pid = back[pos]
        ids.append(pid)
        pos = prev
    ids.reverse()
    return ids


def _train_unigram(texts: list[str], target_size: int, specials: list[str]) -> Vocab:
    n_pieces = target_size - len(specials)
    if n_pieces < 257:
        raise VocabError(
            f"target size {target_size} leaves fewer than 257 pieces after "
            f"{len(specials)} specials; the byte alphabet needs 256"
        )
    freqs = _pretoken_freqs_bytes(texts)

    candidates: Counter = Counter()
    for word, f in freqs.items():
        for length in range(2, min(_UNIGRAM_MAX_PIECE, len(word)) + 1):
            for i in range(len(word) - length + 1):
                candidates[word[i : i + length]] += f
    cap = max(4 * n_pieces, 1024)
    ranked = sorted(candidates.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]

    pieces: dict[bytes, float] = {bytes([b]): 1.0 for b in range(256)}
    for piece, f in ranked:
        pieces[piece] = float(f)

    def normalize(counts: dict[bytes, float]) -> dict[bytes, float]:
        total = sum(counts.values())
        denom = total + _UNIGRAM_SMOOTH * len(counts)
        return {
            p: math.log((c + _UNIGRAM_SMOOTH) / denom) for p, c in counts.items()
        }

    logprobs = normalize(pieces)

    def em_round(logprobs: dict[bytes, float]) -> dict[bytes, float]:
        table = {p: (i, lp) for i, (p, lp) in enumerate(sorted(logprobs.items()))}
        id_to_piece = {i: p for p, (i, _) in table.items()}
        counts = {p: 0.0 for p in logprobs}
        for word, f in freqs.items():
            for pid in _viterbi(word, table):
                counts[id_to_piece[pid]] += f
        return counts

    for _ in range(3):
        counts = em_round(logprobs)
        logprobs = normalize(counts)

    while len(logprobs) > n_pieces:
        counts = em_round(logprobs)
        prunable = sorted(
            (p for p in logprobs if len(p) > 1),
            key=lambda p: (counts[p], p),
        )
        if not prunable:
            break
        excess = len(logprobs) - n_pieces
        drop = prunable[: max(1, min(excess, len(prunable) // 5 + 1))]
        for p in drop:
            del logprobs[p]
        logprobs = normalize({p: counts[p] for p in logprobs})

    if len(logprobs) < n_pieces:
        raise VocabError(
            "corpus too small to reach target size; "
            f"achievable size is {len(logprobs) + len(specials)}"
        )

    byte_pieces = [bytes([b]) for b in range(256)]
    learned = sorted(
        (p for p in logprobs if len(p) > 1),
        key=lambda p: (-logprobs[p], p),
    )
    tokens = byte_pieces + learned
    piece_lp = [logprobs[p] for p in tokens]
    special_table = _append_specials(tokens, specials)
    piece_lp.extend([-1e30] * len(specials))
    return Vocab("unigram", tokens, [], special_table, piece_logprobs=piece_lp)


# ---------------------------------------------------------------------------
# Encode / decode


def _encode_merge_run(vocab: Vocab, symbols: list[int]) -> list[int]:
    ranks = vocab._merge_ranks
    while len(symbols) >= 2:
        best_rank = None
        best_pair = None
        for pair in zip(symbols, symbols[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
                best_pair = pair
        if best_pair is None:
            break
        merged_id = _merge_result_id(vocab, best_rank)
        symbols = _merge_word(symbols, best_pair, merged_id)
    return symbols


def _merge_result_id(vocab: Vocab, rank: int) -> int:
    # Merge k creates the k-th token after the base alphabet.
    base = 256 if vocab.scheme == "bbpe" else len(vocab.tokens) - len(vocab.specials) - len(vocab.merges)
    return base + rank


def _encode_run_bbpe(vocab: Vocab, run: bytes) -> list[int]:
    cached = vocab._encode_cache.get(run)
    if cached is None:
        cached = _encode_merge_run(vocab, list(run))
        vocab._encode_cache[run] = cached
    return cached


def _encode_run_bpe(vocab: Vocab, run: str) -> list[int]:
    cached = vocab._encode_cache.get(run)
    if cached is None:
        unk = vocab.specials.get("unk")
        symbols = []
        for ch in run:
            symbol = vocab._piece_index.get(ch.encode("utf-8"), unk)
            if symbol is None:
                raise VocabError(
                    f"character {ch!r} not in the alphabet and no unk special defined"
                )
            symbols.append(symbol)
        cached = _encode_merge_run(vocab, symbols)
        vocab._encode_cache[run] = cached
    return cached


def _encode_run_unigram(vocab: Vocab, run: bytes) -> list[int]:
    cached = vocab._encode_cache.get(run)
    if cached is None:
        table = getattr(vocab, "_unigram_table", None)
        if table is None:
            table = {
                tok: (i, vocab.piece_logprobs[i])
                for i, tok in enumerate(vocab.tokens)
                if i not in vocab.special_ids
            }
            vocab._unigram_table = table
        cached = _viterbi(run, table)
        vocab._encode_cache[run] = cached
    return cached


def _split_on_specials(text: str, vocab: Vocab) -> list[tuple[str, int | None]]:
    """Split text into (segment, special_id) parts, longest surface form first."""
    surfaces = sorted(
        ((special_surface(n), i) for n, i in vocab.specials.items()),
        key=lambda si: (-len(si[0]), si[0]),
    )
    pattern = re.compile("|".join(re.escape(s) for s, _ in surfaces))
    by_surface = dict(surfaces)
    parts: list[tuple[str, int | None]] = []
    pos = 0
    for m in pattern.finditer(text):
        if m.start() > pos:
            parts.append((text[pos : m.start()], None))
        parts.append((m.group(), by_surface[m.group()]))
        pos = m.end()
    if pos < len(text):
        parts.append((text[pos:], None))
    return parts


def encode(text: str, vocab: Vocab, parse_specials: bool = False) -> TokenSeq:
    """Tokenize text to ids.

    Natural text never produces special ids; with ``parse_specials`` set,
    occurrences of special surface forms (for example ``<SC1>``) map to their
    reserved ids instead of being tokenized as ordinary text.
    """
    ids: list[int] = []
    if parse_specials:
        parts = _split_on_specials(text, vocab)
    else:
        parts = [(text, None)]
    for segment, special_id in parts:
        if special_id is not None:
            ids.append(special_id)
            continue
        if vocab.scheme == "bpe":
            for run in _PRETOKEN_STR_RE.findall(segment):
                ids.extend(_encode_run_bpe(vocab, run))
        else:
            data = segment.encode("utf-8")
            for run in _PRETOKEN_BYTES_RE.findall(data):
                if vocab.scheme == "bbpe":
                    ids.extend(_encode_run_bbpe(vocab, run))
                else:
                    ids.extend(_encode_run_unigram(vocab, run))
    return TokenSeq(ids, vocab.vocab_id)


def decode(seq: TokenSeq, vocab: Vocab) -> str:
    """Concatenate token bytes back to text.

    Specials render as their bracketed names. Byte runs that do not form
    valid UTF-8 (possible with truncated bbpe sequences) decode with U+FFFD
    replacement.
    """
    if seq.vocab_id and seq.vocab_id != vocab.vocab_id:
        raise VocabError("token sequence was produced by a different vocabulary")
    out: list[str] = []
    buf = bytearray()
    for token_id in seq.ids:
        if token_id < 0 or token_id >= vocab.size:
            raise VocabError(f"token id {token_id} out of range for size {vocab.size}")
        name = vocab._special_by_id.get(token_id)
        if name is not None:
            if buf:
                out.append(buf.decode("utf-8", errors="replace"))
                buf.clear()
            out.append(special_surface(name))
        else:
            buf.extend(vocab.tokens[token_id])
    if buf:
        out.append(buf.decode("utf-8", errors="replace"))
    return "".join(out)


# ---------------------------------------------------------------------------
# Serialization (format v1)


def serialize_vocab(vocab: Vocab) -> str:
    lines = [f"{_FORMAT_HEADER} v1 {vocab.scheme} {vocab.size}"]
    for tok in vocab.tokens:
        lines.append("T " + base64.b64encode(tok).decode("ascii"))
    for left, right in vocab.merges:
        lines.append(f"M {left} {right}")
    for name, token_id in vocab.specials.items():
        lines.append(f"S {name} {token_id}")
    if vocab.scheme == "unigram":
        for i, lp in enumerate(vocab.piece_logprobs):
            if i in vocab.special_ids:
                continue
            lines.append(f"P {i} {float(lp).hex()}")
    return "\n".join(lines) + "\n"


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    Path(path).write_text(serialize_vocab(vocab), encoding="utf-8")


def load_vocab(path: str | Path) -> Vocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise VocabError(f"{path}: empty vocabulary file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != _FORMAT_HEADER or header[1] != "v1":
        raise VocabError(f"{path}: bad header {lines[0]!r}")
    scheme = header[2]
    size = int(header[3])
    tokens: list[bytes] = []
    merges: list[tuple[int, int]] = []
    specials: dict[str, int] = {}
    logprobs: dict[int, float] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        kind, _, rest = line.partition(" ")
        if kind == "T":
            tokens.append(base64.b64decode(rest))
        elif kind == "M":
            left, right = rest.split()
            merges.append((int(left), int(right)))
        elif kind == "S":
            name, token_id = rest.rsplit(" ", 1)
            specials[name] = int(token_id)
        elif kind == "P":
            idx, value = rest.split()
            logprobs[int(idx)] = float.fromhex(value)
        else:
            raise VocabError(f"{path}: unknown record {kind!r}")
    if len(tokens) != size:
        raise VocabError(f"{path}: header size {size} but {len(tokens)} tokens")
    piece_lp = None
    if scheme == "unigram":
        piece_lp = [logprobs.get(i, -1e30) for i in range(size)]
    return Vocab(scheme, tokens, merges, specials, piece_logprobs=piece_lp)
