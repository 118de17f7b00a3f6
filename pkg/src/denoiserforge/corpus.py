"""Streaming corpus ingestion: manifests, normalization, dedup, weighted interleave.

A corpus is declared by a line-oriented manifest (``path<TAB>domain<TAB>weight``,
with an optional fourth ``layout`` column of ``blank`` or ``line``). Files are
split into documents on blank lines (or one document per line), normalized to
NFC with control characters removed, and streamed in an order that interleaves
sources proportionally to their manifest weights.
"""

from __future__ import annotations

import hashlib
import re
import sys
import unicodedata
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from random import Random
from typing import Iterable, Iterator, TextIO


class CorpusError(Exception):
    """Raised for unreadable files or malformed manifests."""


class Domain(str, Enum):
    WIKIPEDIA = "wikipedia"
    NEWS = "news"
    BOOKS = "books"
    C4 = "c4"
    SUBTITLES = "subtitles"
    OTHER = "other"


def content_id(text: str) -> int:
    """Stable 64-bit content hash: identical text always yields the same id."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# C0 controls except \n, DEL, and C1 controls. \t and \r count as controls.
_CONTROL_RE = re.compile(r"[\x00-\x09\x0b-\x1f\x7f-\x9f]")
_BLANK_RUN_RE = re.compile(r"\n{3,}")


def normalize_text(text: str) -> str:
    """NFC-normalize, strip control characters except newline, collapse >2 blank lines."""
    text = unicodedata.normalize("NFC", text)
    text = _CONTROL_RE.sub("", text)
    text = _BLANK_RUN_RE.sub("\n\n", text)
    return text.strip()


@dataclass(frozen=True)
class Document:
    """One cleaned text unit tagged with its source domain."""

    id: int
    text: str
    domain: Domain
    byte_len: int

    @classmethod
    def from_text(cls, text: str, domain: Domain = Domain.OTHER) -> "Document":
        return cls(
            id=content_id(text),
            text=text,
            domain=domain,
            byte_len=len(text.encode("utf-8")),
        )


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    domain: Domain
    weight: float
    layout: str = "blank"  # "blank" (blank-line delimited) or "line" (one doc per line)


@dataclass
class CorpusManifest:
    """Validated list of (path, domain, weight) sources with normalized weights."""

    entries: list[ManifestEntry]
    total_bytes: int = 0

    def __post_init__(self) -> None:
        if not self.entries:
            raise CorpusError("manifest has no entries")
        total = sum(e.weight for e in self.entries)
        if total <= 0:
            raise CorpusError("manifest weights sum to zero")
        self.entries = [
            ManifestEntry(e.path, e.domain, e.weight / total, e.layout)
            for e in self.entries
        ]
        for e in self.entries:
            if not e.path.is_file():
                raise CorpusError(f"manifest path does not exist: {e.path}")
        self.total_bytes = sum(e.path.stat().st_size for e in self.entries)

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        """Parse a ``path<TAB>domain<TAB>weight[<TAB>layout]`` manifest file."""
        path = Path(path)
        entries = []
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise CorpusError(f"cannot read manifest {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise CorpusError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields")
            raw_path, raw_domain, raw_weight = parts[:3]
            layout = parts[3] if len(parts) == 4 else "blank"
            if layout not in ("blank", "line"):
                raise CorpusError(f"{path}:{lineno}: unknown layout {layout!r}")
            try:
                domain = Domain(raw_domain)
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: unknown domain {raw_domain!r}") from exc
            try:
                weight = float(raw_weight)
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: bad weight {raw_weight!r}") from exc
            if weight < 0:
                raise CorpusError(f"{path}:{lineno}: negative weight")
            entry_path = Path(raw_path)
            if not entry_path.is_absolute():
                entry_path = path.parent / entry_path
            entries.append(ManifestEntry(entry_path, domain, weight, layout))
        return cls(entries=entries)


@dataclass
class IngestReport:
    """Counters satisfying: parsed = emitted + skipped + deduped."""

    emitted: int = 0
    skipped: int = 0
    deduped: int = 0

    @property
    def parsed(self) -> int:
        return self.emitted + self.skipped + self.deduped

    def format_skip_report(self) -> str:
        return f"skipped={self.skipped} deduped={self.deduped}"

    def print_skip_report(self, stream: TextIO = sys.stderr) -> None:
        print(self.format_skip_report(), file=stream)


def _iter_file_chunks(entry: ManifestEntry) -> Iterator[bytes]:
    try:
        data = entry.path.read_bytes()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {entry.path}: {exc}") from exc
    # \r never appears inside a UTF-8 multibyte sequence, so this is safe on bytes.
    data = data.replace(b"\r\n", b"\n").replace(b"\r", b"\n")
    if entry.layout == "line":
        chunks: Iterable[bytes] = data.split(b"\n")
    else:
        chunks = re.split(b"\n{2,}", data)
    for chunk in chunks:
        if chunk.strip():
            yield chunk


def _iter_file_documents(entry: ManifestEntry, report: IngestReport) -> Iterator[Document]:
    for chunk in _iter_file_chunks(entry):
        try:
            text = chunk.decode("utf-8")
        except UnicodeDecodeError:
            report.skipped += 1
            continue
        text = normalize_text(text)
        if not text:
            report.skipped += 1
            continue
        yield Document.from_text(text, entry.domain)


def dedup_filter(
    docs: Iterable[Document], report: IngestReport | None = None
) -> Iterator[Document]:
    """Pass exact duplicates (same content id) through once, preserving first occurrences."""
    seen: set[int] = set()
    for doc in docs:
        if doc.id in seen:
            if report is not None:
                report.deduped += 1
            continue
        seen.add(doc.id)
        yield doc


class IngestStream:
    """Iterator over the interleaved, deduplicated document stream.

    Source selection at each step draws one of the non-exhausted sources with
    probability proportional to its manifest weight, so the emitted stream is
    deterministic for a fixed manifest and seed. ``report`` accumulates counts
    as the stream is consumed.
    """

    def __init__(self, manifest: CorpusManifest, seed: int = 0, dedup: bool = True):
        self.report = IngestReport()
        self._rng = Random(seed)
        self._sources = [
            (entry.weight, _iter_file_documents(entry, self.report))
            for entry in manifest.entries
        ]
        self._seen: set[int] | None = set() if dedup else None

    def __iter__(self) -> "IngestStream":
        return self

    def __next__(self) -> Document:
        while self._sources:
            total = sum(w for w, _ in self._sources)
            pick = self._rng.random() * total
            acc = 0.0
            idx = len(self._sources) - 1
            for i, (w, _) in enumerate(self._sources):
                acc += w
                if pick < acc:
                    idx = i
                    break
            try:
                doc = next(self._sources[idx][1])
            except StopIteration:
                del self._sources[idx]
                continue
            if self._seen is not None:
                if doc.id in self._seen:
                    self.report.deduped += 1
                    continue
                self._seen.add(doc.id)
            self.report.emitted += 1
            return doc
        raise StopIteration


def ingest(manifest: CorpusManifest, seed: int = 0, dedup: bool = True) -> IngestStream:
    """Stream normalized Documents from all manifest sources, weight-interleaved."""
    return IngestStream(manifest, seed=seed, dedup=dedup)
