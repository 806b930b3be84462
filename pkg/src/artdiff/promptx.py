"""Textual condition extension: corpus retrieval, prompt fertility and
relatedness scoring, spatio-temporal entity bonuses, combined candidate
ranking, and artwork caption composition.

Heavy external pieces (encoder LMs, generator LMs, neural NER, live
Wikipedia) are replaced by deterministic seams: a hashed bag-of-tokens
embedder, fixture-backed generators, and gazetteer plus regular-expression
entity rules. The ranking pipeline itself is complete.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol

import numpy as np

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_LAMBDA1 = 1.0
DEFAULT_LAMBDA2 = 0.1
EMBED_WIDTH = 64

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")

CANDIDATE_SOURCES = ("wiki-sentence", "generator-continuation", "generator-response")


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on any non-alphanumeric run."""
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# Documents and BM25
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Document:
    id: str
    title: str
    body: str = ""

    def __post_init__(self):
        if not self.title:
            raise ValueError(f"document {self.id!r} must have a nonempty title")

    def text(self) -> str:
        return f"{self.title} {self.body}" if self.body else self.title


@dataclass(frozen=True)
class Bm25Index:
    """Inverted index over title+body tokens with Okapi scoring state."""

    documents: tuple[Document, ...]
    postings: dict[str, dict[str, int]]  # term -> {doc id -> term frequency}
    doc_lens: dict[str, int]
    avgdl: float
    k1: float
    b: float

    @property
    def size(self) -> int:
        return len(self.documents)

    def idf(self, term: str) -> float:
        n = self.size
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def build_index(corpus: Iterable[Document], k1: float = DEFAULT_K1,
                b: float = DEFAULT_B) -> Bm25Index:
    docs = tuple(corpus)
    seen = set()
    for doc in docs:
        if doc.id in seen:
            raise ValueError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)
    postings: dict[str, dict[str, int]] = {}
    doc_lens: dict[str, int] = {}
    for doc in docs:
        tokens = tokenize(doc.text())
        doc_lens[doc.id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, {})[doc.id] = tf
    total = sum(doc_lens.values())
    avgdl = total / len(docs) if docs else 0.0
    return Bm25Index(documents=docs, postings=postings, doc_lens=doc_lens,
                     avgdl=avgdl, k1=k1, b=b)


def bm25_search(index: Bm25Index, query: str, k: int) -> list[tuple[Document, float]]:
    """Top-k documents by Okapi score, ties broken by ascending id.

    Query tokens contribute once per occurrence; an empty query scores
    every document zero.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = {doc.id: 0.0 for doc in index.documents}
    for term in tokenize(query):
        idf = index.idf(term)
        for doc_id, tf in index.postings.get(term, {}).items():
            dl = index.doc_lens[doc_id]
            norm = index.k1 * (1.0 - index.b + index.b * dl / index.avgdl)
            scores[doc_id] += idf * (tf * (index.k1 + 1.0)) / (tf + norm)
    ranked = sorted(index.documents, key=lambda d: (-scores[d.id], d.id))
    return [(doc, scores[doc.id]) for doc in ranked[:k]]


# ---------------------------------------------------------------------------
# TF-IDF fertility scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TfidfModel:
    """Per-term inverse document frequencies, ln(N / (1 + df)) clamped at 0."""

    idf: dict[str, float]
    n_docs: int


def tfidf_fit(training_corpus: Iterable[Document]) -> TfidfModel:
    docs = list(training_corpus)
    if not docs:
        raise ValueError("tfidf_fit needs a nonempty corpus")
    df: Counter = Counter()
    for doc in docs:
        df.update(set(tokenize(doc.text())))
    n = len(docs)
    idf = {term: max(0.0, math.log(n / (1.0 + count))) for term, count in df.items()}
    return TfidfModel(idf=idf, n_docs=n)


def tfidf_score(model: TfidfModel, text: str) -> float:
    """Mean over the text's token occurrences of tf * idf; OOV terms score 0."""
    tokens = tokenize(text)
    if not tokens:
        return 0.0
    counts = Counter(tokens)
    length = len(tokens)
    total = sum((counts[tok] / length) * model.idf.get(tok, 0.0) for tok in tokens)
    return total / length


# ---------------------------------------------------------------------------
# Embedding and cosine relatedness
# ---------------------------------------------------------------------------

class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray:
        ...


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity with the zero-vector convention of 0."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"vector width mismatch: {u.shape} vs {v.shape}")
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


class HashEmbedder:
    """Deterministic signed-hash bag-of-tokens embedding.

    A stand-in for a sentence encoder that preserves the property the
    relatedness score relies on: texts sharing vocabulary have high cosine.
    """

    def __init__(self, width: int = EMBED_WIDTH):
        if width < 1:
            raise ValueError("width must be >= 1")
        self.width = int(width)

    def embed(self, text: str) -> np.ndarray:
        import hashlib
        vec = np.zeros(self.width)
        for token in tokenize(text):
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            idx = int.from_bytes(digest[:4], "little") % self.width
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[idx] += sign
        return vec


# ---------------------------------------------------------------------------
# Entity counting
# ---------------------------------------------------------------------------

_YEAR_RE = re.compile(r"\b[12][0-9]{3}\b")
_CLOCK_RE = re.compile(r"\b\d{1,2}:\d{2}\b")
_ORDINAL_DAY_RE = re.compile(r"\b\d{1,2}(?:st|nd|rd|th)\b", re.IGNORECASE)
_MONTHS = ("january", "february", "march", "april", "may", "june", "july",
           "august", "september", "october", "november", "december")
_MONTH_RE = re.compile(r"\b(?:" + "|".join(_MONTHS) + r")\b", re.IGNORECASE)


class Gazetteer:
    """Pre-tokenized place-name phrases for longest-match counting."""

    def __init__(self, names: Iterable[str]):
        phrases = set()
        for name in names:
            tokens = tuple(tokenize(name))
            if tokens:
                phrases.add(tokens)
        self.phrases = frozenset(phrases)
        self.max_len = max((len(p) for p in self.phrases), default=0)

    @classmethod
    def from_file(cls, path) -> "Gazetteer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line.strip() for line in lines if line.strip())

    def match_count(self, tokens: list[str]) -> int:
        """Number of non-overlapping phrase matches, longest match first."""
        count = 0
        i = 0
        n = len(tokens)
        while i < n:
            hit = 0
            for length in range(min(self.max_len, n - i), 0, -1):
                if tuple(tokens[i:i + length]) in self.phrases:
                    hit = length
                    break
            if hit:
                count += 1
                i += hit
            else:
                i += 1
        return count


def entity_count(text: str, gazetteer: Gazetteer) -> tuple[int, int]:
    """(spatial, temporal) entity counts.

    Spatial entities are gazetteer phrase matches over the token stream;
    temporal entities are regex matches on the raw text for 4-digit years
    1000-2999, month names, clock times, and ordinal day numbers.
    """
    spatial = gazetteer.match_count(tokenize(text))
    temporal = (len(_YEAR_RE.findall(text)) + len(_CLOCK_RE.findall(text))
                + len(_MONTH_RE.findall(text)) + len(_ORDINAL_DAY_RE.findall(text)))
    return spatial, temporal


# ---------------------------------------------------------------------------
# Candidate scoring and the extension pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptCandidate:
    text: str
    source: str
    tfidf: float
    cos: float
    spatial_entities: int
    temporal_entities: int
    score: float

    def __post_init__(self):
        if self.source not in CANDIDATE_SOURCES:
            raise ValueError(f"unknown candidate source {self.source!r}")


def score_candidate(u: str, v: str, tfidf_model: TfidfModel, embedder: Embedder,
                    lambda1: float, lambda2: float, gazetteer: Gazetteer,
                    source: str = "wiki-sentence") -> PromptCandidate:
    """Combined importance: tfidf(v) + lambda1 * cos(embed(u), embed(v))
    + lambda2 * (spatial + temporal entity count)."""
    if lambda1 < 0.0 or lambda2 < 0.0:
        raise ValueError("lambda1 and lambda2 must be >= 0")
    fert = tfidf_score(tfidf_model, v)
    cos = cosine(embedder.embed(u), embedder.embed(v))
    spatial, temporal = entity_count(v, gazetteer)
    score = fert + lambda1 * cos + lambda2 * (spatial + temporal)
    return PromptCandidate(text=v, source=source, tfidf=fert, cos=cos,
                           spatial_entities=spatial, temporal_entities=temporal,
                           score=score)


class Generator(Protocol):
    def continuations(self, prompt: str) -> list[str]:
        ...

    def responses(self, prompt: str) -> list[str]:
        ...


class FixtureGenerator:
    """Canned generator outputs keyed by prompt, loaded from JSON Lines.

    Each line is an object with fields ``prompt``, ``continuations``, and
    ``responses``. Unknown prompts yield empty lists.
    """

    def __init__(self, table: dict[str, tuple[list[str], list[str]]]):
        self._table = dict(table)

    @classmethod
    def from_file(cls, path) -> "FixtureGenerator":
        table = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            table[row["prompt"]] = (list(row.get("continuations", [])),
                                    list(row.get("responses", [])))
        return cls(table)

    def continuations(self, prompt: str) -> list[str]:
        return list(self._table.get(prompt, ([], []))[0])

    def responses(self, prompt: str) -> list[str]:
        return list(self._table.get(prompt, ([], []))[1])


def split_sentences(text: str) -> list[str]:
    """Split on '.', '!' or '?' followed by whitespace; drop empties."""
    return [s.strip() for s in _SENTENCE_SPLIT_RE.split(text) if s.strip()]


def _normalized(text: str) -> str:
    return " ".join(tokenize(text))


def extend_prompt(u: str, index: Bm25Index, tfidf_model: TfidfModel,
                  embedder: Embedder, generator: Generator,
                  lambda1: float = DEFAULT_LAMBDA1,
                  lambda2: float = DEFAULT_LAMBDA2,
                  k: int = 10, gazetteer: Optional[Gazetteer] = None
                  ) -> list[PromptCandidate]:
    """Ranked prompt extensions for ``u``.

    The candidate pool is the sentences of the top-k retrieved documents
    plus the generator's continuations and responses. Candidates are
    deduplicated on normalized text (keeping the best-scoring variant) and
    the top k are returned, ties broken by ascending text.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    gaz = gazetteer if gazetteer is not None else Gazetteer(())
    pool: list[tuple[str, str]] = []
    if index.size > 0:
        for doc, _ in bm25_search(index, u, k):
            for sentence in split_sentences(doc.title) + split_sentences(doc.body):
                pool.append((sentence, "wiki-sentence"))
    for text in generator.continuations(u):
        pool.append((text, "generator-continuation"))
    for text in generator.responses(u):
        pool.append((text, "generator-response"))

    best: dict[str, PromptCandidate] = {}
    for text, source in pool:
        if not text.strip():
            continue
        cand = score_candidate(u, text, tfidf_model, embedder, lambda1, lambda2,
                               gaz, source=source)
        key = _normalized(text)
        cur = best.get(key)
        if (cur is None or cand.score > cur.score
                or (cand.score == cur.score and cand.text < cur.text)):
            best[key] = cand
    ranked = sorted(best.values(), key=lambda c: (-c.score, c.text))
    return ranked[:k]


# ---------------------------------------------------------------------------
# Artwork captions and corpus statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArtworkMeta:
    title: str
    artist: str
    style: str = ""
    genre: str = ""
    year: Optional[int] = None


def compose_caption(meta: ArtworkMeta) -> str:
    """Conditioning caption: "<title>, a <genre> painting by <artist> in
    <style> style, <year>" with absent fields elided."""
    if not meta.artist:
        raise ValueError("artwork metadata must include an artist")
    middle = f"a {meta.genre} painting" if meta.genre else "a painting"
    caption = f"{middle} by {meta.artist}"
    if meta.style:
        caption += f" in {meta.style} style"
    if meta.year is not None:
        caption += f", {meta.year}"
    if meta.title:
        caption = f"{meta.title}, {caption}"
    return caption


def artist_histogram(metas: Iterable[ArtworkMeta]) -> list[tuple[str, int]]:
    """Exact artist counts, descending, ties by ascending artist name."""
    counts: Counter = Counter(meta.artist for meta in metas)
    return sorted(counts.items(), key=lambda item: (-item[1], item[0]))


def top_share(histogram: list[tuple[str, int]], k: int) -> float:
    """Fraction of all artworks contributed by the k most prolific artists."""
    total = sum(count for _, count in histogram)
    if total == 0:
        return 0.0
    return sum(count for _, count in histogram[:k]) / total


# ---------------------------------------------------------------------------
# File loaders
# ---------------------------------------------------------------------------

def load_corpus_jsonl(path) -> list[Document]:
    """Corpus file: one JSON object per line with fields id, title, body."""
    docs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        docs.append(Document(id=str(row["id"]), title=row["title"],
                             body=row.get("body", "")))
    return docs


def read_artwork_table(path, delimiter: str = ",") -> tuple[list[ArtworkMeta], int]:
    """Character-separated artwork metadata with columns
    title, artist, style, genre, year. Returns (rows, malformed count);
    malformed rows are skipped, not fatal."""
    import csv
    metas = []
    malformed = 0
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter=delimiter):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 5:
                malformed += 1
                continue
            title, artist, style, genre, year_text = (cell.strip() for cell in row)
            if not artist:
                malformed += 1
                continue
            year: Optional[int] = None
            if year_text:
                try:
                    year = int(year_text)
                except ValueError:
                    malformed += 1
                    continue
            metas.append(ArtworkMeta(title=title, artist=artist, style=style,
                                     genre=genre, year=year))
    return metas, malformed
