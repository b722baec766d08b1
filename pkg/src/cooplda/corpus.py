"""Text ingestion: tokenization, vocabulary, encoding, folds, corpus files.

The encoded corpus file format is line-oriented text:

    #cooplda-corpus v1
    #V <vocab size>
    #M <doc count>
    #C <class count>
    #label <id> <name>          (C lines, id ascending)
    #vocab <token>              (V lines, token id = line order)
    <label>\\t<id> <id> <id> ...  (M lines)

All loaders are deterministic functions of the input bytes.
"""

from __future__ import annotations

import csv
import hashlib
import string
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .porter import stem as porter_stem
from .stopwords import STOPWORDS


class CorpusError(Exception):
    """Fatal ingestion problem (missing input, empty vocabulary, bad format)."""


class EmptyAfterEncoding(CorpusError):
    """Document has no in-vocabulary tokens left."""


@dataclass(frozen=True)
class PipelineConfig:
    lowercase: bool = True
    punctuation: str = string.punctuation
    stopwords: frozenset[str] = STOPWORDS
    stem: bool = True
    max_doc_len: int | None = None


@lru_cache(maxsize=16)
def _delete_table(chars: str) -> dict[int, None]:
    return str.maketrans("", "", chars)


def tokenize(raw: str, cfg: PipelineConfig = PipelineConfig()) -> list[str]:
    """Lowercase, strip punctuation, split, drop stopwords, stem.

    Stopword entries are matched against punctuation-stripped tokens, so a
    custom list must be supplied in that surface form.  Output order follows
    input order; the result may be empty.
    """
    text = raw.lower() if cfg.lowercase else raw
    if cfg.punctuation:
        text = text.translate(_delete_table(cfg.punctuation))
    tokens = [t for t in text.split() if t not in cfg.stopwords]
    if cfg.stem:
        tokens = [porter_stem(t) for t in tokens]
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between tokens and ids [0, V).

    Ids are assigned by descending corpus frequency with lexicographic
    tie-break, so construction is deterministic.
    """

    token_of: tuple[str, ...]
    id_of: dict[str, int] = field(compare=False)

    @property
    def size(self) -> int:
        return len(self.token_of)

    @staticmethod
    def from_tokens(tokens_in_id_order: Sequence[str]) -> "Vocabulary":
        token_of = tuple(tokens_in_id_order)
        if len(set(token_of)) != len(token_of):
            raise CorpusError("vocabulary tokens must be distinct")
        return Vocabulary(token_of, {t: i for i, t in enumerate(token_of)})


def build_vocabulary(token_docs: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for tokens in token_docs:
        counts.update(tokens)
    kept = [(tok, n) for tok, n in counts.items() if n >= min_count]
    kept.sort(key=lambda item: (-item[1], item[0]))
    if not kept:
        raise CorpusError("empty vocabulary: no token reaches min_count")
    return Vocabulary.from_tokens([tok for tok, _ in kept])


@dataclass
class Document:
    word_ids: np.ndarray  # int64, each in [0, V)
    label: int

    def __post_init__(self) -> None:
        self.word_ids = np.asarray(self.word_ids, dtype=np.int64)

    @property
    def length(self) -> int:
        return int(self.word_ids.shape[0])


def encode(
    tokens: Sequence[str],
    label: int,
    vocab: Vocabulary,
    max_doc_len: int | None = None,
) -> Document:
    """Map tokens to ids, dropping out-of-vocabulary tokens.

    Raises EmptyAfterEncoding when nothing in-vocabulary remains.
    """
    ids = [vocab.id_of[t] for t in tokens if t in vocab.id_of]
    if not ids:
        raise EmptyAfterEncoding("document has no in-vocabulary tokens")
    if max_doc_len is not None:
        ids = ids[:max_doc_len]
    return Document(np.array(ids, dtype=np.int64), int(label))


@dataclass
class EncodedCorpus:
    docs: list[Document]
    vocab: Vocabulary
    label_names: list[str]

    @property
    def num_docs(self) -> int:
        return len(self.docs)

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def labels(self) -> np.ndarray:
        return np.array([d.label for d in self.docs], dtype=np.int64)


@dataclass
class RawCorpus:
    texts: list[str]
    labels: list[int]
    label_names: list[str]
    skipped_lines: list[int] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return len(self.skipped_lines)


def encode_corpus(
    raw: RawCorpus,
    cfg: PipelineConfig = PipelineConfig(),
    min_count: int = 1,
    vocab: Vocabulary | None = None,
) -> tuple[EncodedCorpus, int]:
    """Tokenize and encode a raw corpus; returns (corpus, rejected doc count).

    Pass an existing vocabulary to encode against it (evaluation corpora must
    reuse the training vocabulary); otherwise one is built with min_count.
    """
    token_docs = [tokenize(text, cfg) for text in raw.texts]
    if vocab is None:
        vocab = build_vocabulary(token_docs, min_count)
    docs: list[Document] = []
    rejected = 0
    for tokens, label in zip(token_docs, raw.labels):
        try:
            docs.append(encode(tokens, label, vocab, cfg.max_doc_len))
        except EmptyAfterEncoding:
            rejected += 1
    return EncodedCorpus(docs, vocab, list(raw.label_names)), rejected


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray  # doc index -> fold id in [0, k)
    k: int

    def indices(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train_indices, heldout_indices) for one fold."""
        held = np.nonzero(self.fold_of == fold)[0]
        train = np.nonzero(self.fold_of != fold)[0]
        return train, held


def kfold(corpus: EncodedCorpus, k: int, seed: int) -> FoldAssignment:
    """Stratified round-robin fold assignment.

    Per-class counts per fold differ by at most one, and so do total fold
    sizes (class segments continue a single global round-robin).  The
    assignment is a pure function of (seed, k, corpus order).
    """
    m = corpus.num_docs
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > m:
        raise ValueError(f"k={k} exceeds corpus size {m}")
    labels = corpus.labels()
    rng = np.random.default_rng(seed)
    fold_of = np.empty(m, dtype=np.int64)
    offset = 0
    for cls in sorted(set(labels.tolist())):
        members = np.nonzero(labels == cls)[0]
        members = members[rng.permutation(members.shape[0])]
        for j, doc_idx in enumerate(members):
            fold_of[doc_idx] = (offset + j) % k
        offset = (offset + members.shape[0]) % k
    return FoldAssignment(fold_of, k)


def load_newsgroups(root_dir: str | Path) -> RawCorpus:
    """Read a directory-per-category corpus (one file per article).

    Categories and files are visited in sorted name order; bytes are decoded
    as latin-1 so loading is deterministic regardless of article encoding.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise CorpusError(f"newsgroups root is not a directory: {root}")
    categories = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not categories:
        raise CorpusError(f"no category directories under {root}")
    texts: list[str] = []
    labels: list[int] = []
    for label, name in enumerate(categories):
        for article in sorted((root / name).iterdir()):
            if article.is_file():
                texts.append(article.read_bytes().decode("latin-1"))
                labels.append(label)
    return RawCorpus(texts, labels, categories)


def load_csv(path: str | Path) -> RawCorpus:
    """Read a `text,label` CSV with a header row.

    Rows with a field count other than two are skipped; their line numbers
    are recorded on the returned corpus.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"CSV file not found: {path}")
    texts: list[str] = []
    raw_labels: list[str] = []
    skipped: list[int] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"CSV file is empty: {path}") from None
        if [h.strip().lstrip("﻿") for h in header] != ["text", "label"]:
            raise CorpusError(f"CSV header must be 'text,label', got {header!r}")
        for row in reader:
            if len(row) != 2:
                skipped.append(reader.line_num)
                continue
            texts.append(row[0])
            raw_labels.append(row[1])
    label_names = sorted(set(raw_labels))
    name_to_id = {name: i for i, name in enumerate(label_names)}
    labels = [name_to_id[name] for name in raw_labels]
    return RawCorpus(texts, labels, label_names, skipped)


def label_table_hash(label_names: Sequence[str]) -> str:
    digest = hashlib.sha256("\n".join(label_names).encode("utf-8"))
    return digest.hexdigest()


_CORPUS_MAGIC = "#cooplda-corpus v1"


def save_corpus(corpus: EncodedCorpus, path: str | Path) -> None:
    lines = [
        _CORPUS_MAGIC,
        f"#V {corpus.vocab_size}",
        f"#M {corpus.num_docs}",
        f"#C {corpus.num_classes}",
    ]
    for i, name in enumerate(corpus.label_names):
        lines.append(f"#label {i} {name}")
    for token in corpus.vocab.token_of:
        lines.append(f"#vocab {token}")
    for doc in corpus.docs:
        ids = " ".join(str(int(w)) for w in doc.word_ids)
        lines.append(f"{doc.label}\t{ids}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(path: str | Path) -> EncodedCorpus:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _CORPUS_MAGIC:
        raise CorpusError(f"{path}: not a corpus file (bad magic line)")

    def header_int(idx: int, key: str) -> int:
        parts = lines[idx].split()
        if len(parts) != 2 or parts[0] != key:
            raise CorpusError(f"{path}:{idx + 1}: expected '{key} <int>'")
        return int(parts[1])

    v = header_int(1, "#V")
    m = header_int(2, "#M")
    c = header_int(3, "#C")
    cursor = 4
    label_names: list[str] = []
    for i in range(c):
        line = lines[cursor + i]
        prefix = f"#label {i} "
        if not line.startswith(prefix):
            raise CorpusError(f"{path}:{cursor + i + 1}: expected '{prefix}<name>'")
        label_names.append(line[len(prefix):])
    cursor += c
    tokens: list[str] = []
    for i in range(v):
        line = lines[cursor + i]
        if not line.startswith("#vocab "):
            raise CorpusError(f"{path}:{cursor + i + 1}: expected '#vocab <token>'")
        tokens.append(line[len("#vocab "):])
    cursor += v
    vocab = Vocabulary.from_tokens(tokens)
    docs: list[Document] = []
    for i in range(m):
        line = lines[cursor + i]
        try:
            label_text, ids_text = line.split("\t", 1)
            ids = np.array([int(x) for x in ids_text.split()], dtype=np.int64)
            label = int(label_text)
        except ValueError as exc:
            raise CorpusError(f"{path}:{cursor + i + 1}: malformed document line") from exc
        if ids.size == 0 or label < 0 or label >= c:
            raise CorpusError(f"{path}:{cursor + i + 1}: malformed document line")
        if ids.min() < 0 or ids.max() >= v:
            raise CorpusError(f"{path}:{cursor + i + 1}: word id out of range")
        docs.append(Document(ids, label))
    return EncodedCorpus(docs, vocab, label_names)
