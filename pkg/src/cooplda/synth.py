"""Generative LDA sampling with known latent structure.

Draws labeled synthetic corpora from the standard topic-model generative
process: per document a topic mixture from a Dirichlet prior, per word a
topic from that mixture and a token from the topic's word distribution.
The true per-document mixture and per-word topic assignments are returned
(and can be persisted) so inference code can be checked against them.

Latent sidecar file format:

    #cooplda-latent v1
    #K <topic count>
    #M <doc count>
    <t0 t1 ... tK-1>\\t<z0 z1 ... zN-1>   (M lines; theta floats, z ints)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document, EncodedCorpus, Vocabulary
from .serialize import fmt_float


@dataclass(frozen=True)
class LdaTrueModel:
    alpha: np.ndarray  # (K,) positive Dirichlet prior
    beta: np.ndarray   # (K, V) row-stochastic topic-word distributions

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=np.float64))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64))
        if self.alpha.ndim != 1 or np.any(self.alpha <= 0):
            raise ValueError("alpha must be a positive vector")
        if self.beta.ndim != 2 or self.beta.shape[0] != self.alpha.shape[0]:
            raise ValueError("beta must be (K, V) with K matching alpha")
        if np.any(self.beta < 0):
            raise ValueError("beta entries must be non-negative")
        row_sums = self.beta.sum(axis=1)
        if np.any(row_sums == 0):
            raise ValueError("degenerate model: a beta row is all zero")
        if np.any(np.abs(row_sums - 1.0) > 1e-12):
            raise ValueError("each beta row must sum to 1 within 1e-12")

    @property
    def num_topics(self) -> int:
        return int(self.alpha.shape[0])

    @property
    def vocab_size(self) -> int:
        return int(self.beta.shape[1])


@dataclass
class LatentRecord:
    theta: np.ndarray  # (K,) document topic mixture on the simplex
    z: np.ndarray      # (N,) per-word topic index


@dataclass(frozen=True)
class PrototypeLabeler:
    """Labels a document by the prototype mixture closest to its theta.

    label = argmax_c prototypes[c] . theta, ties to the lowest class index.
    """

    prototypes: np.ndarray  # (C, K)

    def __post_init__(self) -> None:
        object.__setattr__(self, "prototypes", np.asarray(self.prototypes, dtype=np.float64))
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            raise ValueError("prototypes must be (C, K) with C >= 2")

    @property
    def num_classes(self) -> int:
        return int(self.prototypes.shape[0])

    def __call__(self, theta: np.ndarray) -> int:
        return int(np.argmax(self.prototypes @ theta))


def sample_gamma(rng: np.random.Generator, shape: float) -> float:
    """Marsaglia-Tsang gamma draw (unit scale), seedable via the generator."""
    if shape <= 0:
        raise ValueError(f"gamma shape must be positive, got {shape}")
    if shape < 1.0:
        # boost: Gamma(a) = Gamma(a + 1) * U^(1/a)
        return sample_gamma(rng, shape + 1.0) * rng.random() ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = (1.0 + c * x) ** 3
        if v <= 0.0:
            continue
        u = rng.random()
        if u < 1.0 - 0.0331 * x**4:
            return d * v
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


def sample_dirichlet(rng: np.random.Generator, alpha: np.ndarray) -> np.ndarray:
    draws = np.array([sample_gamma(rng, a) for a in alpha], dtype=np.float64)
    total = draws.sum()
    if total <= 0.0:
        raise RuntimeError("dirichlet draw degenerated to zero")
    return draws / total


def _doc_rng(seed: int, doc_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(doc_index,))))


def sample_corpus(
    model: LdaTrueModel,
    num_docs: int,
    doc_len: int,
    labeler: PrototypeLabeler,
    seed: int,
) -> tuple[EncodedCorpus, list[LatentRecord]]:
    """Sample a labeled corpus of num_docs documents of doc_len words each.

    Each document uses its own RNG stream derived from (seed, doc index),
    so the corpus is reproducible and per-document sampling order-free.
    """
    if num_docs < 1 or doc_len < 1:
        raise ValueError("num_docs and doc_len must be >= 1")
    k = model.num_topics
    v = model.vocab_size
    beta_cum = np.cumsum(model.beta, axis=1)
    docs: list[Document] = []
    latents: list[LatentRecord] = []
    for m in range(num_docs):
        rng = _doc_rng(seed, m)
        theta = sample_dirichlet(rng, model.alpha)
        theta_cum = np.cumsum(theta)
        z = np.searchsorted(theta_cum, rng.random(doc_len), side="right")
        np.clip(z, 0, k - 1, out=z)
        w = np.empty(doc_len, dtype=np.int64)
        u = rng.random(doc_len)
        for topic in range(k):
            mask = z == topic
            if mask.any():
                w[mask] = np.searchsorted(beta_cum[topic], u[mask], side="right")
        np.clip(w, 0, v - 1, out=w)
        docs.append(Document(w, labeler(theta)))
        latents.append(LatentRecord(theta, z.astype(np.int64)))
    width = len(str(v - 1))
    vocab = Vocabulary.from_tokens([f"w{i:0{width}d}" for i in range(v)])
    label_names = [f"class{c}" for c in range(labeler.num_classes)]
    return EncodedCorpus(docs, vocab, label_names), latents


def default_benchmark_model() -> tuple[LdaTrueModel, PrototypeLabeler]:
    """Two-class benchmark: four topics over 100 words, block-boosted.

    Topic k puts 10x weight on its own 25-word block, so documents remain
    statistically separable without being trivially so.  Classes are the
    two disjoint dominant topic pairs {0,1} and {2,3}.
    """
    k, v, block, boost = 4, 100, 25, 10.0
    beta = np.ones((k, v), dtype=np.float64)
    for topic in range(k):
        beta[topic, topic * block:(topic + 1) * block] = boost
    beta /= beta.sum(axis=1, keepdims=True)
    model = LdaTrueModel(np.ones(k), beta)
    labeler = PrototypeLabeler(np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]))
    return model, labeler


_LATENT_MAGIC = "#cooplda-latent v1"


def save_latents(latents: list[LatentRecord], path: str | Path) -> None:
    if not latents:
        raise ValueError("no latent records to save")
    k = latents[0].theta.shape[0]
    lines = [_LATENT_MAGIC, f"#K {k}", f"#M {len(latents)}"]
    for rec in latents:
        theta_text = " ".join(fmt_float(t) for t in rec.theta)
        z_text = " ".join(str(int(z)) for z in rec.z)
        lines.append(f"{theta_text}\t{z_text}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_latents(path: str | Path) -> list[LatentRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _LATENT_MAGIC:
        raise ValueError(f"{path}: not a latent sidecar file")
    k = int(lines[1].split()[1])
    m = int(lines[2].split()[1])
    records: list[LatentRecord] = []
    for line in lines[3:3 + m]:
        theta_text, z_text = line.split("\t", 1)
        theta = np.array([float(x) for x in theta_text.split()], dtype=np.float64)
        z = np.array([int(x) for x in z_text.split()], dtype=np.int64)
        if theta.shape[0] != k:
            raise ValueError(f"{path}: latent record has wrong topic count")
        records.append(LatentRecord(theta, z))
    return records
