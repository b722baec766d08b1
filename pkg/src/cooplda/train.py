"""Minibatch supervised training with Adam, plus evaluation metrics.

Training runs a fixed number of batches: sample documents without
replacement within an epoch, embed each in train mode, accumulate exact
gradients, take the batch mean, and apply one Adam update.  The batch
mean keeps the learning-rate scale independent of batch size.  History
rows are recorded at a fixed evaluation interval and the best-validation
parameters are kept alongside the final ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Document, EncodedCorpus
from .diff import Gradients, LossConfig, backward, loss as loss_fn
from .model import (
    HyperParams,
    ModelParams,
    class_probabilities,
    classify,
    forward,
    init_params,
)
from .serialize import fmt_float


class TrainingDiverged(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    hp: HyperParams
    loss: LossConfig
    batch_size: int = 100
    num_batches: int = 300
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 25

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.num_batches < 0:
            raise ValueError("num_batches must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("learning_rate and eps must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class AdamMoments:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def zeros_like(params: ModelParams) -> "AdamMoments":
        arrays = params.as_dict()
        return AdamMoments(
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
        )


def adam_step(
    params: ModelParams,
    grads: Gradients,
    moments: AdamMoments,
    cfg: TrainConfig,
) -> tuple[ModelParams, AdamMoments]:
    """One bias-corrected Adam update; returns new params and moments.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    p <- p - lr * m_hat / (sqrt(v_hat) + eps).
    """
    t = moments.t + 1
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    new_arrays: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.as_dict().items():
        g = grads[name]
        m = cfg.beta1 * moments.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * moments.v[name] + (1.0 - cfg.beta2) * g * g
        new_arrays[name] = p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_m[name] = m
        new_v[name] = v
    return ModelParams.from_dict(new_arrays), AdamMoments(new_m, new_v, t)


@dataclass
class EpochState:
    perm: np.ndarray | None = None
    cursor: int = 0


def sample_batch(
    num_docs: int,
    batch_size: int,
    state: EpochState,
    rng: np.random.Generator,
) -> np.ndarray:
    """Next without-replacement batch; reshuffles at each epoch boundary.

    The final batch of an epoch may be short.
    """
    if state.perm is None or state.cursor >= num_docs:
        state.perm = rng.permutation(num_docs)
        state.cursor = 0
    batch = state.perm[state.cursor:state.cursor + batch_size]
    state.cursor += batch.shape[0]
    return batch


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC with ties counted half, equal to the all-pairs count.

    Computed from tie-averaged ranks in O(n log n); the half-integer rank
    sums are exact in float64, so this matches a brute-force pair count
    bit for bit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    i = 0
    while i < scores.shape[0]:
        j = i
        while j + 1 < scores.shape[0] and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class Metrics:
    accuracy: float
    auc: float | None
    confusion: np.ndarray  # (C, C), rows are true labels
    mean_loss: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "confusion": self.confusion.astype(int).tolist(),
            "mean_loss": self.mean_loss,
            "num_docs": int(self.confusion.sum()),
        }


def evaluate(
    params: ModelParams,
    docs: list[Document],
    hp: HyperParams,
    cfg: LossConfig,
) -> Metrics:
    """Eval-mode metrics: argmax accuracy (ties to the lowest class index),
    confusion matrix, mean loss, and AUC for binary tasks."""
    if not docs:
        raise ValueError("cannot evaluate on an empty document list")
    confusion = np.zeros((hp.C, hp.C), dtype=np.int64)
    total_loss = 0.0
    scores = np.empty(len(docs))
    labels = np.empty(len(docs), dtype=np.int64)
    for i, doc in enumerate(docs):
        state = forward(doc, params, hp, mode="eval")
        logits = classify(state.final_embedding, params)
        probs = class_probabilities(logits)
        predicted = int(np.argmax(probs))
        confusion[doc.label, predicted] += 1
        total_loss += loss_fn(logits, doc.label, cfg)
        scores[i] = probs[1] if hp.C == 2 else 0.0
        labels[i] = doc.label
    accuracy = float(np.trace(confusion)) / len(docs)
    auc_value: float | None = None
    if hp.C == 2 and 0 < labels.sum() < len(docs):
        auc_value = auc(scores, labels)
    return Metrics(accuracy, auc_value, confusion, total_loss / len(docs))


@dataclass
class HistoryRow:
    batch: int
    train_loss: float
    val_accuracy: float | None
    val_auc: float | None


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    history: list[HistoryRow]


def train(
    corpus: EncodedCorpus,
    cfg: TrainConfig,
    val: EncodedCorpus | None = None,
) -> TrainResult:
    """Run cfg.num_batches Adam updates over the corpus.

    Deterministic given the seed: parameter init, batch order, and dropout
    masks all derive from it.  A non-finite batch loss aborts immediately.
    The best-validation parameters (by AUC when available, else accuracy)
    are tracked alongside the final ones; with no validation corpus both
    are the final parameters.
    """
    if corpus.num_docs == 0:
        raise ValueError("training corpus is empty")
    seed_seq = np.random.SeedSequence(cfg.seed)
    init_seed, stream_seed = seed_seq.spawn(2)
    params = init_params(cfg.hp, corpus.vocab_size, init_seed)
    rng = np.random.default_rng(stream_seed)
    moments = AdamMoments.zeros_like(params)
    epoch = EpochState()
    history: list[HistoryRow] = []
    best_params = params
    best_score = -np.inf
    interval_losses: list[float] = []

    for batch_num in range(1, cfg.num_batches + 1):
        batch = sample_batch(corpus.num_docs, cfg.batch_size, epoch, rng)
        grads_sum: Gradients | None = None
        batch_loss = 0.0
        for doc_idx in batch:
            doc = corpus.docs[int(doc_idx)]
            state = forward(doc, params, cfg.hp, mode="train", rng=rng)
            value, grads = backward(state, params, doc, doc.label, cfg.loss)
            batch_loss += value
            if grads_sum is None:
                grads_sum = grads
            else:
                for name in grads_sum:
                    grads_sum[name] += grads[name]
        n = batch.shape[0]
        batch_loss /= n
        assert grads_sum is not None
        for name in grads_sum:
            grads_sum[name] /= n
        if not np.isfinite(batch_loss):
            raise TrainingDiverged(f"non-finite loss at batch {batch_num}")
        params, moments = adam_step(params, grads_sum, moments, cfg)
        interval_losses.append(batch_loss)

        if batch_num % cfg.eval_every == 0 or batch_num == cfg.num_batches:
            mean_loss = float(np.mean(interval_losses))
            interval_losses = []
            val_acc: float | None = None
            val_auc: float | None = None
            if val is not None:
                metrics = evaluate(params, val.docs, cfg.hp, cfg.loss)
                val_acc = metrics.accuracy
                val_auc = metrics.auc
                score = metrics.auc if metrics.auc is not None else metrics.accuracy
                if score > best_score:
                    best_score = score
                    best_params = params
            history.append(HistoryRow(batch_num, mean_loss, val_acc, val_auc))

    if val is None:
        best_params = params
    return TrainResult(params, best_params, history)


def write_history(rows: list[HistoryRow], path: str | Path) -> None:
    """History CSV: batch,train_loss,val_accuracy,val_auc (blank when absent)."""
    lines = ["batch,train_loss,val_accuracy,val_auc"]
    for row in rows:
        acc = fmt_float(row.val_accuracy) if row.val_accuracy is not None else ""
        roc = fmt_float(row.val_auc) if row.val_auc is not None else ""
        lines.append(f"{row.batch},{fmt_float(row.train_loss)},{acc},{roc}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
