"""Cooperative embedding network: forward pass and checkpointing.

A document is embedded by iterating two mutually constraining updates for
a fixed number of rounds T, starting from zero vectors:

    per word i:   mu_z[i] <- normalize(tanh-stack(word vector of w_i,
                                        with a feedback map of the previous
                                        document embedding added to the first
                                        layer pre-activation))
    document:     mu_theta <- normalize(tanh-stack(sum_i mu_z[i]))

The word update at round t consumes the document embedding from round
t-1, then the document update consumes the fresh word embeddings, so a
single round is already meaningful.  Inverted dropout is applied to the
word-vector lookups, to each mu_z before summation, to the document
embedding before feedback, and to the final embedding before the
classifier head; evaluation mode needs no rescaling.  All intermediate
activations and dropout masks are retained so the backward sweep in
`diff` can replay the pass exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import serialize
from .corpus import Document

NORM_EPS = 1e-12

_MAGIC = b"COOPLDA1\n"


class NonFiniteActivation(Exception):
    def __init__(self, iteration: int, stage: str, word_index: int | None = None):
        at = f"word {word_index}" if word_index is not None else "document stage"
        super().__init__(f"non-finite activation at iteration {iteration}, {stage} ({at})")
        self.iteration = iteration
        self.stage = stage
        self.word_index = word_index


@dataclass(frozen=True)
class HyperParams:
    D: int
    T: int = 1
    depth_z: int = 1
    depth_theta: int = 1
    dropout_w: float = 0.0
    dropout_z: float = 0.0
    dropout_theta: float = 0.0
    C: int = 2

    def __post_init__(self) -> None:
        if self.D < 1 or self.T < 1:
            raise ValueError("D and T must be >= 1")
        if self.depth_z not in (1, 2):
            raise ValueError("depth_z must be 1 or 2")
        if self.depth_theta not in (1, 2, 3):
            raise ValueError("depth_theta must be 1, 2, or 3")
        for p in (self.dropout_w, self.dropout_z, self.dropout_theta):
            if not (0.0 <= p < 1.0):
                raise ValueError("dropout probabilities must be in [0, 1)")
        if self.C < 2:
            raise ValueError("C must be >= 2")

    @property
    def head_dim(self) -> int:
        """Single logit for binary classification, C logits otherwise."""
        return 1 if self.C == 2 else self.C


@dataclass
class ModelParams:
    word_emb: np.ndarray            # (V, D) word vector table
    z_layers: list[np.ndarray]      # depth_z dense (D, D) maps for the word stack
    feedback: np.ndarray            # (D, D) map of mu_theta into the first z layer
    theta_layers: list[np.ndarray]  # depth_theta dense (D, D) maps for the doc stack
    head_w: np.ndarray              # (head_dim, D) classifier
    head_b: np.ndarray              # (head_dim,)

    def as_dict(self) -> dict[str, np.ndarray]:
        arrays = {"word_emb": self.word_emb}
        for i, w in enumerate(self.z_layers):
            arrays[f"z_layer_{i}"] = w
        arrays["feedback"] = self.feedback
        for i, w in enumerate(self.theta_layers):
            arrays[f"theta_layer_{i}"] = w
        arrays["head_w"] = self.head_w
        arrays["head_b"] = self.head_b
        return arrays

    @staticmethod
    def from_dict(arrays: dict[str, np.ndarray]) -> "ModelParams":
        z = [arrays[k] for k in sorted(arrays) if k.startswith("z_layer_")]
        t = [arrays[k] for k in sorted(arrays) if k.startswith("theta_layer_")]
        return ModelParams(arrays["word_emb"], z, arrays["feedback"], t,
                           arrays["head_w"], arrays["head_b"])

    def copy(self) -> "ModelParams":
        return ModelParams.from_dict({k: v.copy() for k, v in self.as_dict().items()})

    @property
    def vocab_size(self) -> int:
        return int(self.word_emb.shape[0])

    @property
    def dim(self) -> int:
        return int(self.word_emb.shape[1])


def init_params(hp: HyperParams, vocab_size: int, seed) -> ModelParams:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases zero.

    All maps consume D-dimensional inputs, so fan_in = D throughout
    (including the word table, whose rows feed the first z layer).
    """
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(hp.D)

    def uniform(shape) -> np.ndarray:
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        word_emb=uniform((vocab_size, hp.D)),
        z_layers=[uniform((hp.D, hp.D)) for _ in range(hp.depth_z)],
        feedback=uniform((hp.D, hp.D)),
        theta_layers=[uniform((hp.D, hp.D)) for _ in range(hp.depth_theta)],
        head_w=uniform((hp.head_dim, hp.D)),
        head_b=np.zeros(hp.head_dim),
    )


def normalize(v: np.ndarray) -> np.ndarray:
    """v / ||v||_2, or the zero vector when ||v||_2 <= 1e-12."""
    n = float(np.linalg.norm(v))
    if n <= NORM_EPS:
        return np.zeros_like(v)
    return v / n


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    safe = np.where(norms > NORM_EPS, norms, 1.0)
    out = mat / safe
    out[norms[:, 0] <= NORM_EPS] = 0.0
    return out


@dataclass
class DropoutMasks:
    """Inverted-dropout masks, one per application site per iteration."""

    word: np.ndarray      # (T, N, D) on word-vector lookups
    feedback: np.ndarray  # (T, D) on mu_theta fed back into the word update
    z: np.ndarray         # (T, N, D) on normalized mu_z before summation
    head: np.ndarray      # (D,) on the final mu_theta before the classifier

    def truncated(self, t: int) -> "DropoutMasks":
        return DropoutMasks(self.word[:t], self.feedback[:t], self.z[:t], self.head)


def sample_masks(hp: HyperParams, n_words: int, rng: np.random.Generator) -> DropoutMasks:
    def draw(p: float, shape) -> np.ndarray:
        if p == 0.0:
            return np.ones(shape)
        return (rng.random(shape) >= p) / (1.0 - p)

    return DropoutMasks(
        word=draw(hp.dropout_w, (hp.T, n_words, hp.D)),
        feedback=draw(hp.dropout_theta, (hp.T, hp.D)),
        z=draw(hp.dropout_z, (hp.T, n_words, hp.D)),
        head=draw(hp.dropout_theta, (hp.D,)),
    )


def _ones_masks(hp: HyperParams, n_words: int) -> DropoutMasks:
    return DropoutMasks(
        word=np.ones((hp.T, n_words, hp.D)),
        feedback=np.ones((hp.T, hp.D)),
        z=np.ones((hp.T, n_words, hp.D)),
        head=np.ones(hp.D),
    )


@dataclass
class EmbeddingState:
    """Everything needed to replay one forward pass bit-exactly."""

    word_ids: np.ndarray
    mode: str
    masks: DropoutMasks
    z_acts: list[list[np.ndarray]]      # [t][layer] -> (N, D) tanh outputs
    mu_z: list[np.ndarray]              # [t] -> (N, D) normalized rows
    z_sum: list[np.ndarray]             # [t] -> (D,) masked sum into the doc stack
    theta_acts: list[list[np.ndarray]]  # [t][layer] -> (D,) tanh outputs
    mu_theta: list[np.ndarray]          # [0..T]; index 0 is the zero start

    @property
    def T(self) -> int:
        return len(self.mu_theta) - 1

    @property
    def final_embedding(self) -> np.ndarray:
        return self.mu_theta[-1]


def forward(
    doc: Document,
    params: ModelParams,
    hp: HyperParams,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    masks: DropoutMasks | None = None,
) -> EmbeddingState:
    """Run the cooperative iteration over one document.

    Train mode samples fresh dropout masks from rng; eval mode uses unit
    masks.  Passing masks explicitly replays a recorded pass.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    n = doc.length
    if n == 0:
        raise ValueError("cannot embed an empty document")
    if masks is None:
        if mode == "train":
            if rng is None:
                raise ValueError("train mode requires an rng for dropout masks")
            masks = sample_masks(hp, n, rng)
        else:
            masks = _ones_masks(hp, n)

    e_rows = params.word_emb[doc.word_ids]  # (N, D)
    mu_theta = [np.zeros(hp.D)]
    z_acts: list[list[np.ndarray]] = []
    mu_z: list[np.ndarray] = []
    z_sums: list[np.ndarray] = []
    theta_acts: list[list[np.ndarray]] = []

    for t in range(1, hp.T + 1):
        fed = masks.feedback[t - 1] * mu_theta[t - 1]
        pre = (masks.word[t - 1] * e_rows) @ params.z_layers[0].T + params.feedback @ fed
        h = np.tanh(pre)
        acts = [h]
        for layer in params.z_layers[1:]:
            h = np.tanh(h @ layer.T)
            acts.append(h)
        if not np.isfinite(h).all():
            bad = int(np.nonzero(~np.isfinite(h).all(axis=1))[0][0])
            raise NonFiniteActivation(t, "word update", bad)
        z_acts.append(acts)
        z_norm = _normalize_rows(h)
        mu_z.append(z_norm)

        s = (masks.z[t - 1] * z_norm).sum(axis=0)
        z_sums.append(s)
        a = s
        tacts = []
        for layer in params.theta_layers:
            a = np.tanh(layer @ a)
            tacts.append(a)
        if not np.isfinite(a).all():
            raise NonFiniteActivation(t, "document update")
        theta_acts.append(tacts)
        mu_theta.append(normalize(a))

    return EmbeddingState(
        word_ids=doc.word_ids.copy(),
        mode=mode,
        masks=masks,
        z_acts=z_acts,
        mu_z=mu_z,
        z_sum=z_sums,
        theta_acts=theta_acts,
        mu_theta=mu_theta,
    )


def classify(mu_theta: np.ndarray, params: ModelParams) -> np.ndarray:
    """Logits of the linear head: head_w @ mu_theta + head_b."""
    return params.head_w @ mu_theta + params.head_b


def class_probabilities(logits: np.ndarray) -> np.ndarray:
    """Probabilities from logits: sigmoid for a single logit, else softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape == (1,):
        p = _sigmoid(logits[0])
        return np.array([1.0 - p, p])
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def embed_words(params: ModelParams, word_ids: np.ndarray, mu_theta: np.ndarray) -> np.ndarray:
    """Normalized word embeddings given a fixed document embedding (eval mode)."""
    e_rows = params.word_emb[np.asarray(word_ids, dtype=np.int64)]
    h = np.tanh(e_rows @ params.z_layers[0].T + params.feedback @ mu_theta)
    for layer in params.z_layers[1:]:
        h = np.tanh(h @ layer.T)
    return _normalize_rows(h)


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    hp: HyperParams,
    label_table_hash: str,
) -> None:
    """Binary container: magic, one JSON header line, little-endian f64 arrays."""
    arrays = params.as_dict()
    header = {
        "version": 1,
        "V": params.vocab_size,
        "label_table_hash": label_table_hash,
        "hp": {
            "D": hp.D, "T": hp.T, "depth_z": hp.depth_z, "depth_theta": hp.depth_theta,
            "dropout_w": hp.dropout_w, "dropout_z": hp.dropout_z,
            "dropout_theta": hp.dropout_theta, "C": hp.C,
        },
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(serialize.dumps(header, indent=0).replace("\n", " ").encode("utf-8"))
        fh.write(b"\n")
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, HyperParams, dict]:
    with Path(path).open("rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        header = serialize.loads(fh.readline().decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated checkpoint array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    hp = HyperParams(**header["hp"])
    meta = {"V": header["V"], "label_table_hash": header["label_table_hash"]}
    return ModelParams.from_dict(arrays), hp, meta
