"""Loss functions and exact reverse-mode differentiation.

The forward pass retains every intermediate activation and dropout mask,
so the backward sweep here is a hand-written reverse traversal of the
fixed architecture: classifier head, then each unroll iteration from last
to first, through the normalization maps (Jacobian (I - u u^T)/||v|| with
u = v/||v||, zero on the zero-vector branch), the tanh stacks, the
feedback path, and finally the word-vector rows that actually occur in
the document.  Dropout masks are treated as constants.  A central
finite-difference checker validates the whole chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Document
from .model import (
    NORM_EPS,
    DropoutMasks,
    EmbeddingState,
    HyperParams,
    ModelParams,
    forward,
)

Gradients = dict[str, np.ndarray]


@dataclass(frozen=True)
class LossConfig:
    kind: str  # "binary-cross-entropy" | "cross-entropy"
    class_weights: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_weights",
                           np.asarray(self.class_weights, dtype=np.float64))
        if self.kind not in ("binary-cross-entropy", "cross-entropy"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if np.any(self.class_weights <= 0):
            raise ValueError("class weights must be positive")

    @staticmethod
    def for_classes(num_classes: int, class_weights=None) -> "LossConfig":
        kind = "binary-cross-entropy" if num_classes == 2 else "cross-entropy"
        if class_weights is None:
            class_weights = np.ones(num_classes)
        return LossConfig(kind, class_weights)


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def loss(logits: np.ndarray, label: int, cfg: LossConfig) -> float:
    """Weighted negative log-likelihood, computed in log space throughout."""
    return _loss_and_logit_grad(np.asarray(logits, dtype=np.float64), label, cfg)[0]


def _loss_and_logit_grad(
    logits: np.ndarray, label: int, cfg: LossConfig
) -> tuple[float, np.ndarray]:
    w = float(cfg.class_weights[label])
    if cfg.kind == "binary-cross-entropy":
        if logits.shape != (1,):
            raise ValueError("binary loss expects a single logit")
        if label not in (0, 1):
            raise ValueError(f"binary label must be 0 or 1, got {label}")
        s = float(logits[0])
        value = w * (_softplus(s) - label * s)
        grad = np.array([w * (_sigmoid(s) - label)])
        return value, grad
    c = logits.shape[0]
    if not (0 <= label < c):
        raise ValueError(f"label {label} out of range for {c} logits")
    m = float(logits.max())
    log_sum = m + math.log(np.exp(logits - m).sum())
    value = w * (log_sum - float(logits[label]))
    soft = np.exp(logits - log_sum)
    soft[label] -= 1.0
    return value, w * soft


def zero_gradients(params: ModelParams) -> Gradients:
    return {k: np.zeros_like(v) for k, v in params.as_dict().items()}


def _norm_backward(grad: np.ndarray, pre: np.ndarray) -> np.ndarray:
    """Pull a gradient back through v -> v/||v|| at pre-normalization v."""
    n = float(np.linalg.norm(pre))
    if n <= NORM_EPS:
        return np.zeros_like(pre)
    unit = pre / n
    return (grad - unit * float(unit @ grad)) / n


def _norm_backward_rows(grads: np.ndarray, pres: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(pres, axis=1, keepdims=True)
    safe = np.where(norms > NORM_EPS, norms, 1.0)
    units = pres / safe
    out = (grads - units * (units * grads).sum(axis=1, keepdims=True)) / safe
    out[norms[:, 0] <= NORM_EPS] = 0.0
    return out


def backward(
    state: EmbeddingState,
    params: ModelParams,
    doc: Document,
    label: int,
    cfg: LossConfig,
) -> tuple[float, Gradients]:
    """Loss and its exact gradient w.r.t. every parameter array.

    The state must come from a forward pass of this document under these
    parameters; params are left unmodified.
    """
    if not np.array_equal(state.word_ids, doc.word_ids):
        raise ValueError("state does not match document (word ids differ)")
    if state.mu_theta[0].shape[0] != params.dim:
        raise ValueError("state does not match parameters (dimension differs)")
    T = state.T
    masks = state.masks
    e_rows = params.word_emb[doc.word_ids]
    grads = zero_gradients(params)

    head_in = masks.head * state.mu_theta[T]
    logits = params.head_w @ head_in + params.head_b
    value, g_logits = _loss_and_logit_grad(logits, label, cfg)

    grads["head_w"] += np.outer(g_logits, head_in)
    grads["head_b"] += g_logits
    g_mu = masks.head * (params.head_w.T @ g_logits)  # d loss / d mu_theta[T]

    for t in range(T, 0, -1):
        # document stack: normalize, then tanh layers back to the masked sum
        g_act = _norm_backward(g_mu, state.theta_acts[t - 1][-1])
        for layer_idx in range(len(params.theta_layers) - 1, -1, -1):
            act = state.theta_acts[t - 1][layer_idx]
            g_pre = g_act * (1.0 - act * act)
            layer_in = state.z_sum[t - 1] if layer_idx == 0 else state.theta_acts[t - 1][layer_idx - 1]
            grads[f"theta_layer_{layer_idx}"] += np.outer(g_pre, layer_in)
            g_act = params.theta_layers[layer_idx].T @ g_pre
        g_sum = g_act  # d loss / d z_sum[t]

        # word stack: per-word masks, normalize, tanh layers, inputs
        g_mu_z = masks.z[t - 1] * g_sum[None, :]
        g_z_act = _norm_backward_rows(g_mu_z, state.z_acts[t - 1][-1])
        for layer_idx in range(len(params.z_layers) - 1, -1, -1):
            acts = state.z_acts[t - 1][layer_idx]
            g_pre = g_z_act * (1.0 - acts * acts)
            if layer_idx == 0:
                dropped_rows = masks.word[t - 1] * e_rows
                grads["z_layer_0"] += g_pre.T @ dropped_rows
                fed = masks.feedback[t - 1] * state.mu_theta[t - 1]
                g_pre_total = g_pre.sum(axis=0)
                grads["feedback"] += np.outer(g_pre_total, fed)
                g_e_rows = masks.word[t - 1] * (g_pre @ params.z_layers[0])
                np.add.at(grads["word_emb"], doc.word_ids, g_e_rows)
                g_mu = masks.feedback[t - 1] * (params.feedback.T @ g_pre_total)
            else:
                grads[f"z_layer_{layer_idx}"] += g_pre.T @ state.z_acts[t - 1][layer_idx - 1]
                g_z_act = g_pre @ params.z_layers[layer_idx]
        # g_mu now holds d loss / d mu_theta[t-1]; mu_theta[0] is a constant zero,
        # so the final value is simply discarded when t == 1.

    return value, grads


def grad_check(
    params: ModelParams,
    hp: HyperParams,
    doc: Document,
    label: int,
    cfg: LossConfig,
    eps: float = 1e-5,
    coords_per_array: int = 200,
    seed: int = 0,
    masks: DropoutMasks | None = None,
) -> float:
    """Max relative error between backward and central finite differences.

    Checks a random coordinate subset of every parameter array.  Dropout
    masks, when supplied, are held fixed across the perturbed evaluations;
    otherwise the check runs in eval mode.  Relative error is
    |a - b| / max(1e-8, |a| + |b|).
    """
    rng = np.random.default_rng(seed)
    work = params.copy()
    mode = "eval" if masks is None else "train"
    state = forward(doc, work, hp, mode=mode, masks=masks)
    fixed_masks = state.masks
    _, grads = backward(state, work, doc, label, cfg)

    def loss_at(p: ModelParams) -> float:
        st = forward(doc, p, hp, mode=mode, masks=fixed_masks)
        head_in = fixed_masks.head * st.mu_theta[-1]
        logits = p.head_w @ head_in + p.head_b
        return _loss_and_logit_grad(logits, label, cfg)[0]

    arrays = work.as_dict()
    max_rel = 0.0
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        size = flat.shape[0]
        n_checked = min(coords_per_array, size)
        coords = rng.choice(size, size=n_checked, replace=False)
        g_flat = grads[name].reshape(-1)
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + eps
            up = loss_at(work)
            flat[idx] = original - eps
            down = loss_at(work)
            flat[idx] = original
            numeric = (up - down) / (2.0 * eps)
            analytic = float(g_flat[idx])
            rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            max_rel = max(max_rel, rel)
    return max_rel
