"""Word-relevance recovery from a document embedding.

Given a target embedding, find per-word weights f over a candidate set S
that make a single weighted update round reproduce the embedding: the
residual

    normalize(doc-stack( sum_{c in S} f_c * u_c )) - mu_theta,

where u_c is the normalized word embedding of candidate c computed with
mu_theta itself as feedback, should be near zero.  Minimizing its squared
norm with Adam yields relevance weights; the normalization steps mirror
the forward pass exactly so both sides live on the same scale.  Weights
are unconstrained and may come out negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Vocabulary
from .model import NORM_EPS, ModelParams, embed_words, normalize


@dataclass(frozen=True)
class RelevanceOptions:
    steps: int = 500
    learning_rate: float = 1e-2
    tol: float = 0.0  # stop early when the objective improves by less than this
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class RelevanceResult:
    f: np.ndarray               # (|S|,) weights, aligned with candidate_ids
    candidate_ids: np.ndarray   # (|S|,) vocabulary ids of the candidate set
    objective: float
    initial_objective: float
    iterations: int
    trace: list[float] = field(default_factory=list)


def _candidate_embeddings(
    mu_theta: np.ndarray, params: ModelParams, candidate_ids: np.ndarray
) -> np.ndarray:
    if candidate_ids.shape[0] == 0:
        raise ValueError("candidate set must be non-empty")
    return embed_words(params, candidate_ids, mu_theta)


def residual(
    f: np.ndarray,
    mu_theta: np.ndarray,
    params: ModelParams,
    candidate_ids: np.ndarray,
) -> np.ndarray:
    """Consistency residual of weights f against the target embedding."""
    candidate_ids = np.asarray(candidate_ids, dtype=np.int64)
    u = _candidate_embeddings(mu_theta, params, candidate_ids)
    return _residual_from_u(np.asarray(f, dtype=np.float64), u, mu_theta, params)[0]


def _residual_from_u(
    f: np.ndarray, u: np.ndarray, mu_theta: np.ndarray, params: ModelParams
) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    s = u.T @ f
    acts: list[np.ndarray] = []
    a = s
    for layer in params.theta_layers:
        a = np.tanh(layer @ a)
        acts.append(a)
    out = normalize(a)
    return out - mu_theta, acts, s


def objective_and_gradient(
    f: np.ndarray,
    mu_theta: np.ndarray,
    params: ModelParams,
    candidate_ids: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Squared residual norm and its exact gradient with respect to f."""
    candidate_ids = np.asarray(candidate_ids, dtype=np.int64)
    f = np.asarray(f, dtype=np.float64)
    u = _candidate_embeddings(mu_theta, params, candidate_ids)
    res, acts, _ = _residual_from_u(f, u, mu_theta, params)
    value = float(res @ res)

    g = 2.0 * res
    pre = acts[-1]
    n = float(np.linalg.norm(pre))
    if n <= NORM_EPS:
        return value, np.zeros_like(f)
    unit = pre / n
    g = (g - unit * float(unit @ g)) / n
    for layer_idx in range(len(params.theta_layers) - 1, -1, -1):
        act = acts[layer_idx]
        g = g * (1.0 - act * act)
        g = params.theta_layers[layer_idx].T @ g
    return value, u @ g


def solve_relevance(
    mu_theta: np.ndarray,
    params: ModelParams,
    candidate_ids: np.ndarray,
    opt: RelevanceOptions = RelevanceOptions(),
    init_counts: np.ndarray | None = None,
) -> RelevanceResult:
    """Adam descent on the squared residual; returns the best iterate seen.

    f starts at the supplied word counts when given, otherwise uniform
    1/|S|.  Fully deterministic.
    """
    candidate_ids = np.asarray(candidate_ids, dtype=np.int64)
    size = candidate_ids.shape[0]
    if init_counts is not None:
        f = np.asarray(init_counts, dtype=np.float64).copy()
        if f.shape != (size,):
            raise ValueError("init_counts must align with the candidate set")
    else:
        f = np.full(size, 1.0 / size)

    value, grad = objective_and_gradient(f, mu_theta, params, candidate_ids)
    if not np.isfinite(value):
        raise ValueError("relevance objective is non-finite at the initial point")
    best_f = f.copy()
    best_value = value
    initial = value
    trace = [value]
    m = np.zeros_like(f)
    v = np.zeros_like(f)
    iterations = 0
    for step in range(1, opt.steps + 1):
        m = opt.beta1 * m + (1.0 - opt.beta1) * grad
        v = opt.beta2 * v + (1.0 - opt.beta2) * grad * grad
        m_hat = m / (1.0 - opt.beta1**step)
        v_hat = v / (1.0 - opt.beta2**step)
        f = f - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)
        previous = value
        value, grad = objective_and_gradient(f, mu_theta, params, candidate_ids)
        if not np.isfinite(value):
            raise ValueError(f"relevance objective became non-finite at step {step}")
        trace.append(value)
        iterations = step
        if value < best_value:
            best_value = value
            best_f = f.copy()
        if opt.tol > 0 and abs(previous - value) < opt.tol:
            break
    return RelevanceResult(best_f, candidate_ids, best_value, initial, iterations, trace)


def top_words(result: RelevanceResult, vocab: Vocabulary, n: int) -> list[tuple[str, float]]:
    """Top-n candidates by weight, descending; ties break by token id."""
    if n > result.candidate_ids.shape[0]:
        raise ValueError("n exceeds the candidate set size")
    order = sorted(
        range(result.candidate_ids.shape[0]),
        key=lambda i: (-result.f[i], int(result.candidate_ids[i])),
    )
    return [
        (vocab.token_of[int(result.candidate_ids[i])], float(result.f[i]))
        for i in order[:n]
    ]
