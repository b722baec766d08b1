"""Classical mean-field variational inference for a single LDA document.

With a Dirichlet prior over the topic mixture and categorical topic/word
draws, the two stationarity conditions of the variational free energy
have closed forms:

    gamma_k      = alpha_k + sum_i q_z[i, k]
    q_z[i, k]  propto  beta[k, w_i] * exp(digamma(gamma_k) - digamma(sum gamma))

Sweeps alternate the word update (all words) with the mixture update;
each is an exact coordinate minimization, so the free energy trace is
non-increasing.  A brute-force posterior for two-topic documents
(enumeration over assignments plus a quadrature grid over the mixture)
provides the exact evidence and marginals that the variational bound is
checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def digamma(x):
    """Digamma via upward recurrence to x >= 10 plus the asymptotic series.

    Accurate to ~1e-13 relative for arguments >= 1e-6.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    if np.any(x <= 0):
        raise ValueError("digamma defined here for positive arguments only")
    acc = np.zeros_like(x)
    # psi(x) = psi(x + 1) - 1/x, applied until the series region
    for _ in range(10):
        small = x < 10.0
        if not small.any():
            break
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
    inv2 = 1.0 / (x * x)
    series = inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (
        1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (
            1.0 / 132.0 - inv2 * (691.0 / 32760.0))))))
    result = acc + np.log(x) - 0.5 / x - series
    return float(result[0]) if scalar else result


def _log_beta_fn(v: np.ndarray) -> float:
    """log of the multivariate Beta function."""
    return float(sum(math.lgamma(x) for x in v) - math.lgamma(float(np.sum(v))))


@dataclass
class MeanFieldState:
    gamma: np.ndarray  # (K,) Dirichlet parameters of q(theta)
    q_z: np.ndarray    # (N, K) per-word categorical distributions

    def __post_init__(self) -> None:
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.q_z = np.asarray(self.q_z, dtype=np.float64)


def update_q_theta(alpha: np.ndarray, q_z: np.ndarray) -> np.ndarray:
    """gamma = alpha + per-topic expected counts."""
    return np.asarray(alpha, dtype=np.float64) + np.asarray(q_z).sum(axis=0)


def update_q_z(beta: np.ndarray, word_id: int, gamma: np.ndarray) -> np.ndarray:
    """One word's categorical update, computed in log space."""
    return _update_q_z_batch(beta, np.array([word_id]), gamma)[0]


def _update_q_z_batch(beta: np.ndarray, word_ids: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma <= 0):
        raise ValueError("gamma must be positive")
    elog_theta = digamma(gamma) - digamma(float(gamma.sum()))
    cols = np.asarray(beta, dtype=np.float64)[:, word_ids].T  # (N, K)
    with np.errstate(divide="ignore"):
        log_unnorm = np.where(cols > 0, np.log(np.where(cols > 0, cols, 1.0)), -np.inf)
    log_unnorm = log_unnorm + elog_theta[None, :]
    peak = log_unnorm.max(axis=1, keepdims=True)
    dead = ~np.isfinite(peak[:, 0])
    if dead.any():
        word = int(word_ids[int(np.nonzero(dead)[0][0])])
        raise ValueError(f"word id {word} has zero probability under every topic")
    q = np.exp(log_unnorm - peak)
    return q / q.sum(axis=1, keepdims=True)


def free_energy(
    state: MeanFieldState,
    alpha: np.ndarray,
    beta: np.ndarray,
    word_ids: np.ndarray,
) -> float:
    """Variational free energy F = E_q[log q] - E_q[log p(theta, z, w)].

    Equal to KL(q || posterior) - log p(w), so it can only decrease under
    the coordinate updates and is bounded below by -log p(w).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    g = state.gamma
    q = state.q_z
    k = g.shape[0]
    g0 = float(g.sum())
    elog_theta = digamma(g) - digamma(g0)

    dirichlet_entropy = _log_beta_fn(g) + (g0 - k) * digamma(g0) - float(
        ((g - 1.0) * digamma(g)).sum())
    e_log_q_theta = -dirichlet_entropy
    e_log_p_theta = -_log_beta_fn(alpha) + float(((alpha - 1.0) * elog_theta).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        e_log_q_z = float(np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0).sum())
    e_log_p_z = float((q.sum(axis=0) * elog_theta).sum())
    cols = np.asarray(beta, dtype=np.float64)[:, np.asarray(word_ids, dtype=np.int64)].T
    with np.errstate(divide="ignore"):
        log_cols = np.where(cols > 0, np.log(np.where(cols > 0, cols, 1.0)), -np.inf)
    e_log_p_w = float(np.where(q > 0, q * log_cols, 0.0).sum())
    return e_log_q_theta + e_log_q_z - e_log_p_theta - e_log_p_z - e_log_p_w


def run_meanfield(
    alpha: np.ndarray,
    beta: np.ndarray,
    word_ids: np.ndarray,
    max_sweeps: int = 500,
    tol: float = 1e-10,
) -> tuple[MeanFieldState, np.ndarray]:
    """Alternate word and mixture updates until gamma stops moving.

    Starts from uniform q_z with the consistent gamma = alpha + N/K.  The
    returned trace holds the free energy of the initial state followed by
    one value per completed sweep; it is non-increasing.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    alpha = np.asarray(alpha, dtype=np.float64)
    word_ids = np.asarray(word_ids, dtype=np.int64)
    k = alpha.shape[0]
    n = word_ids.shape[0]
    q_z = np.full((n, k), 1.0 / k)
    gamma = update_q_theta(alpha, q_z)
    trace = [free_energy(MeanFieldState(gamma, q_z), alpha, beta, word_ids)]
    for _ in range(max_sweeps):
        q_z = _update_q_z_batch(beta, word_ids, gamma)
        new_gamma = update_q_theta(alpha, q_z)
        trace.append(free_energy(MeanFieldState(new_gamma, q_z), alpha, beta, word_ids))
        delta = float(np.abs(new_gamma - gamma).max())
        gamma = new_gamma
        if delta < tol:
            break
    return MeanFieldState(gamma, q_z), np.array(trace)


@dataclass
class BruteForcePosterior:
    evidence: float             # p(w), exact (assignment enumeration)
    log_evidence: float
    evidence_grid: float        # p(w) via trapezoid on the mixture grid
    theta_grid: np.ndarray      # (R,) grid over the topic-0 weight
    theta_posterior: np.ndarray # (R,) posterior density of the topic-0 weight
    z_marginals: np.ndarray     # (N, 2) exact p(z_i | w)

    def posterior_mean(self) -> np.ndarray:
        """E[theta | w] as a length-2 simplex vector."""
        m0 = float(np.trapezoid(self.theta_grid * self.theta_posterior, self.theta_grid))
        return np.array([m0, 1.0 - m0])


def brute_force_posterior(
    alpha: np.ndarray,
    beta: np.ndarray,
    word_ids: np.ndarray,
    grid_resolution: int = 1000,
) -> BruteForcePosterior:
    """Exact two-topic posterior by assignment enumeration plus a theta grid.

    Enumerates all 2^N topic assignments with the closed-form
    Dirichlet-multinomial weight for the evidence and p(z_i | w); the
    mixture posterior is tabulated on a trapezoid grid over [0, 1].
    Restricted to K = 2 and N <= 10.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    word_ids = np.asarray(word_ids, dtype=np.int64)
    if alpha.shape[0] != 2 or beta.shape[0] != 2:
        raise ValueError("brute force posterior requires exactly 2 topics")
    n = word_ids.shape[0]
    if n > 10:
        raise ValueError("brute force posterior limited to N <= 10")
    if grid_resolution < 1000:
        raise ValueError("grid_resolution must be >= 1000")

    log_b = np.full((2, max(n, 1)), -np.inf)
    if n > 0:
        cols = beta[:, word_ids]
        with np.errstate(divide="ignore"):
            log_b = np.where(cols > 0, np.log(np.where(cols > 0, cols, 1.0)), -np.inf)

    # enumeration: log p(z, w) = log B(alpha + counts) - log B(alpha) + sum_i log beta[z_i, w_i]
    log_b_alpha = _log_beta_fn(alpha)
    count_term = np.array([
        _log_beta_fn(alpha + np.array([n - n1, n1])) - log_b_alpha
        for n1 in range(n + 1)
    ])
    assignments = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1  # (2^N, N)
    if n > 0:
        word_terms = np.where(assignments == 1, log_b[1][None, :], log_b[0][None, :]).sum(axis=1)
    else:
        word_terms = np.zeros(1)
    n1 = assignments.sum(axis=1)
    log_joint = count_term[n1] + word_terms
    peak = float(log_joint.max())
    if not np.isfinite(peak):
        raise ValueError("document has zero probability under the model")
    rel = np.exp(log_joint - peak)
    log_evidence = peak + math.log(float(rel.sum()))
    evidence = math.exp(log_evidence)
    weights = np.exp(log_joint - log_evidence)  # p(z | w)
    z_marginals = np.empty((n, 2))
    for i in range(n):
        on = assignments[:, i] == 1
        z_marginals[i, 1] = float(weights[on].sum())
        z_marginals[i, 0] = float(weights[~on].sum())

    # mixture grid: p(t, w) = Dir(t; alpha) * prod_i (t b0_i + (1-t) b1_i)
    t = np.linspace(0.0, 1.0, grid_resolution)
    log_density = _log_dirichlet_1d(t, alpha)
    for i in range(n):
        mix = t * beta[0, word_ids[i]] + (1.0 - t) * beta[1, word_ids[i]]
        with np.errstate(divide="ignore"):
            log_density = log_density + np.where(mix > 0, np.log(np.where(mix > 0, mix, 1.0)), -np.inf)
    joint = np.exp(log_density)
    evidence_grid = float(np.trapezoid(joint, t))
    posterior = joint / evidence_grid
    return BruteForcePosterior(evidence, log_evidence, evidence_grid, t, posterior, z_marginals)


def _log_dirichlet_1d(t: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """log density of theta = (t, 1-t) under Dirichlet(alpha), K = 2.

    Exponents of exactly zero contribute nothing even at the boundary, so
    alpha = 1 stays finite there.
    """
    out = np.full(t.shape, -_log_beta_fn(alpha))
    with np.errstate(divide="ignore", invalid="ignore"):
        if alpha[0] != 1.0:
            out = out + (alpha[0] - 1.0) * np.log(t)
        if alpha[1] != 1.0:
            out = out + (alpha[1] - 1.0) * np.log(1.0 - t)
    return out


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre_unit(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    # leggauss is O(n^2)-expensive at high order; rules are reused constantly
    if nodes not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(nodes)
        _GL_CACHE[nodes] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[nodes]


def posterior_kl_quadrature(
    state: MeanFieldState,
    alpha: np.ndarray,
    beta: np.ndarray,
    word_ids: np.ndarray,
    log_evidence: float,
    nodes: int = 2000,
) -> float:
    """KL(q || posterior) by direct Gauss-Legendre quadrature (K = 2).

    Independent of the closed forms used by free_energy: every
    theta-integral is evaluated numerically, with the posterior obtained
    from the exact enumeration evidence.  Decomposes as
    KL(q(theta) || p(theta|w)) + sum_i E_q(theta)[ KL(q_i || p(z_i | theta, w_i)) ].
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    word_ids = np.asarray(word_ids, dtype=np.int64)
    if alpha.shape[0] != 2:
        raise ValueError("quadrature KL requires exactly 2 topics")
    t, wt = _gauss_legendre_unit(nodes)
    g = state.gamma
    log_q = (g[0] - 1.0) * np.log(t) + (g[1] - 1.0) * np.log(1.0 - t) - _log_beta_fn(g)
    q_density = np.exp(log_q)

    log_joint = _log_dirichlet_1d(t, alpha)
    for i in range(word_ids.shape[0]):
        mix = t * beta[0, word_ids[i]] + (1.0 - t) * beta[1, word_ids[i]]
        log_joint = log_joint + np.log(mix)
    log_posterior = log_joint - log_evidence
    total = float((wt * q_density * (log_q - log_posterior)).sum())

    for i in range(word_ids.shape[0]):
        b0 = beta[0, word_ids[i]]
        b1 = beta[1, word_ids[i]]
        mix = t * b0 + (1.0 - t) * b1
        cond0 = t * b0 / mix
        cond1 = 1.0 - cond0
        qi0, qi1 = float(state.q_z[i, 0]), float(state.q_z[i, 1])
        inner = np.zeros_like(t)
        if qi0 > 0:
            inner = inner + qi0 * (math.log(qi0) - np.log(cond0))
        if qi1 > 0:
            inner = inner + qi1 * (math.log(qi1) - np.log(cond1))
        total += float((wt * q_density * inner).sum())
    return total
