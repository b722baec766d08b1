"""Randomized verification suites behind the `verify` CLI command.

Each suite measures a set of numeric properties against fixed bounds and
returns a structured report.  Seeds are fixed so reports are reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import Document
from .diff import LossConfig, grad_check
from .model import HyperParams, init_params
from .oracle import (
    MeanFieldState,
    _update_q_z_batch,
    brute_force_posterior,
    free_energy,
    posterior_kl_quadrature,
    run_meanfield,
    update_q_theta,
)
from .train import auc


@dataclass
class PropertyResult:
    name: str
    measured: float
    bound: float
    comparison: str  # "<=" or ">="
    passed: bool


@dataclass
class SuiteReport:
    suite: str
    properties: list[PropertyResult]
    elapsed_seconds: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.properties)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "passed": self.passed,
            "elapsed_seconds": self.elapsed_seconds,
            "properties": [
                {
                    "name": p.name,
                    "measured": p.measured,
                    "bound": p.bound,
                    "comparison": p.comparison,
                    "passed": p.passed,
                }
                for p in self.properties
            ],
            **self.details,
        }


def _prop_le(name: str, measured: float, bound: float) -> PropertyResult:
    return PropertyResult(name, float(measured), bound, "<=", bool(measured <= bound))


def _prop_ge(name: str, measured: float, bound: float) -> PropertyResult:
    return PropertyResult(name, float(measured), bound, ">=", bool(measured >= bound))


def run_gradcheck_suite(
    n_configs: int = 100,
    seed: int = 20240601,
    coords_per_array: int = 200,
    bound: float = 1e-5,
) -> SuiteReport:
    """Finite-difference validation of the backward sweep on random configs."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        hp = HyperParams(
            D=int(rng.choice([2, 4, 8])),
            T=int(rng.choice([1, 2, 3])),
            depth_z=int(rng.choice([1, 2])),
            depth_theta=int(rng.choice([1, 2])),
            C=int(rng.choice([2, 3])),
        )
        vocab_size = int(rng.integers(5, 31))
        n_words = int(rng.integers(1, 11))
        params = init_params(hp, vocab_size, int(rng.integers(0, 2**31)))
        doc = Document(rng.integers(0, vocab_size, size=n_words), int(rng.integers(0, hp.C)))
        weights = np.ones(hp.C)
        if rng.random() < 0.5:
            weights[int(rng.integers(0, hp.C))] = 1.4
        cfg = LossConfig.for_classes(hp.C, weights)
        err = grad_check(
            params, hp, doc, doc.label, cfg,
            coords_per_array=coords_per_array,
            seed=int(rng.integers(0, 2**31)),
        )
        worst = max(worst, err)
    elapsed = time.perf_counter() - start
    return SuiteReport(
        "gradcheck",
        [_prop_le("max_relative_error", worst, bound)],
        elapsed,
        {"configs": n_configs, "coords_per_array": coords_per_array},
    )


def _random_mf_instance(rng: np.random.Generator, max_topics: int = 5,
                        max_vocab: int = 10, max_words: int = 8,
                        min_alpha: float = 0.2, two_topics: bool = False):
    k = 2 if two_topics else int(rng.integers(2, max_topics + 1))
    v = int(rng.integers(3, max_vocab + 1))
    n = int(rng.integers(1, max_words + 1))
    alpha = rng.uniform(min_alpha, 3.0, size=k)
    beta = rng.dirichlet(np.ones(v), size=k)
    word_ids = rng.integers(0, v, size=n)
    return alpha, beta, word_ids


def run_oracle_suite(
    n_instances: int = 100,
    n_bound_instances: int = 20,
    grid_resolution: int = 5000,
    seed: int = 19530421,
) -> SuiteReport:
    """Mean-field convergence, fixed-point, and variational-bound checks."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)

    worst_increase = -np.inf
    worst_residual = 0.0
    for _ in range(n_instances):
        alpha, beta, word_ids = _random_mf_instance(rng)
        state, trace = run_meanfield(alpha, beta, word_ids, max_sweeps=2000, tol=1e-12)
        if trace.shape[0] > 1:
            worst_increase = max(worst_increase, float(np.diff(trace).max()))
        fresh_q = _update_q_z_batch(beta, word_ids, state.gamma)
        fresh_gamma = update_q_theta(alpha, fresh_q)
        residual = max(
            float(np.abs(fresh_q - state.q_z).max()),
            float(np.abs(fresh_gamma - state.gamma).max()),
        )
        worst_residual = max(worst_residual, residual)

    min_gap = np.inf
    worst_kl_mismatch = 0.0
    instances = []
    for _ in range(n_bound_instances):
        alpha, beta, word_ids = _random_mf_instance(rng, two_topics=True, min_alpha=1.0)
        state, trace = run_meanfield(alpha, beta, word_ids, max_sweeps=2000, tol=1e-12)
        brute = brute_force_posterior(alpha, beta, word_ids, grid_resolution)
        f_value = free_energy(state, alpha, beta, word_ids)
        gap = f_value + brute.log_evidence  # equals KL(q || posterior)
        min_gap = min(min_gap, gap)
        kl = posterior_kl_quadrature(state, alpha, beta, word_ids, brute.log_evidence)
        worst_kl_mismatch = max(worst_kl_mismatch, abs(gap - kl))
        instances.append({
            "gamma": state.gamma.tolist(),
            "free_energy": f_value,
            "sweeps": int(trace.shape[0] - 1),
            "kl_gap": gap,
        })

    elapsed = time.perf_counter() - start
    return SuiteReport(
        "oracle",
        [
            _prop_le("max_free_energy_increase", worst_increase, 1e-10),
            _prop_le("max_fixed_point_residual", worst_residual, 1e-8),
            _prop_ge("min_bound_gap", min_gap, -1e-4),
            _prop_le("max_kl_quadrature_mismatch", worst_kl_mismatch, 1e-3),
        ],
        elapsed,
        {"instances": instances, "grid_resolution": grid_resolution},
    )


def _auc_brute_force(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    concordant = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                concordant += 1.0
            elif p == q:
                concordant += 0.5
    return concordant / (pos.shape[0] * neg.shape[0])


def run_auc_suite(n_instances: int = 1000, seed: int = 7411) -> SuiteReport:
    """Sorted-rank AUC must equal the all-pairs computation exactly."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(n_instances):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() == 0:
            labels[0] = 1
        elif labels.sum() == n:
            labels[0] = 0
        if rng.random() < 0.5:
            scores = rng.integers(0, 5, size=n).astype(np.float64)  # heavy ties
        else:
            scores = rng.normal(size=n)
        if auc(scores, labels) != _auc_brute_force(scores, labels):
            mismatches += 1
    elapsed = time.perf_counter() - start
    return SuiteReport(
        "auc",
        [_prop_le("exact_mismatches", float(mismatches), 0.0)],
        elapsed,
        {"instances": n_instances},
    )


SUITES = {
    "gradcheck": run_gradcheck_suite,
    "oracle": run_oracle_suite,
    "auc": run_auc_suite,
}
