"""Claim-by-claim verification suites behind the ``verify`` subcommand.

Each suite runs its oracle at fixed desk-scale sizes and emits a table of
claim / residual / threshold / verdict rows. Exit status is decided by the
caller from ``VerifyResult.passed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dictionary import cosine_stats, exact_orthogonal_dictionary, sample_dictionary
from .losses import Prior
from .optimality import (
    check_adjacency,
    check_alignment,
    check_covariance,
    construct_optimal_embeddings,
    optimize_simplex,
)
from .projector import code_probabilities, temperature

SIMPLEX_N = 60
SIMPLEX_C = 6
SIMPLEX_STEPS = 5000
SIMPLEX_LR = 0.05
SIMPLEX_SEEDS = 5
SUITES = ("lemma1", "embedding", "dictionary", "all")


@dataclass
class CheckRow:
    claim: str
    value: float
    threshold: float
    op: str  # "<=" or ">="
    passed: bool

    @staticmethod
    def at_most(claim: str, value: float, threshold: float) -> "CheckRow":
        return CheckRow(claim, value, threshold, "<=", value <= threshold)

    @staticmethod
    def at_least(claim: str, value: float, threshold: float) -> "CheckRow":
        return CheckRow(claim, value, threshold, ">=", value >= threshold)


@dataclass
class VerifyResult:
    suite: str
    rows: list[CheckRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def extend(self, other: "VerifyResult") -> None:
        self.rows.extend(other.rows)

    def to_json_dict(self) -> dict:
        return {
            "suite": self.suite,
            "passed": self.passed,
            "checks": [
                {"claim": r.claim, "value": r.value, "threshold": r.threshold,
                 "op": r.op, "passed": r.passed}
                for r in self.rows
            ],
        }

    def format_table(self) -> str:
        width = max([len(r.claim) for r in self.rows] + [5])
        lines = [f"{'claim':<{width}}  {'value':>12}  {'threshold':>12}  verdict"]
        lines.append("-" * (width + 40))
        for r in self.rows:
            verdict = "pass" if r.passed else "FAIL"
            lines.append(f"{r.claim:<{width}}  {r.value:>12.4g}  "
                         f"{r.op}{r.threshold:>11.4g}  {verdict}")
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"[{self.suite}] {status} "
                     f"({sum(r.passed for r in self.rows)}/{len(self.rows)} checks)")
        return "\n".join(lines)


def verify_lemma1(seed: int = 0) -> VerifyResult:
    """Direct-optimization certificate for the loss-minima conditions.

    Balanced regime: beta = 0.5 must land on the equal partition with the
    loss at the entropy floor on at least 4 of 5 seeds. Collapse regime:
    beta = 10 must leave at least one code unused on at least 4 of 5 seeds.
    """
    prior = Prior.uniform(SIMPLEX_C)
    entropy_floor = math.log(SIMPLEX_C)
    expected_counts = np.full(SIMPLEX_C, SIMPLEX_N // SIMPLEX_C)

    successes = 0
    min_gap = math.inf
    worst_loss_gap = 0.0
    for i in range(SIMPLEX_SEEDS):
        _, _, report = optimize_simplex(SIMPLEX_N, SIMPLEX_C, prior, beta=0.5,
                                        epsilon=1e-8, seed=seed + i,
                                        steps=SIMPLEX_STEPS, lr=SIMPLEX_LR)
        ok = (abs(report.loss_gap) <= 1e-3
              and report.invariance_residual < 1e-2
              and report.prior_residual < 1e-2
              and np.array_equal(report.count_per_code, expected_counts))
        successes += ok
        min_gap = min(min_gap, report.loss_gap)
        worst_loss_gap = max(worst_loss_gap, abs(report.loss_gap))

    collapses = 0
    for i in range(SIMPLEX_SEEDS):
        _, _, report = optimize_simplex(SIMPLEX_N, SIMPLEX_C, prior, beta=10.0,
                                        epsilon=1e-8, seed=seed + i,
                                        steps=SIMPLEX_STEPS, lr=SIMPLEX_LR)
        collapses += report.cluster_collapse

    result = VerifyResult(suite="lemma1")
    result.rows.append(CheckRow.at_least(
        f"beta=0.5: equal partition at loss log({SIMPLEX_C}) (seeds passing)",
        successes, 4))
    result.rows.append(CheckRow.at_most(
        "beta=0.5: worst |final loss - entropy floor|", worst_loss_gap, 1e-3))
    result.rows.append(CheckRow.at_least(
        "loss never dips below the entropy floor (min gap)", min_gap, -1e-9))
    result.rows.append(CheckRow.at_least(
        "beta=10: cluster collapse (seeds with empty codes)", collapses, 4))
    return result


def verify_embedding(seed: int = 0) -> VerifyResult:
    """Exact-construction checks of the alignment, covariance, and adjacency claims."""
    del seed  # fully deterministic
    result = VerifyResult(suite="embedding")

    dictionary = exact_orthogonal_dictionary(4)
    n = 8
    h = construct_optimal_embeddings(dictionary, n, "aligned")
    alignment = check_alignment(h, dictionary, n)
    result.rows.append(CheckRow.at_most(
        "aligned construction: alpha distance to 1/sqrt(8)",
        float(np.abs(alignment.per_row_alpha - 1.0 / math.sqrt(n)).max()), 1e-10))
    result.rows.append(CheckRow.at_most(
        "aligned construction: unexplained row component", alignment.spurious_norm, 1e-10))
    result.rows.append(CheckRow.at_most(
        "diagonal covariance ||H^T H - I||_F / sqrt(f)", check_covariance(h), 1e-10))
    block_residual, blocks = check_adjacency(h, expected_block=n // dictionary.c)
    result.rows.append(CheckRow.at_most(
        "adjacency matches 4 blocks of size 2 at value 0.5", block_residual, 1e-10))
    result.rows.append(CheckRow.at_least("adjacency: detected diagonal blocks", blocks, 4))
    result.rows.append(CheckRow.at_most("adjacency: detected diagonal blocks (upper)",
                                        blocks, 4))

    n2 = 16
    h2 = construct_optimal_embeddings(dictionary, n2, "shrunk")
    alignment2 = check_alignment(h2, dictionary, n2)
    target = (1.0 - 2.0 / dictionary.c) / math.sqrt(n2)
    result.rows.append(CheckRow.at_most(
        "second-branch construction: alpha distance to (1-2/c)/sqrt(n)",
        float(np.abs(alignment2.per_row_alpha - target).max()), 1e-10))
    norms = np.linalg.norm(h2.values, axis=1)
    result.rows.append(CheckRow.at_most(
        "second-branch construction: row norm deviation from sqrt(f/n)",
        float(np.abs(norms - math.sqrt(dictionary.f / n2)).max()), 1e-10))

    epsilon = 1e-8
    tau = temperature(dictionary.f, n, dictionary.c, epsilon)
    p = code_probabilities(h, dictionary, tau)
    top = 1.0 - epsilon * (dictionary.c - 1)
    rows = np.arange(n)
    best = np.argmax(p.values, axis=1)
    top_dev = float(np.abs(p.values[rows, best] - top).max())
    off = p.values.copy()
    off[rows, best] = epsilon
    off_dev = float(np.abs(off - epsilon).max())
    result.rows.append(CheckRow.at_most(
        "softmax reproduces extrema value 1 - eps(c-1) at alignment", top_dev, 1e-9))
    result.rows.append(CheckRow.at_most(
        "softmax reproduces extrema value eps off the aligned code", off_dev, 1e-9))
    return result


def verify_dictionary(seed: int = 0) -> VerifyResult:
    """Quasi-orthogonality statistics of sampled code matrices."""
    result = VerifyResult(suite="dictionary")
    for f in (50, 100):
        for c in (f, 2 * f, 5 * f):
            stats = cosine_stats(sample_dictionary(f, c, seed))
            rel_var_err = abs(stats.var_offdiag_cosine - stats.theoretical_var) \
                / stats.theoretical_var
            result.rows.append(CheckRow.at_most(
                f"f={f}, c={c}: cosine variance within 20% of 1/f", rel_var_err, 0.20))
            pairs = c * (c - 1) / 2
            mean_limit = 3.0 * math.sqrt(1.0 / (f * pairs))
            result.rows.append(CheckRow.at_most(
                f"f={f}, c={c}: |mean off-diagonal cosine|",
                abs(stats.mean_offdiag_cosine), mean_limit))

    hadamard = exact_orthogonal_dictionary(64)
    gram_residual = float(np.abs(hadamard.codes.T @ hadamard.codes
                                 - 64.0 * np.eye(64)).max())
    result.rows.append(CheckRow.at_most(
        "Sylvester construction: W^T W = f I residual", gram_residual, 0.0))
    return result


def run_suite(suite: str, seed: int = 0) -> VerifyResult:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    if suite == "all":
        combined = VerifyResult(suite="all")
        for result in (verify_lemma1(seed), verify_embedding(seed), verify_dictionary(seed)):
            combined.extend(result)
        return combined
    return {"lemma1": verify_lemma1, "embedding": verify_embedding,
            "dictionary": verify_dictionary}[suite](seed)
