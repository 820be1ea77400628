"""Backbone-free verification of the objective's optimality structure.

Two routes: direct minimization of the two-term objective over free logits
(no network in the loop), and exact matrix constructions against which the
embedding-alignment, diagonal-covariance, and block-adjacency claims are
checked with brute-force products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterError, Tape, Tensor, softmax_rows
from .dictionary import Dictionary
from .losses import Prior, lower_bound_value, total_loss
from .optim import Adam
from .projector import EmbeddingMatrix, ProbMatrix

# Residual thresholds declaring a simplex run converged to the known optimum.
INVARIANCE_TOL = 1e-2
PRIOR_TOL = 1e-2
ROW_MAX_TOL = 0.99

ALPHA_BRANCHES = ("aligned", "shrunk")


@dataclass
class Lemma1Report:
    """Residuals of a (P, P') pair against the three optimality conditions."""

    invariance_residual: float
    extrema_residual: float
    prior_residual: float
    count_per_code: np.ndarray
    expected_count_per_code: np.ndarray
    row_max_min: float
    loss_gap: float = math.nan
    converged: bool = False
    cluster_collapse: bool = False


@dataclass
class AlignmentReport:
    """Per-row decomposition of embeddings in an exactly orthogonal code basis."""

    per_row_best_code: np.ndarray
    per_row_alpha: np.ndarray
    alpha_residual: float
    spurious_norm: float
    admissible_alphas: tuple[float, float] = field(default=(0.0, 0.0))


def check_lemma1(p: ProbMatrix, p_prime: ProbMatrix, prior: Prior,
                 epsilon: float) -> Lemma1Report:
    """Measure invariance, extrema, and matched-prior residuals.

    The extrema residual is the max-norm distance of each row to the
    epsilon-simplex extreme point aligned with the row's largest entry; the
    expected per-code counts follow ((q_j - eps) / (1 - c*eps)) * n.
    """
    a, b = p.values, p_prime.values
    if a.shape != b.shape:
        raise ParameterError(f"check_lemma1: shapes disagree, {a.shape} vs {b.shape}")
    n, c = a.shape
    invariance_residual = float(np.abs(a - b).max())

    top = 1.0 - epsilon * (c - 1)
    rows = np.arange(n)
    j_star = np.argmax(a, axis=1)
    target = np.full_like(a, epsilon)
    target[rows, j_star] = top
    extrema_residual = float(np.abs(a - target).max())

    col_mean = a.mean(axis=0)
    prior_residual = float(np.abs(col_mean - prior.q).max())

    count_per_code = np.bincount(j_star, minlength=c)
    expected = (prior.q - epsilon) / (1.0 - c * epsilon) * n
    row_max_min = float(a.max(axis=1).min())

    converged = (invariance_residual < INVARIANCE_TOL
                 and prior_residual < PRIOR_TOL
                 and row_max_min > ROW_MAX_TOL
                 and bool(np.all(np.abs(count_per_code - expected) <= 1.0)))
    return Lemma1Report(
        invariance_residual=invariance_residual,
        extrema_residual=extrema_residual,
        prior_residual=prior_residual,
        count_per_code=count_per_code,
        expected_count_per_code=expected,
        row_max_min=row_max_min,
        converged=converged,
        cluster_collapse=bool(np.any(count_per_code == 0)),
    )


def optimize_simplex(n: int, c: int, prior: Prior, beta: float, epsilon: float,
                     seed: int, steps: int = 5000, lr: float = 0.05,
                     ) -> tuple[ProbMatrix, ProbMatrix, Lemma1Report]:
    """Minimize the two-term objective directly over free logits for P and P'.

    This strips the network away entirely: Adam descends from seeded random
    logits, and the returned report carries the residuals plus the gap of
    the final loss to the entropy floor H(q). Non-convergence is not an
    exception; the report's ``converged`` flag is simply left unset.
    """
    if prior.c != c:
        raise ParameterError(f"optimize_simplex: prior has c={prior.c}, expected {c}")
    uniform = bool(np.allclose(prior.q, 1.0 / c))
    if uniform and n % c != 0:
        raise ParameterError(
            f"optimize_simplex: uniform prior needs n divisible by c, got n={n}, c={c}")
    if beta <= 0:
        raise ParameterError(f"optimize_simplex: beta must be positive, got {beta}")

    rng = np.random.default_rng(seed)
    logits = Tensor(rng.normal(0.0, 1.0, size=(n, c)), requires_grad=True)
    logits_prime = Tensor(rng.normal(0.0, 1.0, size=(n, c)), requires_grad=True)
    opt = Adam([logits, logits_prime], lr=lr)

    breakdown = None
    for _ in range(steps):
        tape = Tape()
        p = ProbMatrix(tensor=softmax_rows(logits, 1.0, tape))
        p_prime = ProbMatrix(tensor=softmax_rows(logits_prime, 1.0, tape))
        breakdown = total_loss(p, p_prime, prior, beta, "forward_ce", tape)
        opt.zero_grad()
        tape.backward(breakdown.node)
        opt.step()

    p = ProbMatrix(tensor=softmax_rows(logits, 1.0))
    p_prime = ProbMatrix(tensor=softmax_rows(logits_prime, 1.0))
    final = total_loss(p, p_prime, prior, beta, "forward_ce")
    report = check_lemma1(p, p_prime, prior, epsilon)
    report.loss_gap = final.total - lower_bound_value(prior, beta, 0.0)
    return p, p_prime, report


def extrema_prob_matrix(assignments: np.ndarray, c: int, epsilon: float) -> ProbMatrix:
    """Rows placed exactly on the epsilon-simplex extreme points."""
    assignments = np.asarray(assignments, dtype=int)
    n = assignments.size
    values = np.full((n, c), epsilon)
    values[np.arange(n), assignments] = 1.0 - epsilon * (c - 1)
    return ProbMatrix(tensor=Tensor(values))


def construct_optimal_embeddings(dictionary: Dictionary, n: int,
                                 alpha_branch: str = "aligned") -> EmbeddingMatrix:
    """Embeddings satisfying the optimality alignment relation exactly.

    Rows are grouped by code, n/c per code. The ``aligned`` branch sets
    h_i = w_j / sqrt(n) (no spurious term); ``shrunk`` uses the second
    admissible coefficient (1 - 2/c) / sqrt(n), which drags in a -2/(c
    sqrt(n)) contribution from every other code. Both give row norms
    sqrt(f/n).
    """
    _require_exact_orthogonal(dictionary)
    c = dictionary.c
    if alpha_branch not in ALPHA_BRANCHES:
        raise ParameterError(f"unknown alpha_branch {alpha_branch!r}; choose from {ALPHA_BRANCHES}")
    if n % c != 0:
        raise ParameterError(f"construct_optimal_embeddings: n={n} not divisible by c={c}")
    per_code = n // c
    inv_sqrt_n = 1.0 / math.sqrt(n)
    alpha = inv_sqrt_n if alpha_branch == "aligned" else (1.0 - 2.0 / c) * inv_sqrt_n
    code_sum = dictionary.codes.sum(axis=1)
    rows = []
    for j in range(c):
        w_j = dictionary.codes[:, j]
        h = alpha * w_j + (alpha - inv_sqrt_n) * (code_sum - w_j)
        rows.extend([h] * per_code)
    return EmbeddingMatrix(tensor=Tensor(np.array(rows)))


def _require_exact_orthogonal(dictionary: Dictionary) -> None:
    if dictionary.c != dictionary.f:
        raise ParameterError(
            f"alignment checks need a square dictionary (c = f), got f={dictionary.f}, "
            f"c={dictionary.c}")
    gram = dictionary.codes.T @ dictionary.codes
    if not np.array_equal(gram, dictionary.f * np.eye(dictionary.f)):
        raise ParameterError("alignment checks need an exactly orthogonal dictionary "
                             "(W^T W = f I); use exact_orthogonal_dictionary")


def check_alignment(h: EmbeddingMatrix, dictionary: Dictionary, n: int) -> AlignmentReport:
    """Recover per-row code coefficients and compare against the admissible set.

    Each row is expanded in the orthogonal code basis (coefficients
    h_i . w_k / f). The dominant coefficient is the row's alpha; the report
    measures its distance to {1/sqrt(n), (1 - 2/c)/sqrt(n)} and the norm of
    whatever part of the row the alignment structure cannot explain.
    """
    _require_exact_orthogonal(dictionary)
    values = h.values
    c = dictionary.c
    coeffs = values @ dictionary.codes / float(dictionary.f)
    best = np.argmax(coeffs, axis=1)
    rows = np.arange(values.shape[0])
    alphas = coeffs[rows, best]

    inv_sqrt_n = 1.0 / math.sqrt(n)
    admissible = (inv_sqrt_n, (1.0 - 2.0 / c) * inv_sqrt_n)
    alpha_residual = float(np.minimum(np.abs(alphas - admissible[0]),
                                      np.abs(alphas - admissible[1])).max())

    code_sum = dictionary.codes.sum(axis=1)
    ideal = (alphas[:, None] * dictionary.codes[:, best].T
             + (alphas - inv_sqrt_n)[:, None] * (code_sum[None, :] - dictionary.codes[:, best].T))
    spurious_norm = float(np.linalg.norm(values - ideal, axis=1).max())

    return AlignmentReport(
        per_row_best_code=best,
        per_row_alpha=alphas,
        alpha_residual=alpha_residual,
        spurious_norm=spurious_norm,
        admissible_alphas=admissible,
    )


def check_covariance(h: EmbeddingMatrix) -> float:
    """Normalized Frobenius residual ||H^T H - I||_F / sqrt(f)."""
    values = h.values
    f = values.shape[1]
    return float(np.linalg.norm(values.T @ values - np.eye(f)) / math.sqrt(f))


def check_adjacency(h: EmbeddingMatrix, expected_block: int,
                    assignments: np.ndarray | None = None) -> tuple[float, int]:
    """Compare H H^T against equal diagonal blocks of value f/n.

    Rows must be grouped by assigned code; pass ``assignments`` to let the
    check sort them first. Returns the max absolute deviation from the ideal
    pattern and the number of diagonal blocks detected by thresholding at
    half the within-block value.
    """
    values = h.values
    if assignments is not None:
        order = np.argsort(np.asarray(assignments), kind="stable")
        values = values[order]
    n, f = values.shape
    if expected_block < 1:
        raise ParameterError(f"check_adjacency: expected_block must be >= 1, got {expected_block}")
    gram = values @ values.T
    within = f / n
    ideal = np.zeros((n, n))
    for start in range(0, n, expected_block):
        stop = min(start + expected_block, n)
        ideal[start:stop, start:stop] = within
    block_residual = float(np.abs(gram - ideal).max())

    # union-find over row pairs whose similarity clears half the block value
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    linked = np.abs(gram) > within / 2.0
    for i in range(n):
        for k in range(i + 1, n):
            if linked[i, k]:
                ri, rk = find(i), find(k)
                if ri != rk:
                    parent[ri] = rk
    detected_blocks = len({find(i) for i in range(n)})
    return block_residual, detected_blocks
