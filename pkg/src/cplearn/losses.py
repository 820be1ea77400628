"""Two-term training objective over code-assignment probabilities.

``total = beta * invariance + prior_matching`` where the invariance term is
the mean row cross-entropy between the assignment matrices of two augmented
views, and the prior term is the cross-entropy between a target prior and
the column means of the first view. A reverse-KL prior variant stays finite
when codes go unused. Logs are floored at 1e-30; floored evaluations are
flagged on the returned breakdown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ParameterError, ShapeError, Tape, Tensor, add, scale
from .projector import ProbMatrix

LOG_FLOOR = 1e-30

VARIANTS = ("forward_ce", "reverse_kl")


@dataclass(frozen=True)
class Prior:
    """Target distribution over the c dictionary codes."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        if q.ndim != 1 or q.size < 2:
            raise ParameterError("Prior: q must be a vector of length >= 2")
        if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
            raise ParameterError("Prior: entries must be >= 0 and sum to 1 within 1e-12")
        object.__setattr__(self, "q", q)

    @property
    def c(self) -> int:
        return self.q.size

    def entropy(self) -> float:
        nz = self.q[self.q > 0]
        return float(-(nz * np.log(nz)).sum())

    @staticmethod
    def uniform(c: int) -> "Prior":
        return Prior(np.full(c, 1.0 / c))


@dataclass
class LossBreakdown:
    invariance: float
    prior_matching: float
    total: float
    beta: float
    lower_bound: float
    certificate_gap: float
    floored: bool
    node: Tensor  # 1x1 tape node carrying the total for backward


def _floored_log(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """log(max(values, LOG_FLOOR)) and the mask of entries that were floored."""
    mask = values < LOG_FLOOR
    return np.log(np.maximum(values, LOG_FLOOR)), mask


class _FlooredFlag:
    """Mutable flag shared by the loss terms of one breakdown."""

    def __init__(self):
        self.value = False

    def mark(self, mask: np.ndarray) -> None:
        if mask.any():
            self.value = True


def invariance_loss(p: ProbMatrix, p_prime: ProbMatrix, tape: Tape | None = None,
                    flag: _FlooredFlag | None = None) -> Tensor:
    """Mean row cross-entropy -(1/n) sum_ij p_ij log p'_ij.

    Decomposes as mean row entropy plus mean row KL(p_i || p'_i); minimized
    over p' exactly at p' = p.
    """
    a, b = p.tensor, p_prime.tensor
    if a.shape != b.shape:
        raise ShapeError(f"invariance_loss: shapes disagree, {a.shape} vs {b.shape}")
    n = a.rows
    log_b, mask = _floored_log(b.data)
    if flag is not None:
        flag.mark(mask)
    value = -(a.data * log_b).sum() / n
    out = Tensor(np.array([[value]]))
    out.requires_grad = tape is not None and (a.requires_grad or b.requires_grad)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            g = out.grad[0, 0]
            if a.requires_grad:
                a.accumulate_grad(-g / n * log_b)
            if b.requires_grad:
                safe = np.where(mask, 0.0, a.data / np.maximum(b.data, LOG_FLOOR))
                b.accumulate_grad(-g / n * safe)
        tape.record(backward)
    return out


def prior_matching_loss(p: ProbMatrix, prior: Prior, tape: Tape | None = None,
                        flag: _FlooredFlag | None = None) -> Tensor:
    """Cross-entropy -sum_j q_j log pbar_j between the prior and column means.

    Equals H(q) + KL(q || pbar), so H(q) is a hard floor. Column means below
    the log floor are floored and flagged; this is the term that blows up
    under cluster collapse.
    """
    t = p.tensor
    if t.cols != prior.c:
        raise ShapeError(f"prior_matching_loss: P has c={t.cols} but prior c={prior.c}")
    n = t.rows
    col_mean = t.data.mean(axis=0)
    log_m, mask = _floored_log(col_mean)
    if flag is not None:
        flag.mark(mask)
    value = -(prior.q * log_m).sum()
    out = Tensor(np.array([[value]]))
    out.requires_grad = tape is not None and t.requires_grad
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            g = out.grad[0, 0]
            coef = np.where(mask, 0.0, prior.q / np.maximum(col_mean, LOG_FLOOR))
            t.accumulate_grad(np.broadcast_to(-g / n * coef, t.shape).copy())
        tape.record(backward)
    return out


def reverse_prior_matching_loss(p: ProbMatrix, prior: Prior, tape: Tape | None = None,
                                flag: _FlooredFlag | None = None) -> Tensor:
    """KL(pbar || q) with the 0 log 0 = 0 convention.

    Finite even when entire columns are unused, which is the point of the
    variant: early cluster collapse no longer produces infinities.
    """
    t = p.tensor
    if t.cols != prior.c:
        raise ShapeError(f"reverse_prior_matching_loss: P has c={t.cols} but prior c={prior.c}")
    n = t.rows
    col_mean = t.data.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(col_mean > 0.0, col_mean * (np.log(np.maximum(col_mean, LOG_FLOOR))
                                                     - np.log(prior.q)), 0.0)
    value = terms.sum()
    out = Tensor(np.array([[value]]))
    out.requires_grad = tape is not None and t.requires_grad
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            g = out.grad[0, 0]
            coef = np.where(col_mean > LOG_FLOOR,
                            np.log(np.maximum(col_mean, LOG_FLOOR)) - np.log(prior.q) + 1.0,
                            0.0)
            t.accumulate_grad(np.broadcast_to(g / n * coef, t.shape).copy())
        tape.record(backward)
    return out


def lower_bound_value(prior: Prior, beta: float, epsilon: float) -> float:
    """Certified minimum of the forward objective over the epsilon-bounded simplex.

    -beta*(1-eps*(c-1))*log(1-eps*(c-1)) - beta*eps*(c-1)*log(eps) + H(q);
    equals H(q) at epsilon = 0.
    """
    if epsilon < 0:
        raise ParameterError(f"lower_bound_value: epsilon must be >= 0, got {epsilon}")
    if epsilon == 0.0:
        return prior.entropy()
    c = prior.c
    top = 1.0 - epsilon * (c - 1)
    if top <= 0:
        raise ParameterError(f"lower_bound_value: epsilon {epsilon} too large for c={c}")
    return float(-beta * top * math.log(top) - beta * epsilon * (c - 1) * math.log(epsilon)
                 + prior.entropy())


def total_loss(p: ProbMatrix, p_prime: ProbMatrix, prior: Prior, beta: float,
               variant: str = "forward_ce", tape: Tape | None = None,
               epsilon: float = 0.0) -> LossBreakdown:
    """beta * invariance + prior term, with the certificate gap against the bound.

    ``epsilon`` only parameterizes the reported lower bound; the default 0
    gives the unconditional floor H(q) (forward variant), which any
    row-stochastic pair respects. Gradient flows to both views.
    """
    if beta <= 0:
        raise ParameterError(f"total_loss: beta must be positive, got {beta}")
    if variant not in VARIANTS:
        raise ParameterError(f"total_loss: unknown variant {variant!r}; choose from {VARIANTS}")
    flag = _FlooredFlag()
    inv = invariance_loss(p, p_prime, tape, flag)
    if variant == "forward_ce":
        prior_term = prior_matching_loss(p, prior, tape, flag)
        bound = lower_bound_value(prior, beta, epsilon)
    else:
        prior_term = reverse_prior_matching_loss(p, prior, tape, flag)
        bound = lower_bound_value(prior, beta, epsilon) - prior.entropy()
    node = add(scale(inv, beta, tape), prior_term, tape)
    total = node.item()
    return LossBreakdown(
        invariance=inv.item(),
        prior_matching=prior_term.item(),
        total=total,
        beta=beta,
        lower_bound=bound,
        certificate_gap=total - bound,
        floored=flag.value,
        node=node,
    )


def collapse_value_certificate(prior: Prior, beta: float, p_const: np.ndarray) -> float:
    """Objective value under full representation collapse onto one distribution.

    Every row of both views equals ``p_const``, giving beta*H(p) + CE(q, p).
    The two addends cannot be minimized simultaneously for beta > 0, which is
    why collapsed runs sit strictly above H(q).
    """
    p = np.asarray(p_const, dtype=np.float64).reshape(-1)
    if p.size != prior.c or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ParameterError("collapse_value_certificate: p_const must be a distribution over c codes")
    log_p, _ = _floored_log(p)
    entropy = float(-(np.where(p > 0, p * log_p, 0.0)).sum())
    cross = float(-(prior.q * log_p).sum())
    return beta * entropy + cross
