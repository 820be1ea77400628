"""Two-layer projection head: representations -> embeddings -> code probabilities.

The first layer composes a trainable linear map, batch normalization, and a
row activation (L2 normalization to radius sqrt(f/n), or tanh). The second
layer scores embeddings against the frozen dictionary codes and applies a
temperature softmax whose temperature is set analytically from (f, n, c,
epsilon) so that optimal assignments land on the epsilon-simplex extrema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ParameterError,
    ShapeError,
    Tape,
    Tensor,
    add_rowvec,
    batchnorm,
    l2norm_rows,
    matmul,
    softmax_rows,
    tanh_rows,
)
from .dictionary import Dictionary

ACTIVATIONS = ("l2norm", "tanh")


class ProjectorParams:
    """Trainable projector parameters: linear weight/bias and batch-norm scale/shift.

    The activation is fixed for the lifetime of a run. The linear weight is
    initialized uniform in +-sqrt(1/f), bias and shift start at zero, scale
    at one.
    """

    def __init__(self, f: int, activation: str = "l2norm", seed: int = 0,
                 eps_bn: float = 1e-5):
        if activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")
        rng = np.random.default_rng(seed)
        bound = math.sqrt(1.0 / f)
        self.f = f
        self.activation = activation
        self.eps_bn = eps_bn
        self.linear_weight = Tensor(rng.uniform(-bound, bound, size=(f, f)), requires_grad=True)
        self.linear_bias = Tensor(np.zeros((1, f)), requires_grad=True)
        self.bn_gamma = Tensor(np.ones((1, f)), requires_grad=True)
        self.bn_beta = Tensor(np.zeros((1, f)), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.linear_weight, self.linear_bias, self.bn_gamma, self.bn_beta]

    def parameter_names(self) -> list[str]:
        return ["projector.linear_weight", "projector.linear_bias",
                "projector.bn_gamma", "projector.bn_beta"]


@dataclass
class EmbeddingMatrix:
    """n x f embedding batch; ``tensor`` participates in the active tape."""

    tensor: Tensor

    @property
    def values(self) -> np.ndarray:
        return self.tensor.data

    @property
    def n(self) -> int:
        return self.tensor.rows

    @property
    def f(self) -> int:
        return self.tensor.cols


@dataclass
class ProbMatrix:
    """n x c row-stochastic code-assignment matrix (and its clipping flag)."""

    tensor: Tensor
    clipped: bool = field(default=False)

    @property
    def values(self) -> np.ndarray:
        return self.tensor.data

    @property
    def n(self) -> int:
        return self.tensor.rows

    @property
    def c(self) -> int:
        return self.tensor.cols


def temperature(f: int, n: int, c: int, epsilon: float) -> float:
    """Softmax temperature f / (sqrt(n) * log((1 - eps*(c-1)) / eps)).

    Requires 0 < epsilon < 1/c so the log argument exceeds 1 and the
    resulting temperature is strictly positive.
    """
    if n < 1 or c < 2:
        raise ParameterError(f"temperature: need n >= 1 and c >= 2, got n={n}, c={c}")
    if not (0.0 < epsilon < 1.0 / c):
        raise ParameterError(
            f"temperature: epsilon must satisfy 0 < epsilon < 1/c = {1.0 / c:.6g}, "
            f"got {epsilon}")
    return f / (math.sqrt(n) * math.log((1.0 - epsilon * (c - 1)) / epsilon))


def embed(z: Tensor, params: ProjectorParams, tape: Tape | None = None) -> EmbeddingMatrix:
    """First projector layer: activation(Bn(Linear(z))) with the row scale.

    Under the L2 activation every output row has norm sqrt(f/n), with n the
    actual batch size of this forward pass. Under tanh the entries live in
    (-1, 1) and no rescale is applied.
    """
    n = z.rows
    lin = add_rowvec(matmul(z, params.linear_weight, tape), params.linear_bias, tape)
    normed = batchnorm(lin, params.bn_gamma, params.bn_beta, params.eps_bn, tape)
    if params.activation == "l2norm":
        out = l2norm_rows(normed, math.sqrt(params.f / n), tape)
    else:
        out = tanh_rows(normed, tape)
    return EmbeddingMatrix(tensor=out)


def code_probabilities(h: EmbeddingMatrix, dictionary: Dictionary, tau: float,
                       tape: Tape | None = None) -> ProbMatrix:
    """Second projector layer: row softmax of (H W) / tau.

    The training path never clips the result; use :func:`clip_probabilities`
    on the diagnostic path when residuals against the epsilon-bounded
    simplex are needed.
    """
    if h.f != dictionary.f:
        raise ShapeError(
            f"code_probabilities: embeddings have f={h.f} but dictionary f={dictionary.f}")
    logits = matmul(h.tensor, Tensor(dictionary.codes), tape)
    return ProbMatrix(tensor=softmax_rows(logits, tau, tape))


def clip_probabilities(p: ProbMatrix, epsilon: float) -> ProbMatrix:
    """Project each row into the box [eps, 1 - eps*(c-1)] keeping row sums at 1.

    Entries below eps are raised to eps and the total raise is taken from the
    row maximum; if the maximum then still exceeds its cap, the excess is
    spread evenly over the remaining entries. Diagnostic-only, not
    differentiable.
    """
    c = p.c
    if not (0.0 < epsilon < 1.0 / c):
        raise ParameterError(
            f"clip_probabilities: epsilon must satisfy 0 < epsilon < 1/c, got {epsilon}")
    cap = 1.0 - epsilon * (c - 1)
    v = p.values.copy()
    top = np.argmax(v, axis=1)
    raised = np.maximum(v, epsilon)
    surplus = raised.sum(axis=1) - 1.0
    rows = np.arange(v.shape[0])
    raised[rows, top] -= surplus
    excess = np.maximum(raised[rows, top] - cap, 0.0)
    raised[rows, top] -= excess
    raised += (excess / (c - 1))[:, None]
    raised[rows, top] -= excess / (c - 1)
    return ProbMatrix(tensor=Tensor(raised), clipped=True)
