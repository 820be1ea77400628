"""Minimal reverse-mode differentiation over dense 2-D float64 tensors.

Supplies exactly the operations the projector, loss, and backbone need:
matrix product, row/column broadcasts, batch normalization, row L2
normalization, tanh, leaky ReLU, temperature softmax, and reductions.
Gradients are recorded on an explicit :class:`Tape` and replayed in
reverse order; a tape is single-use.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

NORM_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(ValueError):
    """A scalar argument is outside its admissible range."""


class EvaluationError(ValueError):
    """A function produced a non-finite value where a finite one is required."""


class Tensor:
    """Dense 2-D float64 array with an optional gradient accumulator.

    Data is always stored as an (rows, cols) float64 ndarray; 1-D input is
    promoted to a single row. ``grad`` is lazily allocated during backward
    and always matches ``data`` in shape.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = delta.copy()
        else:
            self.grad += delta

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of backward rules for one forward pass.

    Operations append their backward closure during the forward pass;
    :meth:`backward` replays them in reverse recorded order, which is a
    valid topological order for the straight-line graphs built here.
    A tape may be replayed once.
    """

    def __init__(self):
        self._entries: list[Callable[[], None]] = []
        self._used = False

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._entries.append(backward_fn)

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        if self._used:
            raise RuntimeError("tape already replayed; build a new tape per forward pass")
        self._used = True
        if loss.data.size != 1:
            raise ShapeError(f"backward() starts from a scalar, got shape {loss.shape}")
        loss.accumulate_grad(np.ones_like(loss.data))
        for entry in reversed(self._entries):
            entry()


def _binary_out(a: Tensor, b: Tensor, data: np.ndarray, tape: Tape | None) -> Tensor:
    out = Tensor(data)
    out.requires_grad = tape is not None and (a.requires_grad or b.requires_grad)
    return out


def _unary_out(a: Tensor, data: np.ndarray, tape: Tape | None) -> Tensor:
    out = Tensor(data)
    out.requires_grad = tape is not None and a.requires_grad
    return out


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Matrix product a @ b with the standard transpose backward rules."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    out = _binary_out(a, b, a.data @ b.data, tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                a.accumulate_grad(out.grad @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ out.grad)
        tape.record(backward)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes disagree, {a.shape} vs {b.shape}")
    out = _binary_out(a, b, a.data + b.data, tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                a.accumulate_grad(out.grad)
            if b.requires_grad:
                b.accumulate_grad(out.grad)
        tape.record(backward)
    return out


def add_rowvec(x: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Add a 1xF row vector to every row of an NxF tensor (bias broadcast)."""
    if b.rows != 1 or b.cols != x.cols:
        raise ShapeError(f"add_rowvec: bias {b.shape} does not broadcast over {x.shape}")
    out = _binary_out(x, b, x.data + b.data, tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            if x.requires_grad:
                x.accumulate_grad(out.grad)
            if b.requires_grad:
                b.accumulate_grad(out.grad.sum(axis=0, keepdims=True))
        tape.record(backward)
    return out


def scale(x: Tensor, k: float, tape: Tape | None = None) -> Tensor:
    """Multiply by a python scalar constant (not differentiated w.r.t. k)."""
    out = _unary_out(x, x.data * k, tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            x.accumulate_grad(out.grad * k)
        tape.record(backward)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise (Hadamard) product."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes disagree, {a.shape} vs {b.shape}")
    out = _binary_out(a, b, a.data * b.data, tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                a.accumulate_grad(out.grad * b.data)
            if b.requires_grad:
                b.accumulate_grad(out.grad * a.data)
        tape.record(backward)
    return out


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of all entries, as a 1x1 tensor."""
    out = _unary_out(x, np.array([[x.data.sum()]]), tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            x.accumulate_grad(np.full_like(x.data, out.grad[0, 0]))
        tape.record(backward)
    return out


def tanh_rows(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise hyperbolic tangent; backward uses 1 - tanh^2."""
    y = np.tanh(x.data)
    out = _unary_out(x, y, tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            x.accumulate_grad(out.grad * (1.0 - y * y))
        tape.record(backward)
    return out


def leaky_relu(x: Tensor, slope: float = 0.2, tape: Tape | None = None) -> Tensor:
    """Leaky rectifier: x for x > 0, slope * x otherwise."""
    positive = x.data > 0
    y = np.where(positive, x.data, slope * x.data)
    out = _unary_out(x, y, tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            x.accumulate_grad(out.grad * np.where(positive, 1.0, slope))
        tape.record(backward)
    return out


def l2norm_rows(x: Tensor, scale_factor: float, tape: Tape | None = None) -> Tensor:
    """Divide each row by its Euclidean norm, then multiply by ``scale_factor``.

    Row norms are floored at ``NORM_FLOOR`` so a zero row maps to zero
    instead of raising.
    """
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    r = np.maximum(norms, NORM_FLOOR)
    y = x.data / r * scale_factor
    out = _unary_out(x, y, tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            g = out.grad
            dot = (x.data * g).sum(axis=1, keepdims=True)
            x.accumulate_grad(scale_factor / r * (g - x.data * dot / (r * r)))
        tape.record(backward)
    return out


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, eps_bn: float = 1e-5,
              tape: Tape | None = None) -> Tensor:
    """Column-wise batch normalization with trainable scale and shift.

    Uses batch statistics with the biased variance (denominator n) in both
    forward and backward; the backward rule carries the full mean/variance
    coupling terms.
    """
    n = x.rows
    if n < 2:
        raise ParameterError(f"batchnorm: degenerate batch of {n} row(s); need n >= 2")
    if gamma.shape != (1, x.cols) or beta.shape != (1, x.cols):
        raise ShapeError(
            f"batchnorm: gamma {gamma.shape} / beta {beta.shape} must be (1, {x.cols})")
    mean = x.data.mean(axis=0, keepdims=True)
    var = x.data.var(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps_bn)
    x_hat = (x.data - mean) * inv_std
    out_data = gamma.data * x_hat + beta.data
    out = Tensor(out_data)
    out.requires_grad = tape is not None and (
        x.requires_grad or gamma.requires_grad or beta.requires_grad)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            g = out.grad
            if gamma.requires_grad:
                gamma.accumulate_grad((g * x_hat).sum(axis=0, keepdims=True))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=0, keepdims=True))
            if x.requires_grad:
                g_mean = g.mean(axis=0, keepdims=True)
                gx_mean = (g * x_hat).mean(axis=0, keepdims=True)
                x.accumulate_grad(gamma.data * inv_std * (g - g_mean - x_hat * gx_mean))
        tape.record(backward)
    return out


def softmax_rows(x: Tensor, tau: float, tape: Tape | None = None) -> Tensor:
    """Row-wise softmax of x / tau with max-subtraction stabilization."""
    if tau <= 0:
        raise ParameterError(f"softmax_rows: temperature must be positive, got {tau}")
    z = x.data / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = _unary_out(x, p, tape)
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            g = out.grad
            # row-wise (diag(p) - p p^T) g, divided by tau
            dot = (p * g).sum(axis=1, keepdims=True)
            x.accumulate_grad((p * g - p * dot) / tau)
        tape.record(backward)
    return out


def grad_check(fn: Callable[[Tensor, Tape | None], Tensor], point: Tensor,
               step: float = 1e-5) -> float:
    """Compare tape gradients of a scalar map against central differences.

    ``fn`` takes a tensor and an optional tape and returns a 1x1 tensor.
    Returns the worst componentwise relative error with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if not (1e-7 <= step <= 1e-3):
        raise ParameterError(f"grad_check: step {step} outside [1e-7, 1e-3]")
    tape = Tape()
    p = Tensor(point.data.copy(), requires_grad=True)
    out = fn(p, tape)
    value = out.item()
    if not np.isfinite(value):
        raise EvaluationError(f"grad_check: function value {value} is not finite")
    tape.backward(out)
    analytic = p.grad if p.grad is not None else np.zeros_like(p.data)

    numeric = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        f_plus = fn(Tensor(p.data.copy()), None).item()
        flat[idx] = orig - step
        f_minus = fn(Tensor(p.data.copy()), None).item()
        flat[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError("grad_check: perturbed evaluation is not finite")
        num_flat[idx] = (f_plus - f_minus) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())
