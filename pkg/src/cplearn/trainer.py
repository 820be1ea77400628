"""End-to-end training at desk scale: MLP backbone, vector augmentations,
Adam, and the two-view step (augment -> encode -> embed -> assign -> loss).

The dictionary is never updated. All randomness flows through named integer
seeds, so a (config, seed) pair reproduces the metrics stream and the final
parameters exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import ParameterError, ShapeError, Tape, Tensor, add_rowvec, leaky_relu, matmul
from .dictionary import Dictionary, sample_dictionary
from .losses import LossBreakdown, Prior, total_loss
from .optim import Adam
from .projector import ProjectorParams, code_probabilities, embed, temperature


class DataError(ValueError):
    """Dataset does not satisfy the operation's requirements."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries a parameter/activation statistics snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


class MLPBackbone:
    """Fully connected encoder with leaky-rectifier hidden activations (slope 0.2)."""

    def __init__(self, widths: Sequence[int], seed: int = 0, leaky_slope: float = 0.2):
        widths = list(widths)
        if len(widths) < 2:
            raise ParameterError("MLPBackbone: need at least input and output widths")
        self.widths = widths
        self.leaky_slope = leaky_slope
        rng = np.random.default_rng(seed)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = math.sqrt(1.0 / fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                                       requires_grad=True))
            self.biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def forward(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        if x.cols != self.widths[0]:
            raise ShapeError(f"backbone expects {self.widths[0]} features, got {x.cols}")
        out = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out = add_rowvec(matmul(out, w, tape), b, tape)
            if i != last:
                out = leaky_relu(out, self.leaky_slope, tape)
        return out

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.weights)):
            names.extend([f"backbone.w{i}", f"backbone.b{i}"])
        return names

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


@dataclass(frozen=True)
class AugmentConfig:
    """Vector-domain view generation: additive noise, feature dropout, scale jitter."""

    noise_std: float = 0.03
    dropout_prob: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ParameterError(f"noise_std must be >= 0, got {self.noise_std}")
        if not (0.0 <= self.dropout_prob < 1.0):
            raise ParameterError(f"dropout_prob must be in [0, 1), got {self.dropout_prob}")
        if self.scale_jitter < 0:
            raise ParameterError(f"scale_jitter must be >= 0, got {self.scale_jitter}")


def _one_view(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    view = x.copy()
    if cfg.scale_jitter > 0:
        view *= rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter,
                            size=(x.shape[0], 1))
    if cfg.dropout_prob > 0:
        view *= rng.random(x.shape) >= cfg.dropout_prob
    if cfg.noise_std > 0:
        view += rng.normal(0.0, cfg.noise_std, size=x.shape)
    return view


def augment(x, cfg: AugmentConfig, seed: int) -> tuple[Tensor, Tensor]:
    """Two independent stochastic views of the same batch, deterministic per seed."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return Tensor(_one_view(data, cfg, rng)), Tensor(_one_view(data, cfg, rng))


@dataclass(frozen=True)
class TrainConfig:
    f: int
    c: int
    batch: int
    epochs: int
    beta: float = 0.1
    epsilon: float = 1e-8
    lr: float = 1e-4
    activation: str = "l2norm"
    loss_variant: str = "forward_ce"
    hidden: tuple[int, ...] = (64, 64)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    dict_seed: int = 0
    train_seed: int = 0
    prior: Prior | None = None  # None = uniform over c codes

    def __post_init__(self):
        problems = []
        if self.batch < 2:
            problems.append(f"batch must be >= 2, got {self.batch}")
        if self.c < 2:
            problems.append(f"c must be >= 2, got {self.c}")
        if self.f < 1:
            problems.append(f"f must be >= 1, got {self.f}")
        if not (0.0 < self.epsilon < 1.0 / max(self.c, 2)):
            problems.append(f"epsilon must satisfy 0 < epsilon < 1/c, got {self.epsilon}")
        if self.beta <= 0:
            problems.append(f"beta must be > 0, got {self.beta}")
        if self.lr <= 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if problems:
            raise ParameterError("; ".join(problems))

    def resolved_prior(self) -> Prior:
        return self.prior if self.prior is not None else Prior.uniform(self.c)


def _statistics_snapshot(backbone: MLPBackbone, projector: ProjectorParams,
                         z: np.ndarray | None) -> dict:
    snap = {}
    for name, p in zip(backbone.parameter_names() + projector.parameter_names(),
                       backbone.parameters() + projector.parameters()):
        snap[name] = {"mean": float(p.data.mean()), "std": float(p.data.std()),
                      "absmax": float(np.abs(p.data).max())}
    if z is not None:
        snap["representations"] = {"mean": float(z.mean()), "std": float(z.std()),
                                   "absmax": float(np.abs(z).max())}
    return snap


def train_step(x: Tensor, backbone: MLPBackbone, projector: ProjectorParams,
               dictionary: Dictionary, cfg: TrainConfig, optimizer: Adam,
               step_seed: int) -> LossBreakdown:
    """One two-view optimization step; the dictionary stays frozen."""
    tape = Tape()
    view_a, view_b = augment(x, cfg.augment, step_seed)
    z_a = backbone.forward(view_a, tape)
    z_b = backbone.forward(view_b, tape)
    h_a = embed(z_a, projector, tape)
    h_b = embed(z_b, projector, tape)
    tau = temperature(cfg.f, x.rows, cfg.c, cfg.epsilon)
    p_a = code_probabilities(h_a, dictionary, tau, tape)
    p_b = code_probabilities(h_b, dictionary, tau, tape)
    breakdown = total_loss(p_a, p_b, cfg.resolved_prior(), cfg.beta, cfg.loss_variant, tape)
    if not math.isfinite(breakdown.total):
        raise TrainingDiverged(
            f"loss is not finite at step seed {step_seed}",
            _statistics_snapshot(backbone, projector, z_a.data))
    optimizer.zero_grad()
    tape.backward(breakdown.node)
    optimizer.step()
    return breakdown


def softmax_xent_labels(logits: Tensor, labels: np.ndarray,
                        tape: Tape | None = None) -> Tensor:
    """Mean cross-entropy of row softmax against integer class labels."""
    labels = np.asarray(labels, dtype=int)
    m = logits.rows
    if labels.size != m:
        raise ShapeError(f"softmax_xent_labels: {labels.size} labels for {m} rows")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(m)
    value = float(-np.log(np.maximum(p[rows, labels], 1e-300)).mean())
    out = Tensor(np.array([[value]]))
    out.requires_grad = tape is not None and logits.requires_grad
    if out.requires_grad:
        def backward():
            if out.grad is None:
                return
            g = out.grad[0, 0]
            delta = p.copy()
            delta[rows, labels] -= 1.0
            logits.accumulate_grad(g / m * delta)
        tape.record(backward)
    return out


def linear_probe(representations, labels, classes: int, epochs: int = 200,
                 lr: float = 0.01, seed: int = 0, holdout: float = 0.2) -> float:
    """Multinomial logistic regression on frozen representations.

    Full-batch Adam on a seeded train split; returns accuracy on the held-out
    remainder.
    """
    x = representations.data if isinstance(representations, Tensor) \
        else np.asarray(representations, dtype=np.float64)
    y = np.asarray(labels, dtype=int).reshape(-1)
    m, f = x.shape
    if y.size != m:
        raise ShapeError(f"linear_probe: {y.size} labels for {m} rows")
    if m < classes:
        raise DataError(f"linear_probe: {m} samples cannot cover {classes} classes")

    rng = np.random.default_rng(seed)
    order = rng.permutation(m)
    n_test = max(1, int(round(m * holdout)))
    test_idx, train_idx = order[:n_test], order[n_test:]
    if train_idx.size == 0:
        raise DataError("linear_probe: holdout leaves no training data")

    weight = Tensor(np.zeros((f, classes)), requires_grad=True)
    bias = Tensor(np.zeros((1, classes)), requires_grad=True)
    opt = Adam([weight, bias], lr=lr)
    x_train = Tensor(x[train_idx])
    y_train = y[train_idx]
    for _ in range(epochs):
        tape = Tape()
        logits = add_rowvec(matmul(x_train, weight, tape), bias, tape)
        loss = softmax_xent_labels(logits, y_train, tape)
        opt.zero_grad()
        tape.backward(loss)
        opt.step()

    test_logits = x[test_idx] @ weight.data + bias.data
    predictions = np.argmax(test_logits, axis=1)
    return float((predictions == y[test_idx]).mean())


# ---------------------------------------------------------------------------
# Checkpoint container: versioned, magic header, explicit little-endian f8.

CHECKPOINT_MAGIC = b"CPLN"
CHECKPOINT_VERSION = 1
_ACTIVATION_CODES = {"l2norm": 0, "tanh": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}


def _write_array(chunks: list[bytes], arr: np.ndarray) -> None:
    chunks.append(struct.pack("<qq", arr.shape[0], arr.shape[1]))
    chunks.append(arr.astype("<f8").tobytes())


def save_checkpoint(path, config_text: str, dictionary: Dictionary,
                    backbone: MLPBackbone, projector: ProjectorParams,
                    optimizer: Adam | None = None) -> None:
    """Serialize parameters, optimizer moments, dictionary seed, and config."""
    chunks: list[bytes] = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    cfg_bytes = config_text.encode("utf-8")
    chunks.append(struct.pack("<I", len(cfg_bytes)))
    chunks.append(cfg_bytes)
    chunks.append(struct.pack("<qqq", dictionary.f, dictionary.c,
                              -1 if dictionary.seed is None else dictionary.seed))
    chunks.append(struct.pack("<Bd", _ACTIVATION_CODES[projector.activation],
                              projector.eps_bn))
    chunks.append(struct.pack("<I", len(backbone.widths)))
    chunks.append(struct.pack(f"<{len(backbone.widths)}q", *backbone.widths))
    chunks.append(struct.pack("<d", backbone.leaky_slope))

    params = backbone.parameters() + projector.parameters()
    names = backbone.parameter_names() + projector.parameter_names()
    chunks.append(struct.pack("<I", len(params)))
    for name, p in zip(names, params):
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        _write_array(chunks, p.data)

    if optimizer is None:
        chunks.append(struct.pack("<B", 0))
    else:
        chunks.append(struct.pack("<B", 1))
        chunks.append(struct.pack("<q", optimizer.states[0].t if optimizer.states else 0))
        for state in optimizer.states:
            _write_array(chunks, state.m)
            _write_array(chunks, state.v)

    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return values

    def take_bytes(self, count: int) -> bytes:
        out = self.blob[self.pos:self.pos + count]
        self.pos += count
        return out

    def take_array(self) -> np.ndarray:
        rows, cols = self.take("<qq")
        data = np.frombuffer(self.take_bytes(rows * cols * 8), dtype="<f8")
        return data.reshape(rows, cols).astype(np.float64)


@dataclass
class Checkpoint:
    config_text: str
    dictionary: Dictionary
    backbone: MLPBackbone
    projector: ProjectorParams
    adam_step: int | None
    adam_moments: list[tuple[np.ndarray, np.ndarray]] | None


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    reader = _Reader(blob)
    reader.take_bytes(4)
    (version,) = reader.take("<I")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = reader.take("<I")
    config_text = reader.take_bytes(cfg_len).decode("utf-8")
    f, c, seed = reader.take("<qqq")
    if seed < 0:
        raise DataError(f"{path}: checkpoint dictionary has no seed; cannot regenerate")
    dictionary = sample_dictionary(f, c, seed)
    act_code, eps_bn = reader.take("<Bd")
    (n_widths,) = reader.take("<I")
    widths = list(reader.take(f"<{n_widths}q"))
    (leaky_slope,) = reader.take("<d")

    backbone = MLPBackbone(widths, seed=0, leaky_slope=leaky_slope)
    projector = ProjectorParams(f, activation=_ACTIVATION_NAMES[act_code], seed=0,
                                eps_bn=eps_bn)
    params = backbone.parameters() + projector.parameters()
    names = backbone.parameter_names() + projector.parameter_names()
    (n_params,) = reader.take("<I")
    if n_params != len(params):
        raise DataError(f"{path}: expected {len(params)} parameters, found {n_params}")
    for expected_name, param in zip(names, params):
        (name_len,) = reader.take("<H")
        name = reader.take_bytes(name_len).decode("utf-8")
        if name != expected_name:
            raise DataError(f"{path}: parameter order mismatch, {name} != {expected_name}")
        arr = reader.take_array()
        if arr.shape != param.data.shape:
            raise DataError(f"{path}: {name} has shape {arr.shape}, expected {param.data.shape}")
        param.data = arr

    (has_adam,) = reader.take("<B")
    adam_step = None
    moments = None
    if has_adam:
        (adam_step,) = reader.take("<q")
        moments = [(reader.take_array(), reader.take_array()) for _ in params]
    return Checkpoint(config_text=config_text, dictionary=dictionary, backbone=backbone,
                      projector=projector, adam_step=adam_step, adam_moments=moments)
