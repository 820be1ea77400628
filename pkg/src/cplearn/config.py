"""Run configuration: a flat key = value text format plus override pairs.

Parsing is total: every malformed input produces a named, located error,
and validation reports all problems at once. Serialization round-trips.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .losses import Prior
from .trainer import AugmentConfig, TrainConfig

OUT_DIR_ENV = "CPLEARN_OUT_DIR"


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    # model / objective
    f: int = 16
    c: int = 16
    batch: int = 64
    epochs: int = 200
    beta: float = 0.1
    epsilon: float = 1e-8
    lr: float = 1e-4
    activation: str = "l2norm"
    loss_variant: str = "forward_ce"
    hidden: tuple[int, ...] = (64, 64)
    prior: str = "uniform"
    # augmentations
    noise_std: float = 0.03
    dropout_prob: float = 0.0
    scale_jitter: float = 0.0
    # seeds
    dict_seed: int = 0
    data_seed: int = 0
    train_seed: int = 0
    # dataset: a CSV path, or "synthetic" to generate clusters below
    dataset: str = "synthetic"
    synth_clusters: int = 4
    synth_dim: int = 16
    synth_per_cluster: int = 250
    synth_spread: float = 0.15
    # outputs and evaluation
    out_dir: str = ""
    probe_epochs: int = 200
    probe_lr: float = 0.01
    probe_holdout: float = 0.2
    gmm_components: tuple[int, ...] = (10, 20, 50, 100, 200, 500, 1000)
    gmm_samples: int = 10000
    run_diagnostics: bool = True
    run_lemma_check: bool = True
    run_probe: bool = True
    figures: bool = True

    def prior_vector(self) -> Prior:
        if self.prior == "uniform":
            return Prior.uniform(self.c)
        values = np.array([float(v) for v in self.prior.split(",")])
        return Prior(values)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            f=self.f, c=self.c, batch=self.batch, epochs=self.epochs, beta=self.beta,
            epsilon=self.epsilon, lr=self.lr, activation=self.activation,
            loss_variant=self.loss_variant, hidden=self.hidden,
            augment=AugmentConfig(noise_std=self.noise_std, dropout_prob=self.dropout_prob,
                                  scale_jitter=self.scale_jitter),
            dict_seed=self.dict_seed, train_seed=self.train_seed,
            prior=None if self.prior == "uniform" else self.prior_vector(),
        )


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in raw.split(",") if v.strip())


_PARSERS = {
    int: int,
    float: float,
    str: lambda raw: raw.strip(),
    bool: _parse_bool,
    tuple: _parse_int_tuple,
}


def _field_types() -> dict[str, type]:
    types = {}
    for spec in fields(RunConfig):
        if spec.type in ("int", int):
            types[spec.name] = int
        elif spec.type in ("float", float):
            types[spec.name] = float
        elif spec.type in ("bool", bool):
            types[spec.name] = bool
        elif "tuple" in str(spec.type):
            types[spec.name] = tuple
        else:
            types[spec.name] = str
    return types


_TYPES = _field_types()


def parse_config(text: str, overrides: dict[str, str] | None = None,
                 source: str = "<config>") -> RunConfig:
    """Parse flat key = value text, then apply overrides (overrides win)."""
    problems: list[str] = []
    values: dict[str, object] = {}

    def assign(key: str, raw: str, where: str) -> None:
        if key not in _TYPES:
            problems.append(f"{where}: unknown key {key!r}")
            return
        try:
            values[key] = _PARSERS[_TYPES[key]](raw)
        except ValueError as exc:
            problems.append(f"{where}: bad value for {key!r}: {exc}")

    for lineno, line in enumerate(text.split("\n"), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, raw = stripped.split("=", 1)
        assign(key.strip(), raw.strip(), f"{source}:{lineno}")

    for key, raw in (overrides or {}).items():
        assign(key, raw, "override")

    if problems:
        raise ConfigError(problems)

    cfg = replace(RunConfig(), **values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    problems: list[str] = []
    if cfg.f < 1:
        problems.append(f"f must be >= 1, got {cfg.f}")
    if cfg.c < 2:
        problems.append(f"c must be >= 2, got {cfg.c}")
    if cfg.batch < 2:
        problems.append(f"batch must be >= 2, got {cfg.batch}")
    if cfg.epochs < 1:
        problems.append(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.beta <= 0:
        problems.append(f"beta must be > 0, got {cfg.beta}")
    if cfg.c >= 2 and not (0.0 < cfg.epsilon < 1.0 / cfg.c):
        problems.append(
            f"epsilon must satisfy 0 < epsilon < 1/c = {1.0 / cfg.c:.6g}, got {cfg.epsilon}")
    if cfg.lr <= 0:
        problems.append(f"lr must be > 0, got {cfg.lr}")
    if cfg.activation not in ("l2norm", "tanh"):
        problems.append(f"activation must be 'l2norm' or 'tanh', got {cfg.activation!r}")
    if cfg.loss_variant not in ("forward_ce", "reverse_kl"):
        problems.append(
            f"loss_variant must be 'forward_ce' or 'reverse_kl', got {cfg.loss_variant!r}")
    if cfg.noise_std < 0:
        problems.append(f"noise_std must be >= 0, got {cfg.noise_std}")
    if not (0.0 <= cfg.dropout_prob < 1.0):
        problems.append(f"dropout_prob must be in [0, 1), got {cfg.dropout_prob}")
    if cfg.scale_jitter < 0:
        problems.append(f"scale_jitter must be >= 0, got {cfg.scale_jitter}")
    if not (0.0 < cfg.probe_holdout < 1.0):
        problems.append(f"probe_holdout must be in (0, 1), got {cfg.probe_holdout}")
    if cfg.probe_epochs < 1:
        problems.append(f"probe_epochs must be >= 1, got {cfg.probe_epochs}")
    if cfg.probe_lr <= 0:
        problems.append(f"probe_lr must be > 0, got {cfg.probe_lr}")
    if cfg.gmm_samples < 1:
        problems.append(f"gmm_samples must be >= 1, got {cfg.gmm_samples}")
    if any(k < 1 for k in cfg.gmm_components):
        problems.append(f"gmm_components must all be >= 1, got {cfg.gmm_components}")
    if any(w < 1 for w in cfg.hidden):
        problems.append(f"hidden widths must all be >= 1, got {cfg.hidden}")
    if cfg.prior != "uniform":
        try:
            prior = cfg.prior_vector()
            if prior.c != cfg.c:
                problems.append(f"prior has {prior.c} entries but c = {cfg.c}")
        except ValueError as exc:
            problems.append(f"bad prior: {exc}")
    if cfg.dataset != "synthetic":
        if not cfg.dataset.endswith(".csv"):
            problems.append(f"dataset must be 'synthetic' or a .csv path, got {cfg.dataset!r}")
    else:
        if cfg.synth_clusters < 1 or cfg.synth_dim < 1 or cfg.synth_per_cluster < 1:
            problems.append("synthetic dataset counts must all be >= 1")
        if cfg.synth_spread < 0:
            problems.append(f"synth_spread must be >= 0, got {cfg.synth_spread}")
    if problems:
        raise ConfigError(problems)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) is semantically identical."""
    lines = []
    for spec in fields(RunConfig):
        value = getattr(cfg, spec.name)
        if isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{spec.name} = {rendered}")
    return "\n".join(lines) + "\n"


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    return parse_config(path.read_text(encoding="utf-8"), overrides, source=str(path))
