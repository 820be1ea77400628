"""Synthetic dataset generation and CSV ingestion.

CSV layout: header ``label,x0..x{dim-1}``, one integer label column
(-1 = unlabeled) followed by the features. No quoting, UTF-8, LF line
endings; generation is byte-deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ParameterError
from .trainer import DataError


@dataclass(frozen=True)
class LabeledData:
    features: np.ndarray  # (m, dim) float64
    labels: np.ndarray    # (m,) int, -1 for unlabeled

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def num_classes(self) -> int:
        labeled = self.labels[self.labels >= 0]
        return int(labeled.max()) + 1 if labeled.size else 0


def make_gaussian_clusters(clusters: int, dim: int, per_cluster: int, spread: float,
                           seed: int) -> LabeledData:
    """Isotropic Gaussian blobs with means drawn on the unit sphere."""
    if clusters < 1 or dim < 1 or per_cluster < 1:
        raise ParameterError(
            f"make_gaussian_clusters: counts must be >= 1, got clusters={clusters}, "
            f"dim={dim}, per_cluster={per_cluster}")
    if spread < 0:
        raise ParameterError(f"make_gaussian_clusters: spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(clusters, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    features = np.concatenate([
        means[k] + spread * rng.normal(size=(per_cluster, dim)) for k in range(clusters)
    ])
    labels = np.repeat(np.arange(clusters), per_cluster)
    return LabeledData(features=features, labels=labels)


def write_csv(data: LabeledData, path) -> None:
    path = Path(path)
    header = "label," + ",".join(f"x{i}" for i in range(data.dim))
    lines = [header]
    for label, row in zip(data.labels, data.features):
        lines.append(str(int(label)) + "," + ",".join(f"{v:.17g}" for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def gen_data(clusters: int, dim: int, per_cluster: int, spread: float, seed: int,
             out) -> LabeledData:
    """Generate a clustered dataset and write it as CSV; returns the data."""
    data = make_gaussian_clusters(clusters, dim, per_cluster, spread, seed)
    write_csv(data, out)
    return data


def load_csv(path) -> LabeledData:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    text = path.read_text(encoding="utf-8")
    lines = [line for line in text.split("\n") if line.strip()]
    if not lines:
        raise DataError(f"{path}: empty dataset file")
    header = lines[0].split(",")
    has_labels = header[0].strip() == "label"
    rows = []
    labels = []
    start_col = 1 if has_labels else 0
    expected = len(header)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != expected:
            raise DataError(f"{path}:{lineno}: expected {expected} columns, got {len(parts)}")
        try:
            if has_labels:
                labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[start_col:]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    features = np.asarray(rows, dtype=np.float64)
    if features.size == 0:
        raise DataError(f"{path}: no data rows")
    label_arr = np.asarray(labels, dtype=int) if has_labels \
        else np.full(features.shape[0], -1, dtype=int)
    return LabeledData(features=features, labels=label_arr)
