"""Matplotlib renderers for the run report: loss curves, collapse views,
and the covariance/adjacency heatmaps, written as PNG files next to the
metrics stream.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_loss_curves(steps, invariance, prior_matching, total, lower_bound,
                     out_dir) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, total, label="total", lw=1.2)
    ax.plot(steps, invariance, label="invariance", lw=0.9, alpha=0.8)
    ax.plot(steps, prior_matching, label="prior matching", lw=0.9, alpha=0.8)
    ax.plot(steps, lower_bound, label="lower bound", ls="--", color="k", lw=0.9)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("training losses")
    return _save(fig, Path(out_dir) / "loss_curves.png")


def plot_singular_spectrum(singular_values, out_dir) -> Path:
    values = np.asarray(singular_values, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(np.arange(1, values.size + 1), np.maximum(values, 1e-20), marker="o",
                ms=3, lw=1)
    ax.set_xlabel("index (sorted)")
    ax.set_ylabel("singular value")
    ax.set_title("embedding covariance spectrum")
    return _save(fig, Path(out_dir) / "singular_spectrum.png")


def plot_code_histogram(code_histogram, out_dir) -> Path:
    counts = np.asarray(code_histogram)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(np.arange(counts.size), counts, width=0.9)
    ax.set_xlabel("code")
    ax.set_ylabel("assigned samples")
    ax.set_title(f"code usage ({int((counts > 0).sum())}/{counts.size} codes active)")
    return _save(fig, Path(out_dir) / "code_histogram.png")


def plot_matrix(matrix, title: str, filename: str, out_dir) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 4))
    im = ax.imshow(np.asarray(matrix), cmap="RdBu_r", interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    return _save(fig, Path(out_dir) / filename)


def plot_gmm_entropies(entropies_by_count: dict[int, float],
                       entropies_repr: dict[int, float], out_dir) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    if entropies_by_count:
        ks = sorted(entropies_by_count)
        ax.semilogx(ks, [entropies_by_count[k] for k in ks], marker="o", label="embeddings")
    if entropies_repr:
        ks = sorted(entropies_repr)
        ax.semilogx(ks, [entropies_repr[k] for k in ks], marker="s", label="representations")
    ax.set_xlabel("mixture components")
    ax.set_ylabel("entropy estimate")
    ax.set_title("intracluster spread probe")
    ax.legend(fontsize=8)
    return _save(fig, Path(out_dir) / "gmm_entropy.png")


def render_report_figures(metrics_rows: list[dict], collapse, h_values: np.ndarray,
                          assignments: np.ndarray, out_dir) -> list[Path]:
    """Render the full figure set for one finished run."""
    out_dir = Path(out_dir)
    written = []
    if metrics_rows:
        written.append(plot_loss_curves(
            [r["step"] for r in metrics_rows],
            [r["invariance"] for r in metrics_rows],
            [r["prior_matching"] for r in metrics_rows],
            [r["total"] for r in metrics_rows],
            [r["lower_bound"] for r in metrics_rows],
            out_dir))
    if collapse is not None:
        written.append(plot_singular_spectrum(collapse.singular_values, out_dir))
        written.append(plot_code_histogram(collapse.code_histogram, out_dir))
        if collapse.gmm_entropies or collapse.gmm_entropies_representation:
            written.append(plot_gmm_entropies(collapse.gmm_entropies,
                                              collapse.gmm_entropies_representation, out_dir))
    order = np.argsort(assignments, kind="stable")
    h_sorted = h_values[order]
    written.append(plot_matrix(h_values.T @ h_values, "embedding covariance H^T H",
                               "covariance.png", out_dir))
    written.append(plot_matrix(h_sorted @ h_sorted.T, "embedding adjacency H H^T",
                               "adjacency.png", out_dir))
    return written
