"""Collapse detectors and downstream-quality metrics.

Four failure modes, four detectors: the singular spectrum of the embedding
covariance (dimensional), the argmax code histogram (cluster), the entropy
of a fitted diagonal-covariance Gaussian mixture (intracluster), and the
across-row variance of the assignment probabilities (representation). A
full-rank check on the representations and NMI/linear-probe quality
measures round out the report.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterError, ShapeError, Tensor
from .dictionary import Dictionary
from .optimality import check_adjacency, check_covariance
from .projector import EmbeddingMatrix, ProbMatrix

GMM_VARIANCE_FLOOR = 1e-6
GMM_MAX_ITER = 200
GMM_REL_TOL = 1e-8


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (EmbeddingMatrix, ProbMatrix)):
        return x.values
    return np.asarray(x, dtype=np.float64)


def singular_spectrum(h) -> np.ndarray:
    """Singular values of the centered embedding covariance, descending.

    A flat spectrum means the embeddings fill the space isotropically;
    trailing zeros are the signature of dimensional collapse.
    """
    values = _as_array(h)
    n, f = values.shape
    if n < f:
        warnings.warn(f"singular_spectrum: n={n} < f={f}; spectrum is rank-limited by n",
                      stacklevel=2)
    centered = values - values.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / n
    spectrum = np.linalg.svd(cov, compute_uv=False)
    return np.sort(spectrum)[::-1]


@dataclass
class GmmEntropyResult:
    entropy: float
    converged: bool
    variance_floored: bool
    log_likelihood: float


def _log_gaussian_diag(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(m, k) matrix of log N(x_i; mu_k, diag(var_k))."""
    m, d = x.shape
    const = -0.5 * d * math.log(2.0 * math.pi)
    log_det = -0.5 * np.log(variances).sum(axis=1)  # (k,)
    diff = x[:, None, :] - means[None, :, :]  # (m, k, d)
    quad = -0.5 * (diff * diff / variances[None, :, :]).sum(axis=2)
    return const + log_det[None, :] + quad


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    peak = a.max(axis=axis, keepdims=True)
    return (peak + np.log(np.exp(a - peak).sum(axis=axis, keepdims=True))).squeeze(axis)


def _kmeanspp_means(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Spread initial means over the data, squared-distance weighted."""
    m = x.shape[0]
    means = [x[rng.integers(m)]]
    d2 = ((x - means[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            means.append(x[rng.integers(m)])
            continue
        idx = rng.choice(m, p=d2 / total)
        means.append(x[idx])
        d2 = np.minimum(d2, ((x - means[-1]) ** 2).sum(axis=1))
    return np.array(means)


def gmm_entropy(z, components: int, mc_samples: int = 10000,
                seed: int = 0) -> GmmEntropyResult:
    """Fit a diagonal-covariance Gaussian mixture by EM, then estimate its entropy.

    The entropy is -(1/S) sum log p(sample) over S Monte Carlo draws from
    the fitted mixture. Variances are floored at 1e-6 (flagged when the
    floor binds, the signature of intracluster collapse); EM runs at most
    200 iterations and returns the best-likelihood fit with ``converged``
    unset if the log-likelihood has not settled.
    """
    x = _as_array(z)
    m, d = x.shape
    if m < components:
        raise ParameterError(f"gmm_entropy: {components} components need at least as many "
                             f"samples, got m={m}")
    rng = np.random.default_rng(seed)
    k = components
    means = _kmeanspp_means(x, k, rng)
    variances = np.maximum(np.tile(x.var(axis=0), (k, 1)), GMM_VARIANCE_FLOOR)
    weights = np.full(k, 1.0 / k)

    converged = False
    floored = bool((x.var(axis=0) < GMM_VARIANCE_FLOOR).any())
    best = (-np.inf, means, variances, weights)
    prev_ll = -np.inf
    for _ in range(GMM_MAX_ITER):
        log_joint = _log_gaussian_diag(x, means, variances) + np.log(weights)[None, :]
        log_norm = _logsumexp(log_joint, axis=1)
        ll = float(log_norm.sum())
        resp = np.exp(log_joint - log_norm[:, None])

        if ll > best[0]:
            best = (ll, means.copy(), variances.copy(), weights.copy())
        if abs(ll - prev_ll) <= GMM_REL_TOL * max(1.0, abs(ll)):
            converged = True
            break
        prev_ll = ll

        bulk = resp.sum(axis=0)  # (k,)
        safe_bulk = np.maximum(bulk, 1e-12)
        weights = bulk / m
        means = resp.T @ x / safe_bulk[:, None]
        diff2 = (x[:, None, :] - means[None, :, :]) ** 2
        variances = (resp[:, :, None] * diff2).sum(axis=0) / safe_bulk[:, None]
        if (variances < GMM_VARIANCE_FLOOR).any():
            floored = True
        variances = np.maximum(variances, GMM_VARIANCE_FLOOR)

    ll, means, variances, weights = best

    safe_weights = np.maximum(weights, 0.0)
    safe_weights = safe_weights / safe_weights.sum()
    picks = rng.choice(k, size=mc_samples, p=safe_weights)
    draws = means[picks] + rng.standard_normal((mc_samples, d)) * np.sqrt(variances[picks])
    log_pdf = _logsumexp(_log_gaussian_diag(draws, means, variances)
                         + np.log(np.maximum(weights, 1e-300))[None, :], axis=1)
    return GmmEntropyResult(entropy=float(-log_pdf.mean()), converged=converged,
                            variance_floored=floored, log_likelihood=ll)


def nmi(assignments_a, assignments_b) -> float:
    """Normalized mutual information I(a;b) / sqrt(H(a) H(b)).

    Invariant to relabeling of either argument. Returns 1 for identical
    partitions (including two constant labelings), 0 when one side is
    constant and the other is not.
    """
    a = np.asarray(assignments_a).reshape(-1)
    b = np.asarray(assignments_b).reshape(-1)
    if a.size != b.size:
        raise ShapeError(f"nmi: length mismatch, {a.size} vs {b.size}")
    if a.size == 0:
        raise ParameterError("nmi: empty labelings")
    m = a.size
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    ra, rb = a_idx.max() + 1, b_idx.max() + 1
    table = np.zeros((ra, rb))
    np.add.at(table, (a_idx, b_idx), 1.0)
    pab = table / m
    pa = pab.sum(axis=1)
    pb = pab.sum(axis=0)

    def entropy(p):
        nz = p[p > 0]
        return float(-(nz * np.log(nz)).sum())

    ha, hb = entropy(pa), entropy(pb)
    if ha == 0.0 or hb == 0.0:
        return 1.0 if ra == 1 and rb == 1 else 0.0
    nz = pab > 0
    mi = float((pab[nz] * (np.log(pab[nz]) - np.log(np.outer(pa, pb)[nz]))).sum())
    return min(max(mi / math.sqrt(ha * hb), 0.0), 1.0)


def representation_rank(z, tol_ratio: float = 1e-6) -> int:
    """Count singular values above tol_ratio times the largest."""
    values = _as_array(z)
    s = np.linalg.svd(values, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int((s > tol_ratio * s[0]).sum())


@dataclass
class CollapseReport:
    singular_values: np.ndarray
    gmm_entropies: dict[int, float]
    gmm_entropies_representation: dict[int, float]
    code_histogram: np.ndarray
    prediction_variance: float
    covariance_residual: float
    adjacency_block_residual: float
    detected_blocks: int
    representation_rank: int
    gmm_flags: dict[str, bool] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "singular_values": [float(v) for v in self.singular_values],
            "gmm_entropies": {str(k): float(v) for k, v in self.gmm_entropies.items()},
            "gmm_entropies_representation": {
                str(k): float(v) for k, v in self.gmm_entropies_representation.items()},
            "code_histogram": [int(v) for v in self.code_histogram],
            "prediction_variance": float(self.prediction_variance),
            "covariance_residual": float(self.covariance_residual),
            "adjacency_block_residual": float(self.adjacency_block_residual),
            "detected_blocks": int(self.detected_blocks),
            "representation_rank": int(self.representation_rank),
            "gmm_flags": dict(self.gmm_flags),
        }


def collapse_report(h: EmbeddingMatrix, p: ProbMatrix, z, dictionary: Dictionary,
                    component_grid: tuple[int, ...] = (10, 20, 50, 100, 200, 500, 1000),
                    mc_samples: int = 10000, seed: int = 0) -> CollapseReport:
    """Run every collapse detector on one evaluation batch.

    The mixture-entropy probe runs on both the embeddings and the backbone
    representations, over the component grid capped at the sample count.
    """
    h_vals = h.values
    p_vals = p.values
    z_vals = _as_array(z)
    n, c = p_vals.shape

    code_histogram = np.bincount(np.argmax(p_vals, axis=1), minlength=c)
    prediction_variance = float(p_vals.var(axis=0).mean())
    spectrum = singular_spectrum(h_vals)

    grid = sorted({k for k in component_grid if k <= n})
    entropies_h: dict[int, float] = {}
    entropies_z: dict[int, float] = {}
    flags: dict[str, bool] = {}
    for k in grid:
        res_h = gmm_entropy(h_vals, k, mc_samples, seed)
        res_z = gmm_entropy(z_vals, k, mc_samples, seed + 1)
        entropies_h[k] = res_h.entropy
        entropies_z[k] = res_z.entropy
        flags[f"embedding_k{k}_converged"] = res_h.converged
        flags[f"embedding_k{k}_variance_floored"] = res_h.variance_floored
        flags[f"representation_k{k}_converged"] = res_z.converged
        flags[f"representation_k{k}_variance_floored"] = res_z.variance_floored

    expected_block = max(1, n // c)
    adjacency_residual, detected = check_adjacency(h, expected_block,
                                                   assignments=np.argmax(p_vals, axis=1))
    return CollapseReport(
        singular_values=spectrum,
        gmm_entropies=entropies_h,
        gmm_entropies_representation=entropies_z,
        code_histogram=code_histogram,
        prediction_variance=prediction_variance,
        covariance_residual=check_covariance(h),
        adjacency_block_residual=adjacency_residual,
        detected_blocks=detected,
        representation_rank=representation_rank(z_vals),
        gmm_flags=flags,
    )
