"""Frozen bipolar code dictionaries and their orthogonality statistics.

Codes are columns of an f x c matrix with entries in {-1, +1}. Randomly
sampled dictionaries are quasi-orthogonal: off-diagonal column cosines
have mean 0 and variance 1/f. An exact Sylvester-Hadamard constructor is
provided for checks that assume W^T W = f I.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParameterError


class ConstructionError(ValueError):
    """Requested dictionary cannot be built from the given arguments."""


@dataclass(frozen=True)
class Dictionary:
    """Frozen f x c code matrix with entries in {-1, +1}.

    ``seed`` records the RNG seed used for sampling (None for constructed
    matrices); regeneration from the same seed is bit-exact.
    """

    f: int
    c: int
    codes: np.ndarray
    seed: int | None

    def column(self, j: int) -> np.ndarray:
        return self.codes[:, j]

    def spec_tuple(self) -> tuple[int, int, int | None]:
        """Compact (f, c, seed) artifact; codes regenerate from the seed."""
        return (self.f, self.c, self.seed)


@dataclass(frozen=True)
class OrthogonalityStats:
    mean_offdiag_cosine: float
    var_offdiag_cosine: float
    max_abs_offdiag_cosine: float
    theoretical_var: float  # 1/f


def sample_dictionary(f: int, c: int, seed: int) -> Dictionary:
    """Sample an f x c matrix of i.i.d. uniform {-1, +1} entries.

    Uses the seeded PCG64 generator so the same (f, c, seed) triple
    reproduces the codes bit-exactly across platforms.
    """
    if f < 1 or c < 1:
        raise ParameterError(f"sample_dictionary: need f >= 1 and c >= 1, got f={f}, c={c}")
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 2, size=(f, c)).astype(np.float64) * 2.0 - 1.0
    return Dictionary(f=f, c=c, codes=codes, seed=seed)


def cosine_stats(d: Dictionary) -> OrthogonalityStats:
    """Exact statistics of all c(c-1)/2 off-diagonal column cosines."""
    if d.c < 2:
        raise ParameterError(f"cosine_stats: need at least 2 codes, got c={d.c}")
    gram = d.codes.T @ d.codes / float(d.f)
    iu = np.triu_indices(d.c, k=1)
    offdiag = gram[iu]
    return OrthogonalityStats(
        mean_offdiag_cosine=float(offdiag.mean()),
        var_offdiag_cosine=float(offdiag.var()),
        max_abs_offdiag_cosine=float(np.abs(offdiag).max()),
        theoretical_var=1.0 / d.f,
    )


def exact_orthogonal_dictionary(f: int) -> Dictionary:
    """Square +-1 matrix with W^T W = f I via Sylvester-Hadamard doubling.

    Requires f to be a power of two. Used by verification oracles whose
    claims assume exact orthogonality; training always samples instead.
    """
    if f < 1 or (f & (f - 1)) != 0:
        raise ConstructionError(
            f"exact_orthogonal_dictionary: f must be a power of 2, got {f}")
    h = np.array([[1.0]])
    while h.shape[0] < f:
        h = np.block([[h, h], [h, -h]])
    return Dictionary(f=f, c=f, codes=h, seed=None)
