"""Matrix-comparison metrics and the normalizations used by report curves.

Cosine similarity uses the standard normalized inner product of vectorized
matrices, so it always lies in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstantInput, ShapeMismatch, ZeroNormCosine


@dataclass(frozen=True)
class ComparisonReport:
    rmse: float
    mae: float
    frobenius: float
    cosine: float
    shape: tuple[int, int]


def compare(estimated: np.ndarray, reference: np.ndarray) -> ComparisonReport:
    """RMSE, MAE, Frobenius norm of the difference, and cosine similarity."""
    est = np.atleast_2d(np.asarray(estimated, dtype=float))
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    if est.shape != ref.shape:
        raise ShapeMismatch(f"shapes differ: {est.shape} vs {ref.shape}")
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(ref))):
        raise ShapeMismatch("inputs must be finite")
    diff = est - ref
    frob = float(np.linalg.norm(diff))
    rmse = float(np.sqrt(np.mean(diff**2)))
    mae = float(np.mean(np.abs(diff)))
    norm_est = float(np.linalg.norm(est))
    norm_ref = float(np.linalg.norm(ref))
    if norm_est == 0.0 or norm_ref == 0.0:
        raise ZeroNormCosine("cosine undefined for a zero matrix")
    cosine = float(np.vdot(est.ravel(), ref.ravel()) / (norm_est * norm_ref))
    return ComparisonReport(rmse=rmse, mae=mae, frobenius=frob, cosine=cosine, shape=est.shape)


def min_max_normalize(values: np.ndarray) -> np.ndarray:
    """(v - min) / (max - min); rejects constant input."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        raise ConstantInput("min-max scaling undefined for constant input")
    return (v - lo) / (hi - lo)


def decimate(values: np.ndarray, stride: int) -> np.ndarray:
    """Elements at indices 0, stride, 2*stride, ..."""
    if stride < 1:
        raise ConstantInput(f"stride must be >= 1, got {stride}")
    return np.asarray(values)[::stride]
