"""Dense symmetric linear-algebra kernels with log-domain safety.

These are the shared primitives for the moment computations: Cholesky
factorization with a log-determinant (so determinant factors can stay in
log space), SPD solves, eigenvalue extraction with a deterministic total
order, and Gauss-Laguerre rules for semi-infinite integrals weighted by
``exp(-p)``.  All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from .errors import (
    AsymmetricInput,
    ConvergenceFailure,
    CountOutOfRange,
    DimensionMismatch,
    NotPositiveDefinite,
)

SYMMETRY_RTOL = 1e-9


@dataclass(frozen=True)
class SpdFactor:
    """Lower-triangular Cholesky factor of a symmetric positive definite matrix."""

    dimension: int
    lower_triangular_factor: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.lower_triangular_factor, dtype=float)
        if L.shape != (self.dimension, self.dimension):
            raise DimensionMismatch(
                f"factor shape {L.shape} does not match dimension {self.dimension}"
            )
        object.__setattr__(self, "lower_triangular_factor", L)


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted by descending magnitude.

    Ties on magnitude are broken by descending imaginary part, then
    descending real part, which places the positive-imaginary member of
    each conjugate pair first.
    """

    eigenvalues: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "eigenvalues", np.asarray(self.eigenvalues, dtype=complex)
        )


def _symmetrize(matrix: np.ndarray, name: str) -> np.ndarray:
    """Average away floating-point asymmetry; reject genuinely asymmetric input."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} requires a square matrix, got shape {a.shape}")
    scale = np.abs(a).max()
    asym = np.abs(a - a.T).max()
    if scale > 0 and asym > SYMMETRY_RTOL * scale:
        raise AsymmetricInput(
            f"{name}: input asymmetry {asym:.3e} exceeds {SYMMETRY_RTOL:.0e} of scale {scale:.3e}"
        )
    return 0.5 * (a + a.T)


def cholesky_logdet(matrix: np.ndarray) -> tuple[SpdFactor, float]:
    """Factor a symmetric positive definite matrix and return its log-determinant.

    Returns ``(factor, logdet)`` with ``factor @ factor.T`` reconstructing the
    (symmetrized) input and ``logdet = 2 * sum(log(diag(factor)))``.  The
    log form is what callers need: raw determinants of the quadrature
    matrices underflow or overflow long before their logs do.

    Raises NotPositiveDefinite when any pivot is non-positive, which signals
    rank-deficient accumulation upstream.
    """
    a = _symmetrize(matrix, "cholesky_logdet")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"cholesky_logdet: {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return SpdFactor(dimension=a.shape[0], lower_triangular_factor=lower), logdet


def spd_solve(factor: SpdFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(L @ L.T) x = rhs`` for a Cholesky factor ``L``."""
    L = factor.lower_triangular_factor
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != factor.dimension:
        raise DimensionMismatch(
            f"rhs length {b.shape[0]} does not match factor dimension {factor.dimension}"
        )
    y = scipy.linalg.solve_triangular(L, b, lower=True)
    return scipy.linalg.solve_triangular(L.T, y, lower=False)


def sort_eigenvalues(values: np.ndarray) -> np.ndarray:
    """Deterministic total order: |z| desc, then Im desc, then Re desc."""
    v = np.asarray(values, dtype=complex)
    order = np.lexsort((-v.real, -v.imag, -np.abs(v)))
    return v[order]


def eigenvalues(matrix: np.ndarray) -> Spectrum:
    """Eigenvalues of a real square matrix as a sorted Spectrum."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"eigenvalues requires a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionMismatch("eigenvalues requires finite entries")
    try:
        vals = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        # The QR iteration cap lives inside LAPACK; failure to converge
        # within it surfaces here.
        raise ConvergenceFailure(f"eigenvalues: {exc}") from exc
    return Spectrum(eigenvalues=sort_eigenvalues(vals))


def sort_eigenvalue_rows(values: np.ndarray) -> np.ndarray:
    """Row-wise version of :func:`sort_eigenvalues` for stacked spectra (N, m)."""
    v = np.asarray(values, dtype=complex)
    n_rows, m = v.shape
    rows = np.repeat(np.arange(n_rows), m)
    flat = v.ravel()
    order = np.lexsort((-flat.real, -flat.imag, -np.abs(flat), rows))
    return flat[order].reshape(n_rows, m)


def gauss_laguerre_nodes(count: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for the rule ``integral f(p) exp(-p) dp ~ sum w_i f(p_i)``.

    Exact for polynomials up to degree ``2 * count - 1``.
    """
    if not isinstance(count, (int, np.integer)) or not 1 <= count <= 256:
        raise CountOutOfRange(f"node count must be in [1, 256], got {count!r}")
    nodes, weights = scipy.special.roots_laguerre(int(count))
    return nodes, weights


def signed_log_sum(log_magnitudes: np.ndarray, signs: np.ndarray) -> float:
    """Combine signed terms given in log-magnitude form into a plain float.

    Positive and negative contributions are reduced separately (each via a
    max-shifted exponential sum) and combined once, so a result much smaller
    than the individual terms is not lost to accumulation order.
    """
    lm = np.asarray(log_magnitudes, dtype=float)
    sg = np.asarray(signs, dtype=float)
    if lm.size == 0:
        return 0.0
    finite = lm > -np.inf
    if not np.any(finite):
        return 0.0
    shift = lm[finite].max()
    terms = np.zeros_like(lm)
    terms[finite] = np.exp(lm[finite] - shift)
    pos = float(terms[sg > 0].sum())
    neg = float(terms[sg < 0].sum())
    return float(np.exp(shift) * (pos - neg)) if shift > -np.inf else 0.0
