"""Exact element-wise first and second moments of the snapshot pseudoinverse.

Each element of the right pseudoinverse ``X^+ = X.T @ inv(X @ X.T)`` is the
ratio ``s1 / s2`` of two quadratic-ish forms in one noisy snapshot column:
with ``V`` the Gram matrix of the remaining columns and ``R = inv(V)``,

    s1 = r.T @ x,      s2 = 1 + x.T @ R @ x,      x ~ N(mu, Sigma),

where ``r`` is the relevant column of ``R``.  The moments of ``s1 / s2``
reduce to semi-infinite integrals of a closed-form conditional moment
generating function; the first moment integrates

    c * |S|^(-1/2) * exp(-p2) * exp(b.T S^-1 b / 4) * (r.T S^-1 b / 2)

over p2 in (0, inf), with ``S = Sigma^-1 / 2 + p2 R``, ``b = Sigma^-1 mu``
and ``c = exp(-mu.T Sigma^-1 mu / 2) / (2^(n/2) |Sigma|^(1/2))``; the second
moment carries an extra ``p2`` factor and the kernel
``r.T S^-1 r / 2 + (r.T S^-1 b)^2 / 4``.

Numerical core: the factors of the integrand overflow/underflow separately
(``c`` alone underflows for small variances), but combine exactly.  With
``Sigma = L L.T`` and ``G = L.T R L`` (SPD), everything contracts through
``K(p2) = I + 2 p2 G``:

    log(c) - log|S|/2 + b.T S^-1 b / 4  ==  -log|K|/2 - p2 * a.T K^-1 bt
    r.T S^-1 b / 2  ==  g.T K^-1 a          (sign-carrying factor)
    r.T S^-1 r / 2  ==  g.T K^-1 g          (strictly positive)

with ``a = L^-1 mu``, ``bt = L.T R mu``, ``g = L.T r``.  One symmetric
eigendecomposition of ``G`` per context turns every quadrature node into
O(n) work, cancellation-free for any noise scale.  The log of the whole
integrand is bounded above by zero, so nothing overflows.

Element computations for distinct (t, k) are independent pure functions;
``pinv_moments`` writes results to pre-assigned slots, so output is
bit-identical regardless of scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg

from .data_model import NoiseModel, SnapshotSet
from .errors import (
    ConfigError,
    DimensionMismatch,
    DmduqError,
    MomentComputationError,
    NotPositiveDefinite,
    QuadratureNotConverged,
    SingularV,
)
from .numerics import SpdFactor, cholesky_logdet, gauss_laguerre_nodes, signed_log_sum

JENSEN_SLACK = 1e-12

GAUSS_LAGUERRE = "gauss_laguerre"
ADAPTIVE_TRUNCATED = "adaptive_truncated"


@dataclass(frozen=True)
class QuadratureConfig:
    """Discretization of the semi-infinite moment integrals.

    ``gauss_laguerre`` absorbs the exp(-p2) weight into the rule;
    ``adaptive_truncated`` integrates the full integrand on [0, p2_max].
    With ``cross_check`` both are evaluated and a disagreement beyond
    ``100 * rel_tol`` relative raises instead of silently returning.
    """

    method: str = GAUSS_LAGUERRE
    node_count: int = 64
    p2_max: float = 400.0
    rel_tol: float = 1e-8
    cross_check: bool = False

    def __post_init__(self):
        if self.method not in (GAUSS_LAGUERRE, ADAPTIVE_TRUNCATED):
            raise ConfigError(f"unknown quadrature method {self.method!r}")
        if not 1 <= self.node_count <= 256:
            raise ConfigError(f"node_count must be in [1, 256], got {self.node_count}")
        if not 0 < self.rel_tol <= 1e-2:
            raise ConfigError(f"rel_tol must be in (0, 1e-2], got {self.rel_tol}")
        if self.p2_max <= 0:
            raise ConfigError(f"p2_max must be positive, got {self.p2_max}")


@dataclass(frozen=True)
class MgfContext:
    """Per-element quadrature context for one pseudoinverse element (t, k).

    Carries the raw ingredients (R, r, b, mu, the Cholesky factor of Sigma,
    log_c) plus the eigendecomposition of the noise-whitened information
    matrix G = L.T R L that makes the integrand evaluation stable:
    ``eig_values`` are the eigenvalues of G and ``proj_*`` are the
    eigenbasis projections of L^-1 mu, L.T R mu, and L.T r.
    """

    R: np.ndarray
    r: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    sigma_factor: SpdFactor
    log_c: float
    eig_values: np.ndarray
    proj_mu: np.ndarray
    proj_rmu: np.ndarray
    proj_r: np.ndarray

    def __post_init__(self):
        n = self.mu.size
        L = self.sigma_factor.lower_triangular_factor
        if self.R.shape != (n, n) or self.r.shape != (n,) or self.b.shape != (n,):
            raise DimensionMismatch("inconsistent context dimensions")
        recon = L @ (L.T @ self.b)
        scale = max(np.abs(self.mu).max(), 1.0)
        if np.abs(recon - self.mu).max() > 1e-12 * scale:
            raise DimensionMismatch("b is not Sigma^-1 @ mu")
        if not np.isfinite(self.log_c):
            raise DimensionMismatch("log_c must be finite")

    @property
    def dimension(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class PinvMoments:
    """Element-wise moment tables for the pseudoinverse: first and raw second."""

    first: np.ndarray
    second_raw: np.ndarray

    def __post_init__(self):
        first = np.asarray(self.first, dtype=float)
        second = np.asarray(self.second_raw, dtype=float)
        if first.shape != second.shape:
            raise DimensionMismatch("moment tables must share a shape")
        gap = second - first**2
        if gap.min() < -JENSEN_SLACK:
            t, k = np.unravel_index(int(gap.argmin()), gap.shape)
            raise QuadratureNotConverged(
                f"second moment below squared first at (t={t}, k={k}): gap {gap.min():.3e}"
            )
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second_raw", second)


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("DMDUQ_THREADS", "1")))
    except ValueError:
        return 1


def _noise_factor(noise: NoiseModel) -> SpdFactor:
    factor, _ = cholesky_logdet(noise.covariance())
    return factor


@dataclass(frozen=True)
class _ColumnWorkspace:
    """Everything that depends on the column index t but not on k."""

    R: np.ndarray
    mu: np.ndarray
    sigma_factor: SpdFactor
    log_c: float
    eig_values: np.ndarray
    proj_mu: np.ndarray
    proj_rmu: np.ndarray
    proj_r_all: np.ndarray  # column k is the projection of L.T @ R[:, k]


def _workspace_from_parts(
    R: np.ndarray, mu: np.ndarray, sigma_factor: SpdFactor, sigma_logdet: float
) -> _ColumnWorkspace:
    n = mu.size
    L = sigma_factor.lower_triangular_factor
    alpha = scipy.linalg.solve_triangular(L, mu, lower=True)
    G = L.T @ R @ L
    lam, Q = np.linalg.eigh(0.5 * (G + G.T))
    lam = np.maximum(lam, 0.0)
    proj_mu = Q.T @ alpha
    proj_rmu = Q.T @ (L.T @ (R @ mu))
    proj_r_all = Q.T @ (L.T @ R)
    log_c = -0.5 * float(alpha @ alpha) - 0.5 * n * np.log(2.0) - 0.5 * sigma_logdet
    return _ColumnWorkspace(
        R=R,
        mu=mu,
        sigma_factor=sigma_factor,
        log_c=log_c,
        eig_values=lam,
        proj_mu=proj_mu,
        proj_rmu=proj_rmu,
        proj_r_all=proj_r_all,
    )


def _context_from_workspace(ws: _ColumnWorkspace, k: int) -> MgfContext:
    L = ws.sigma_factor.lower_triangular_factor
    b = scipy.linalg.solve_triangular(
        L.T, scipy.linalg.solve_triangular(L, ws.mu, lower=True), lower=False
    )
    return MgfContext(
        R=ws.R,
        r=ws.R[:, k].copy(),
        b=b,
        mu=ws.mu,
        sigma_factor=ws.sigma_factor,
        log_c=ws.log_c,
        eig_values=ws.eig_values,
        proj_mu=ws.proj_mu,
        proj_rmu=ws.proj_rmu,
        proj_r=ws.proj_r_all[:, k].copy(),
    )


def _column_gram(
    states: np.ndarray, t: int, ridge: float, gram: np.ndarray | None = None
) -> np.ndarray:
    x_t = states[:, t]
    if gram is None:
        gram = states @ states.T
    V = gram - np.outer(x_t, x_t)
    if ridge:
        V = V + ridge * np.eye(states.shape[0])
    return 0.5 * (V + V.T)


def build_context(
    snapshots: SnapshotSet,
    noise: NoiseModel,
    t: int,
    k: int,
    ridge: float = 0.0,
) -> MgfContext:
    """Assemble the quadrature context for pseudoinverse element (t, k).

    The Gram complement V accumulates the recorded snapshot columns other
    than t (plus ``ridge * I`` when requested); R is its inverse, obtained
    through an SPD factorization.  Indices are 0-based.

    Raises SingularV when V cannot be factored at ridge 0, which happens
    whenever m - 1 < n or the remaining columns are collinear.
    """
    X = snapshots.states
    n, m = X.shape
    if not 0 <= t < m:
        raise DimensionMismatch(f"column index t={t} outside [0, {m})")
    if not 0 <= k < n:
        raise DimensionMismatch(f"state index k={k} outside [0, {n})")
    if noise.state_count != n:
        raise DimensionMismatch("noise model does not match state count")
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    V = _column_gram(X, t, ridge)
    try:
        factor, _ = cholesky_logdet(V)
    except NotPositiveDefinite as exc:
        raise SingularV(
            f"Gram complement singular at column t={t} with ridge={ridge} "
            f"(m-1 < n or collinear snapshots)"
        ) from exc
    L = factor.lower_triangular_factor
    inv_L = scipy.linalg.solve_triangular(L, np.eye(n), lower=True)
    R = inv_L.T @ inv_L
    R = 0.5 * (R + R.T)
    sigma_factor, sigma_logdet = cholesky_logdet(noise.covariance())
    ws = _workspace_from_parts(R, X[:, t].copy(), sigma_factor, sigma_logdet)
    return _context_from_workspace(ws, k)


def context_from_parts(
    R: np.ndarray, mu: np.ndarray, noise: NoiseModel, k: int
) -> MgfContext:
    """Build a context directly from an SPD matrix R and a mean vector.

    Useful for scalar toys and randomized identity checks where V is not
    accumulated from snapshots.
    """
    R = 0.5 * (np.asarray(R, dtype=float) + np.asarray(R, dtype=float).T)
    mu = np.asarray(mu, dtype=float).ravel()
    sigma_factor, sigma_logdet = cholesky_logdet(noise.covariance())
    ws = _workspace_from_parts(R, mu, sigma_factor, sigma_logdet)
    return _context_from_workspace(ws, k)


def deterministic_pinv_element(context: MgfContext) -> float:
    """The noise-free ratio s1 / s2; equals the plain pseudoinverse element."""
    s1 = float(context.r @ context.mu)
    s2 = 1.0 + float(context.mu @ (context.R @ context.mu))
    return s1 / s2


def _decay_rate(context: MgfContext) -> float:
    """Initial decay rate of the weighted integrand: 1 + tr(G) + mu.T R mu.

    The integrand falls like exp(-rate * p2) near the origin.  When the
    Gram complement is nearly singular the rate is enormous and all the
    integral's mass sits in a boundary layer no fixed rule can see; the
    quadratures therefore substitute p2 = u / rate, which flattens the
    layer to unit scale for any conditioning.
    """
    return 1.0 + float(np.sum(context.eig_values)) + float(
        np.sum(context.proj_mu * context.proj_rmu)
    )


def _kernel_pieces(context: MgfContext, p2: np.ndarray):
    """Stable evaluation of the integrand pieces at an array of p2 values.

    Returns ``(core_log, t_rb, t_rr)`` where ``exp(core_log)`` is the
    positive envelope (always <= 1), ``t_rb = r.T S^-1 b / 2`` carries the
    sign of the first-moment integrand, and ``t_rr = r.T S^-1 r / 2 > 0``.
    """
    lam = context.eig_values
    scaled = 2.0 * np.outer(p2, lam)
    if scaled.min() <= -1.0:
        raise NotPositiveDefinite("S = Sigma^-1/2 + p2 R is not positive definite")
    weight = 1.0 / (1.0 + scaled)
    logdet_k = np.log1p(scaled).sum(axis=1)
    qa, qb, qg = context.proj_mu, context.proj_rmu, context.proj_r
    core_log = -0.5 * logdet_k - p2 * (weight @ (qa * qb))
    t_rb = weight @ (qa * qg)
    t_rr = weight @ (qg * qg)
    return core_log, t_rb, t_rr


def mgf_closed_form(context: MgfContext, p1: float, p2: float) -> tuple[float, int]:
    """Closed-form conditional generating function value in log-sign form.

    Evaluates ``c2 * exp((b + p1 r).T S^-1 (b + p1 r) / 4)`` with
    ``c2 = exp(-mu.T Sigma^-1 mu / 2 - p2) / (2^(n/2) |S|^(1/2) |Sigma|^(1/2))``
    as ``(log_magnitude, sign)``.  The value itself is a positive scalar, so
    the sign is always +1; the log form is returned because the raw value
    underflows for small noise variances.
    """
    core_log, t_rb, t_rr = _kernel_pieces(context, np.array([float(p2)]))
    log_mag = float(core_log[0]) - float(p2) + p1 * float(t_rb[0]) + 0.5 * p1**2 * float(t_rr[0])
    return log_mag, 1


def moment_integrands(context: MgfContext, p2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full integrands (including the exp(-p2) weight) of both moment integrals.

    The first equals the p1-derivative of :func:`mgf_closed_form` at p1 = 0;
    the second equals p2 times its second p1-derivative at p1 = 0.
    """
    p2 = np.asarray(p2, dtype=float)
    core_log, t_rb, t_rr = _kernel_pieces(context, p2)
    envelope = np.exp(core_log - p2)
    return envelope * t_rb, p2 * envelope * (t_rr + t_rb**2)


def _first_gauss_laguerre(context: MgfContext, node_count: int) -> float:
    # Substituted integral: (1/rho) * sum w_j * g(u_j / rho) * exp(u_j - u_j / rho),
    # evaluated in log space (log w_j ~ -u_j, so the exponents stay bounded).
    rate = _decay_rate(context)
    nodes, weights = gauss_laguerre_nodes(node_count)
    p2 = nodes / rate
    core_log, t_rb, _ = _kernel_pieces(context, p2)
    with np.errstate(divide="ignore"):
        log_terms = (
            np.log(weights) + core_log + np.log(np.abs(t_rb)) + nodes - p2 - np.log(rate)
        )
    return signed_log_sum(log_terms, np.sign(t_rb))


def _second_gauss_laguerre(context: MgfContext, node_count: int) -> float:
    rate = _decay_rate(context)
    nodes, weights = gauss_laguerre_nodes(node_count)
    p2 = nodes / rate
    core_log, t_rb, t_rr = _kernel_pieces(context, p2)
    kernel = t_rr + t_rb**2
    with np.errstate(divide="ignore"):
        log_terms = (
            np.log(weights)
            + np.log(p2, out=np.full_like(p2, -np.inf), where=p2 > 0)
            + core_log
            + np.log(kernel, out=np.full_like(kernel, -np.inf), where=kernel > 0)
            + nodes
            - p2
            - np.log(rate)
        )
    return signed_log_sum(log_terms, np.ones_like(log_terms))


def _adaptive(context: MgfContext, quad: QuadratureConfig, order: int) -> tuple[float, float]:
    rate = _decay_rate(context)

    def f(u: float) -> float:
        p = u / rate
        core_log, t_rb, t_rr = _kernel_pieces(context, np.array([p]))
        envelope = float(np.exp(core_log[0] - p)) / rate
        if order == 1:
            return envelope * float(t_rb[0])
        return p * envelope * float(t_rr[0] + t_rb[0] ** 2)

    out = scipy.integrate.quad(
        f,
        0.0,
        quad.p2_max,
        epsabs=0.0,
        epsrel=max(min(quad.rel_tol * 1e-2, 1e-3), 1e-13),
        limit=200,
        full_output=1,
    )
    return float(out[0]), float(out[1])


def _moment_element(context: MgfContext, quad: QuadratureConfig, order: int) -> float:
    if quad.method == GAUSS_LAGUERRE or quad.cross_check:
        if order == 1:
            gl = _first_gauss_laguerre(context, quad.node_count)
        else:
            gl = _second_gauss_laguerre(context, quad.node_count)
    if quad.method == ADAPTIVE_TRUNCATED or quad.cross_check:
        ad, abserr = _adaptive(context, quad, order)
    if quad.cross_check:
        diff = abs(gl - ad)
        tol = 100.0 * quad.rel_tol * max(abs(gl), abs(ad)) + 10.0 * abserr
        if diff > tol:
            raise QuadratureNotConverged(
                f"Gauss-Laguerre {gl:.12e} vs adaptive {ad:.12e} disagree by {diff:.3e}"
            )
    return gl if quad.method == GAUSS_LAGUERRE else ad


def first_moment_element(context: MgfContext, quad: QuadratureConfig | None = None) -> float:
    """Mean of one pseudoinverse element under the context's noise model."""
    quad = quad or QuadratureConfig()
    return _moment_element(context, quad, order=1)


def second_moment_element(context: MgfContext, quad: QuadratureConfig | None = None) -> float:
    """Raw second moment E[(x+)^2] of one pseudoinverse element."""
    quad = quad or QuadratureConfig()
    return _moment_element(context, quad, order=2)


def pinv_moments(
    snapshots: SnapshotSet,
    noise: NoiseModel,
    quad: QuadratureConfig | None = None,
    ridge: float = 0.0,
    threads: int | None = None,
) -> PinvMoments:
    """Both moment tables for every element of the m x n pseudoinverse.

    Elements are computed independently and written to pre-assigned slots;
    the result is bit-identical for any thread count.  Per-element failures
    are aggregated with their (t, k) locations.
    """
    quad = quad or QuadratureConfig()
    X = snapshots.states
    n, m = X.shape
    if noise.state_count != n:
        raise DimensionMismatch("noise model does not match state count")
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    sigma_factor, sigma_logdet = cholesky_logdet(noise.covariance())
    gram = X @ X.T
    first = np.empty((m, n))
    second = np.empty((m, n))
    failures: list[list[tuple[int, int | None, DmduqError]]] = [[] for _ in range(m)]

    def run_column(t: int) -> None:
        try:
            V = _column_gram(X, t, ridge, gram=gram)
            try:
                factor, _ = cholesky_logdet(V)
            except NotPositiveDefinite as exc:
                raise SingularV(
                    f"Gram complement singular at column t={t} with ridge={ridge}"
                ) from exc
            L = factor.lower_triangular_factor
            inv_L = scipy.linalg.solve_triangular(L, np.eye(n), lower=True)
            R = inv_L.T @ inv_L
            ws = _workspace_from_parts(
                0.5 * (R + R.T), X[:, t].copy(), sigma_factor, sigma_logdet
            )
        except DmduqError as exc:
            failures[t].append((t, None, exc))
            return
        for k in range(n):
            try:
                ctx = _context_from_workspace(ws, k)
                first[t, k] = _moment_element(ctx, quad, order=1)
                second[t, k] = _moment_element(ctx, quad, order=2)
            except DmduqError as exc:
                failures[t].append((t, k, exc))

    thread_count = threads if threads is not None else _default_threads()
    if thread_count > 1:
        with ThreadPoolExecutor(max_workers=thread_count) as pool:
            list(pool.map(run_column, range(m)))
    else:
        for t in range(m):
            run_column(t)

    flat = [item for per_column in failures for item in per_column]
    if flat:
        raise MomentComputationError(flat)
    return PinvMoments(first=first, second_raw=second)
