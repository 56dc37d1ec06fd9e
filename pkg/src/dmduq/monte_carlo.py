"""Monte Carlo oracle: resample noisy snapshots, rebuild the pseudoinverse
and operator per trial, and summarize sample moments.

Two sampling modes:

``independent``
    Samples the probability model under which the analytic moment tables
    are exact: the Gram complement of each column stays fixed at the
    recorded means (plug-in conditioning), each pseudoinverse element
    (t, k) gets its own fresh noisy realization of column t, and the
    shifted-snapshot entries are drawn independently of all of them.  This
    is the mode to verify the closed-form tables against.

``shared_trajectory``
    Physically consistent sampling: one noisy recording per trial, X and Y
    rebuilt by shifting (so they share m - 1 snapshots), and the true
    pseudoinverse of the realized X.  This probes the coupling the
    independence assumptions ignore.

Per-trial randomness comes from counter-based streams keyed by
(master_seed, trial index), so trials never share a stream and results are
bit-identical for any thread count: chunks are fixed functions of the
problem shape and partial sums reduce in chunk order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data_model import NoiseModel, SnapshotSet
from .errors import (
    ConfigError,
    DimensionMismatch,
    NegativeVarianceInput,
    NotPositiveDefinite,
    SingularV,
    TooManyFailedTrials,
)
from .numerics import cholesky_logdet, sort_eigenvalue_rows, spd_solve
from .operator_moments import OperatorMoments
from .pinv_moments import _column_gram, _default_threads

logger = logging.getLogger(__name__)

INDEPENDENT = "independent"
SHARED_TRAJECTORY = "shared_trajectory"
SAMPLING_MODES = (INDEPENDENT, SHARED_TRAJECTORY)

_MASK64 = (1 << 64) - 1
_FAILURE_FRACTION = 0.01


@dataclass(frozen=True)
class McConfig:
    trials: int = 1000
    master_seed: int = 0
    sampling_mode: str = INDEPENDENT
    compute_eigenvalues: bool = True

    def __post_init__(self):
        if self.trials < 2:
            raise ConfigError(f"trials must be >= 2, got {self.trials}")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling mode {self.sampling_mode!r}")
        if not 0 <= self.master_seed <= _MASK64:
            raise ConfigError("master_seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class McStandardErrors:
    pinv_mean: np.ndarray
    pinv_second_raw: np.ndarray
    operator_mean: np.ndarray
    operator_variance: np.ndarray


@dataclass(frozen=True)
class McSummary:
    """Sample-moment summaries over N trials.

    Means use 1/N, variances 1/(N-1); standard errors are sample_std/sqrt(N)
    for mean-type summaries and the fourth-moment asymptotic for the
    variance-type summary.
    """

    pinv_mean: np.ndarray
    pinv_second_raw: np.ndarray
    operator_mean: np.ndarray
    operator_variance: np.ndarray
    eigen_samples: np.ndarray | None
    standard_errors: McStandardErrors
    trials: int
    failed_trials: int
    sampling_mode: str
    master_seed: int

    def __post_init__(self):
        jensen = self.pinv_second_raw - self.pinv_mean**2
        if jensen.min() < -1e-12:
            raise DimensionMismatch("sample second moments below squared means")
        if self.operator_variance.min() < -1e-12:
            raise DimensionMismatch("negative sample variance")


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Counter-keyed stream for one trial; distinct trials never collide."""
    key = np.array([master_seed & _MASK64, trial & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _chunk_size(m: int, n: int) -> int:
    # Bounded working set (~4e6 scalars per chunk); a function of problem
    # shape only, so the reduction order never depends on the thread count.
    return max(1, min(4096, int(4_000_000 // max(1, m * n * n))))


def _chunks(n_trials: int, size: int) -> list[tuple[int, int]]:
    return [(start, min(start + size, n_trials)) for start in range(0, n_trials, size)]


class _MomentAccumulator:
    """Power sums of (value - shift) up to fourth order, per element."""

    def __init__(self, shift: np.ndarray):
        self.shift = shift
        self.sums = [np.zeros_like(shift) for _ in range(4)]

    def add_block(self, values: np.ndarray) -> None:
        d = values - self.shift
        d2 = d * d
        self.sums[0] += d.sum(axis=0)
        self.sums[1] += d2.sum(axis=0)
        self.sums[2] += (d2 * d).sum(axis=0)
        self.sums[3] += (d2 * d2).sum(axis=0)

    def merge(self, other: "_MomentAccumulator") -> None:
        for mine, theirs in zip(self.sums, other.sums):
            mine += theirs

    def statistics(self, count: int):
        c = self.shift
        s1, s2, s3, s4 = (s / count for s in self.sums)
        mean = c + s1
        dvar = (self.sums[1] - self.sums[0] ** 2 / count) / (count - 1)
        dvar = np.maximum(dvar, 0.0)
        second_raw = c**2 + 2.0 * c * s1 + s2
        fourth_raw = c**4 + 4.0 * c**3 * s1 + 6.0 * c**2 * s2 + 4.0 * c * s3 + s4
        se_mean = np.sqrt(dvar / count)
        se_second = np.sqrt(np.maximum(fourth_raw - second_raw**2, 0.0) / count)
        m4 = s4 - 4.0 * s1 * s3 + 6.0 * s1**2 * s2 - 3.0 * s1**4
        se_var = np.sqrt(np.maximum(m4 - dvar**2, 0.0) / count)
        return mean, second_raw, dvar, se_mean, se_second, se_var


def _independent_r_stack(X: np.ndarray, ridge: float) -> np.ndarray:
    n, m = X.shape
    gram = X @ X.T
    stack = np.empty((m, n, n))
    for t in range(m):
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
        stack[t] = 0.5 * (R + R.T)
    return stack


def run_mc(
    snapshots: SnapshotSet,
    noise: NoiseModel,
    config: McConfig | None = None,
    ridge: float = 0.0,
    threads: int | None = None,
) -> McSummary:
    """Sample N trials and summarize pseudoinverse and operator moments."""
    config = config or McConfig()
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    X, Y = snapshots.states, snapshots.shifted
    n, m = X.shape
    if noise.state_count != n:
        raise DimensionMismatch("noise model does not match state count")

    sigma_L = cholesky_logdet(noise.covariance())[0].lower_triangular_factor
    y_std = np.sqrt(noise.variances)

    gram = X @ X.T + (ridge * np.eye(n) if ridge else 0.0)
    try:
        gram_factor, _ = cholesky_logdet(gram)
    except NotPositiveDefinite as exc:
        raise SingularV("X X.T is rank deficient; supply ridge > 0") from exc
    pinv_point = spd_solve(gram_factor, X).T  # (m, n)
    operator_point = pinv_point @ Y

    if config.sampling_mode == INDEPENDENT:
        r_stack = _independent_r_stack(X, ridge)
        trajectory = None
    else:
        r_stack = None
        trajectory = snapshots.trajectory_columns()

    n_trials = config.trials
    chunk = _chunk_size(m, n)
    spans = _chunks(n_trials, chunk)

    def run_chunk(span: tuple[int, int]):
        start, stop = span
        count = stop - start
        pinv_acc = _MomentAccumulator(pinv_point)
        op_acc = _MomentAccumulator(operator_point)
        failed: list[int] = []
        if config.sampling_mode == INDEPENDENT:
            zx = np.empty((count, m, n, n))
            zy = np.empty((count, n, m))
            for i, trial in enumerate(range(start, stop)):
                rng = trial_rng(config.master_seed, trial)
                zx[i] = rng.standard_normal((m, n, n))
                zy[i] = rng.standard_normal((n, m))
            x_cols = X.T[None, :, None, :] + zx @ sigma_L.T  # (count, m, n, n)
            y_tilde = Y[None, :, :] + y_std[:, None] * zy
            rx = np.einsum("ctkd,tde->ctke", x_cols, r_stack)
            num = np.einsum("tdk,ctkd->ctk", r_stack, x_cols)
            den = 1.0 + np.einsum("ctke,ctke->ctk", rx, x_cols)
            pinv_tables = num / den  # (count, m, n)
            operators = pinv_tables @ y_tilde
        else:
            base = np.empty((count, n, m + 1))
            for i, trial in enumerate(range(start, stop)):
                rng = trial_rng(config.master_seed, trial)
                base[i] = rng.standard_normal((n, m + 1))
            noisy = trajectory[None, :, :] + np.einsum("de,cem->cdm", sigma_L, base)
            x_t = noisy[:, :, :m]
            y_t = noisy[:, :, 1:]
            grams = x_t @ x_t.transpose(0, 2, 1)
            if ridge:
                grams = grams + ridge * np.eye(n)
            pinv_tables = np.empty((count, m, n))
            ok = np.ones(count, dtype=bool)
            try:
                pinv_tables = np.linalg.solve(grams, x_t).transpose(0, 2, 1)
            except np.linalg.LinAlgError:
                for i in range(count):
                    try:
                        pinv_tables[i] = np.linalg.solve(grams[i], x_t[i]).T
                    except np.linalg.LinAlgError:
                        ok[i] = False
                        failed.append(start + i)
            if not ok.all():
                pinv_tables = pinv_tables[ok]
                y_t = y_t[ok]
            operators = pinv_tables @ y_t
        pinv_acc.add_block(pinv_tables)
        op_acc.add_block(operators)
        eig_rows = None
        if config.compute_eigenvalues:
            eig_rows = sort_eigenvalue_rows(np.linalg.eigvals(operators))
        return pinv_acc, op_acc, eig_rows, failed

    thread_count = threads if threads is not None else _default_threads()
    if thread_count > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=thread_count) as pool:
            results = list(pool.map(run_chunk, spans))
    else:
        results = [run_chunk(span) for span in spans]

    pinv_total = _MomentAccumulator(pinv_point)
    op_total = _MomentAccumulator(operator_point)
    eig_parts: list[np.ndarray] = []
    failed_indices: list[int] = []
    for pinv_acc, op_acc, eig_rows, failed in results:
        pinv_total.merge(pinv_acc)
        op_total.merge(op_acc)
        if eig_rows is not None:
            eig_parts.append(eig_rows)
        failed_indices.extend(failed)

    failed_count = len(failed_indices)
    if failed_count > _FAILURE_FRACTION * n_trials:
        raise TooManyFailedTrials(
            f"{failed_count} of {n_trials} trials failed (> {_FAILURE_FRACTION:.0%})"
        )
    if failed_count:
        logger.warning("%d of %d trials had singular Gram matrices", failed_count, n_trials)
    n_eff = n_trials - failed_count

    p_mean, p_second, _, p_se_mean, p_se_second, _ = pinv_total.statistics(n_eff)
    o_mean, _, o_var, o_se_mean, _, o_se_var = op_total.statistics(n_eff)
    eigen = np.vstack(eig_parts) if eig_parts else None

    return McSummary(
        pinv_mean=p_mean,
        pinv_second_raw=p_second,
        operator_mean=o_mean,
        operator_variance=o_var,
        eigen_samples=eigen,
        standard_errors=McStandardErrors(
            pinv_mean=p_se_mean,
            pinv_second_raw=p_se_second,
            operator_mean=o_se_mean,
            operator_variance=o_se_var,
        ),
        trials=n_trials,
        failed_trials=failed_count,
        sampling_mode=config.sampling_mode,
        master_seed=config.master_seed,
    )


def sample_operator_instances(
    moments: OperatorMoments,
    count: int,
    seed: int,
    clamp_negative: bool = False,
) -> np.ndarray:
    """Draw operator instances with independent Gaussian entries.

    Entry (i, j) of each instance is N(first[i][j], second_central[i][j]).
    Negative variances beyond -1e-12 raise unless clamping is enabled, in
    which case they are clamped to zero with a logged per-element count.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    var = moments.second_central
    negatives = int(np.count_nonzero(var < -1e-12))
    if negatives and not clamp_negative:
        raise NegativeVarianceInput(
            f"{negatives} element(s) have variance below -1e-12; "
            "enable clamping or use corrected mode"
        )
    if negatives:
        logger.warning("clamping %d negative variance element(s) to zero", negatives)
    std = np.sqrt(np.clip(var, 0.0, None))
    rng = trial_rng(seed, 0)
    draws = rng.standard_normal((count,) + var.shape)
    return moments.first[None, :, :] + std[None, :, :] * draws
