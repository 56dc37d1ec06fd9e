"""Snapshot matrices, noise models, CSV ingestion, and noise-window estimation.

A recorded run is a RawTrajectory (uniformly sampled states over time).
From it we build the paired snapshot matrices X (columns 1..m) and Y
(columns 2..m+1), and estimate per-state measurement variances from a
window where the signal is steady.  All types are immutable after
construction and freely shareable across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyWindow,
    HeaderMismatch,
    NonUniformSampling,
    NotPositiveDefinite,
    ParseError,
    TooFewSnapshots,
    ZeroVariance,
)
from .numerics import cholesky_logdet

UNIFORMITY_RTOL = 1e-9
FLOAT_FORMAT = "%.17g"


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RawTrajectory:
    """Uniformly sampled recording: times (m+1,) and samples (n, m+1)."""

    times: np.ndarray
    samples: np.ndarray
    state_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        times = _readonly(self.times).ravel()
        samples = _readonly(np.atleast_2d(self.samples))
        if times.size != samples.shape[1]:
            raise DimensionMismatch(
                f"{times.size} times but {samples.shape[1]} sample columns"
            )
        if times.size < 2:
            raise TooFewSnapshots("a trajectory needs at least 2 samples")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(samples)):
            raise ParseError("trajectory contains non-finite values")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise NonUniformSampling("times must be strictly increasing")
        mean_step = (times[-1] - times[0]) / (times.size - 1)
        if np.abs(steps - mean_step).max() > UNIFORMITY_RTOL * abs(mean_step):
            raise NonUniformSampling(
                f"sampling not uniform within {UNIFORMITY_RTOL:.0e} relative"
            )
        names = list(self.state_names) or [f"x{i + 1}" for i in range(samples.shape[0])]
        if len(names) != samples.shape[0]:
            raise DimensionMismatch("state_names length does not match state count")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "state_names", names)

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / (self.times.size - 1))

    @property
    def state_count(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class SnapshotSet:
    """Paired data matrices X (n x m) and Y (n x m) with Y the one-step shift of X."""

    states: np.ndarray
    shifted: np.ndarray
    dt: float
    state_names: list[str]

    def __post_init__(self):
        X = _readonly(np.atleast_2d(self.states))
        Y = _readonly(np.atleast_2d(self.shifted))
        if X.shape != Y.shape:
            raise DimensionMismatch(f"X shape {X.shape} != Y shape {Y.shape}")
        n, m = X.shape
        if n < 1 or m < 2:
            raise TooFewSnapshots(f"need n >= 1 and m >= 2, got n={n}, m={m}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ParseError("snapshot matrices contain non-finite values")
        # Columns come from one recording, so the overlap must be exact.
        if not np.array_equal(X[:, 1:], Y[:, :-1]):
            raise DimensionMismatch("Y is not the one-step shift of X")
        if len(self.state_names) != n:
            raise DimensionMismatch("state_names length does not match state count")
        object.__setattr__(self, "states", X)
        object.__setattr__(self, "shifted", Y)

    @property
    def state_count(self) -> int:
        return self.states.shape[0]

    @property
    def snapshot_count(self) -> int:
        return self.states.shape[1]

    def trajectory_columns(self) -> np.ndarray:
        """Reconstruct the underlying (n, m+1) recording."""
        return np.hstack([self.states, self.shifted[:, -1:]])


@dataclass(frozen=True)
class NoiseModel:
    """Per-state measurement variances, optionally with a full SPD covariance.

    Variances are homoscedastic in time: one sigma^2 per state, applied to
    every snapshot of that state.
    """

    variances: np.ndarray
    full_covariance: np.ndarray | None = None

    def __post_init__(self):
        v = _readonly(self.variances).ravel()
        if v.size < 1 or np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ZeroVariance("variances must be strictly positive and finite")
        object.__setattr__(self, "variances", v)
        if self.full_covariance is not None:
            cov = _readonly(np.atleast_2d(self.full_covariance))
            if cov.shape != (v.size, v.size):
                raise DimensionMismatch(
                    f"covariance shape {cov.shape} does not match {v.size} states"
                )
            if np.abs(np.diag(cov) - v).max() > 1e-12 * max(1.0, v.max()):
                raise DimensionMismatch("covariance diagonal does not equal variances")
            cholesky_logdet(cov)  # raises NotPositiveDefinite if not SPD
            object.__setattr__(self, "full_covariance", cov)

    def covariance(self) -> np.ndarray:
        if self.full_covariance is not None:
            return self.full_covariance
        return np.diag(self.variances)

    @property
    def state_count(self) -> int:
        return self.variances.size


def build_snapshots(trajectory: RawTrajectory) -> SnapshotSet:
    """Split a recording into X = columns 1..m and Y = columns 2..m+1."""
    cols = trajectory.samples.shape[1]
    if cols < 3:
        raise TooFewSnapshots(f"need at least 3 samples to form snapshot pairs, got {cols}")
    return SnapshotSet(
        states=trajectory.samples[:, :-1],
        shifted=trajectory.samples[:, 1:],
        dt=trajectory.dt,
        state_names=list(trajectory.state_names),
    )


def estimate_noise(trajectory: RawTrajectory, window: tuple[float, float]) -> NoiseModel:
    """Per-state unbiased sample variance over the time window [t_start, t_end].

    The window should cover a stretch where the signal is steady so the
    sample variance reflects measurement noise rather than dynamics.
    """
    t0, t1 = float(window[0]), float(window[1])
    mask = (trajectory.times >= t0) & (trajectory.times <= t1)
    count = int(mask.sum())
    if count < 2:
        raise EmptyWindow(
            f"window [{t0}, {t1}] contains {count} sample(s); need at least 2"
        )
    seg = trajectory.samples[:, mask]
    variances = seg.var(axis=1, ddof=1)
    if np.any(variances == 0.0):
        bad = [trajectory.state_names[i] for i in np.flatnonzero(variances == 0.0)]
        raise ZeroVariance(f"state(s) {bad} are exactly constant over the window")
    return NoiseModel(variances=variances, full_covariance=np.diag(variances))


def decimate_trajectory(trajectory: RawTrajectory, stride: int) -> RawTrajectory:
    """Keep every stride-th sample; the sampling interval scales by stride."""
    if stride < 1:
        raise DimensionMismatch(f"stride must be >= 1, got {stride}")
    return RawTrajectory(
        times=trajectory.times[::stride],
        samples=trajectory.samples[:, ::stride],
        state_names=list(trajectory.state_names),
    )


def load_csv(path) -> RawTrajectory:
    """Read a trajectory from CSV with header ``time,<name1>,...,<nameN>``."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatch("empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "time":
            raise HeaderMismatch(
                f"expected header 'time,<name1>,...', got {','.join(header)!r}"
            )
        names = header[1:]
        times: list[float] = []
        rows: list[list[float]] = []
        for row_idx, row in enumerate(reader, start=2):
            if len(row) == 0 or (len(row) == 1 and row[0].strip() == ""):
                continue  # tolerate a trailing blank line
            if len(row) != len(header):
                raise ParseError(
                    f"row {row_idx}: expected {len(header)} fields, got {len(row)}",
                    row=row_idx,
                )
            parsed = []
            for col_idx, cell in enumerate(row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"row {row_idx}, column {col_idx + 1}: not a number: {cell!r}",
                        row=row_idx,
                        column=col_idx + 1,
                    ) from None
            times.append(parsed[0])
            rows.append(parsed[1:])
    if len(rows) < 2:
        raise TooFewSnapshots(f"need at least 2 data rows, got {len(rows)}")
    samples = np.array(rows, dtype=float).T
    return RawTrajectory(times=np.array(times), samples=samples, state_names=names)


def save_csv(trajectory: RawTrajectory, path) -> None:
    """Write a trajectory as CSV; 17 significant digits round-trip bit-exactly."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("time," + ",".join(trajectory.state_names) + "\n")
        for j in range(trajectory.times.size):
            cells = [FLOAT_FORMAT % trajectory.times[j]]
            cells.extend(FLOAT_FORMAT % v for v in trajectory.samples[:, j])
            handle.write(",".join(cells) + "\n")
