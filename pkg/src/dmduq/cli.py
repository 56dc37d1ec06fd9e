"""Command-line pipeline: simulate, fit noise, estimate moments, verify, report.

Commands are single deterministic processes: identical inputs, config, and
seeds produce byte-identical outputs.  Structured results are JSON with
floats printed at a fixed number of significant digits (17 by default,
lossless for doubles); trajectories and density curves are CSV.  Errors are
emitted as machine-readable JSON on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .data_model import NoiseModel, build_snapshots, estimate_noise, load_csv, save_csv
from .errors import ConfigError, DmduqError, ShapeMismatch
from .metrics import compare, decimate, min_max_normalize
from .monte_carlo import run_mc, sample_operator_instances
from .operator_moments import (
    OperatorMoments,
    dmd_point_estimate,
    estimate_operator_moments,
)
from .pinv_moments import pinv_moments
from .spectral import eigen_moments, eigen_samples, kde2d
from .systems import (
    SpringMassParams,
    random_network_params,
    simulate_oscillator_network,
    simulate_spring_mass,
)

SCHEMA_VERSION = "1.0"


# ---------------------------------------------------------------------------
# Deterministic JSON with fixed-precision floats


def _format_float(value: float, precision: int) -> str:
    if not np.isfinite(value):
        raise ConfigError("cannot serialize non-finite value to JSON")
    return "%.*g" % (precision, value)


def dumps_json(obj, precision: int = 17) -> str:
    """Recursive JSON emitter with deterministic key order and float format."""

    def emit(node) -> str:
        if node is None:
            return "null"
        if isinstance(node, bool):
            return "true" if node else "false"
        if isinstance(node, (int, np.integer)):
            return str(int(node))
        if isinstance(node, (float, np.floating)):
            return _format_float(float(node), precision)
        if isinstance(node, str):
            return json.dumps(node)
        if isinstance(node, (list, tuple)):
            return "[" + ",".join(emit(v) for v in node) + "]"
        if isinstance(node, np.ndarray):
            return emit(node.tolist())
        if isinstance(node, dict):
            parts = []
            for key, value in node.items():
                if not isinstance(key, str):
                    raise ConfigError("JSON keys must be strings")
                parts.append(json.dumps(key) + ":" + emit(value))
            return "{" + ",".join(parts) + "}"
        raise ConfigError(f"cannot serialize {type(node).__name__} to JSON")

    return emit(obj) + "\n"


def _write_json(path, obj, precision: int) -> None:
    Path(path).write_text(dumps_json(obj, precision), encoding="utf-8")


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def _check_schema(data: dict, path) -> None:
    version = str(data.get("schema_version", ""))
    major = version.split(".", 1)[0]
    if major != SCHEMA_VERSION.split(".", 1)[0]:
        raise ShapeMismatch(
            f"{path}: unsupported schema version {version!r} (supported major: 1)"
        )


# ---------------------------------------------------------------------------
# Shared option handling


def _parse_pair(text: str, flag: str) -> tuple[float, float]:
    parts = text.split(":" if ":" in text else ",")
    if len(parts) != 2:
        raise ConfigError(f"{flag} expects two numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


def _load_pipeline_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return PipelineConfig()


def _noise_from_args(args, trajectory) -> NoiseModel:
    if getattr(args, "noise_variances", None):
        variances = np.array([float(v) for v in args.noise_variances.split(",")])
        if variances.size != trajectory.state_count:
            raise ConfigError(
                f"got {variances.size} variances for {trajectory.state_count} states"
            )
        return NoiseModel(variances=variances, full_covariance=np.diag(variances))
    if getattr(args, "noise_window", None):
        window = _parse_pair(args.noise_window, "--noise-window")
        return estimate_noise(trajectory, window)
    raise ConfigError("provide either --noise-window a:b or --noise-variances v1,...")


def _moments_payload(snapshots, noise, cfg: PipelineConfig) -> dict:
    pinv = pinv_moments(snapshots, noise, quad=cfg.quadrature, ridge=cfg.ridge)
    moments = estimate_operator_moments(
        snapshots,
        noise,
        quad=cfg.quadrature,
        ridge=cfg.ridge,
        mode=cfg.variance_mode,
        pinv=pinv,
    )
    point = dmd_point_estimate(snapshots, ridge=cfg.ridge)
    return {
        "schema_version": SCHEMA_VERSION,
        "pinv_first": pinv.first,
        "pinv_second_raw": pinv.second_raw,
        "operator_first": moments.first,
        "operator_second_central": moments.second_central,
        "operator_point": point.operator,
        "variance_mode": moments.variance_mode,
        "metadata": {
            "config": cfg.to_dict(),
            "ridge": cfg.ridge,
            "variance_mode": cfg.variance_mode,
            "version": __version__,
            "state_names": snapshots.state_names,
            "dt": snapshots.dt,
            "noise_variances": noise.variances,
        },
    }


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    if args.system == "spring-mass":
        x0 = _parse_pair(args.x0, "--x0") if args.x0 else (0.03, 0.01)
        params = SpringMassParams(
            mass=args.mass,
            stiffness=args.stiffness,
            gravity=args.gravity,
            x0=x0,
            duration=args.duration,
            dt=args.dt,
        )
        trajectory = simulate_spring_mass(params)
    else:
        params = random_network_params(
            node_count=args.nodes,
            seed=args.seed,
            duration=args.duration,
            dt=args.dt,
            coupling_strength=args.coupling_strength,
            damping=args.damping,
        )
        trajectory = simulate_oscillator_network(params)
    save_csv(trajectory, args.out)
    rows, cols = trajectory.samples.shape
    print(f"wrote {args.out}: {cols} samples of {rows} state(s) at dt={trajectory.dt:g}")
    return 0


def cmd_moments(args) -> int:
    cfg = _load_pipeline_config(args)
    trajectory = load_csv(args.data)
    snapshots = build_snapshots(trajectory)
    noise = _noise_from_args(args, trajectory)
    payload = _moments_payload(snapshots, noise, cfg)
    _write_json(args.out, payload, cfg.output_precision)
    print(f"wrote {args.out}")
    return 0


def cmd_mc(args) -> int:
    cfg = _load_pipeline_config(args)
    trajectory = load_csv(args.data)
    snapshots = build_snapshots(trajectory)
    noise = _noise_from_args(args, trajectory)
    summary = run_mc(snapshots, noise, config=cfg.mc, ridge=cfg.ridge)
    eigen = None
    if summary.eigen_samples is not None:
        eigen = {
            "re": summary.eigen_samples.real,
            "im": summary.eigen_samples.imag,
        }
    payload = {
        "schema_version": SCHEMA_VERSION,
        "pinv_mean": summary.pinv_mean,
        "pinv_second_raw": summary.pinv_second_raw,
        "operator_mean": summary.operator_mean,
        "operator_variance": summary.operator_variance,
        "standard_errors": {
            "pinv_mean": summary.standard_errors.pinv_mean,
            "pinv_second_raw": summary.standard_errors.pinv_second_raw,
            "operator_mean": summary.standard_errors.operator_mean,
            "operator_variance": summary.standard_errors.operator_variance,
        },
        "eigen_samples": eigen,
        "trials": summary.trials,
        "failed_trials": summary.failed_trials,
        "sampling_mode": summary.sampling_mode,
        "master_seed": summary.master_seed,
        "metadata": {"config": cfg.to_dict(), "version": __version__},
    }
    _write_json(args.out, payload, cfg.output_precision)
    print(f"wrote {args.out}")
    return 0


def _report_payload(moments: dict, mc: dict, stride: int) -> dict:
    pairs = [
        ("pinv_first", "pinv_mean"),
        ("pinv_second_raw", "pinv_second_raw"),
        ("operator_first", "operator_mean"),
        ("operator_second_central", "operator_variance"),
    ]
    comparisons = []
    for est_key, mc_key in pairs:
        est = np.array(moments[est_key], dtype=float)
        ref = np.array(mc[mc_key], dtype=float)
        report = compare(est, ref)
        comparisons.append(
            {
                "matrix": est_key,
                "rmse": report.rmse,
                "mae": report.mae,
                "frobenius": report.frobenius,
                "cosine": report.cosine,
                "shape": list(report.shape),
            }
        )
    est_var = np.array(moments["operator_second_central"], dtype=float)
    mc_var = np.array(mc["operator_variance"], dtype=float)
    if est_var.shape != mc_var.shape:
        raise ShapeMismatch("operator variance shapes differ between files")
    delta = np.abs(mc_var - est_var)

    def curve(matrix: np.ndarray) -> dict:
        flat = decimate(matrix.ravel(), stride)
        try:
            return {"normalized": True, "values": min_max_normalize(flat)}
        except DmduqError:
            return {"normalized": False, "values": flat}

    return {
        "schema_version": SCHEMA_VERSION,
        "comparisons": comparisons,
        "delta_sigma2": delta,
        "curves": {
            "stride": stride,
            "operator_second_estimated": curve(est_var),
            "operator_second_mc": curve(mc_var),
            "operator_first_estimated": curve(np.array(moments["operator_first"], dtype=float)),
            "operator_first_mc": curve(np.array(mc["operator_mean"], dtype=float)),
        },
    }


def cmd_compare(args) -> int:
    cfg = _load_pipeline_config(args)
    moments = _load_json(args.moments)
    mc = _load_json(args.mc)
    _check_schema(moments, args.moments)
    _check_schema(mc, args.mc)
    payload = _report_payload(moments, mc, cfg.decimate_stride)
    _write_json(args.out, payload, cfg.output_precision)
    print(f"wrote {args.out}")
    return 0


def cmd_spectrum(args) -> int:
    cfg = _load_pipeline_config(args)
    moments_data = _load_json(args.moments)
    _check_schema(moments_data, args.moments)
    moments = OperatorMoments(
        first=np.array(moments_data["operator_first"], dtype=float),
        second_central=np.array(moments_data["operator_second_central"], dtype=float),
        variance_mode=moments_data["variance_mode"],
    )
    instances = sample_operator_instances(
        moments, count=args.samples, seed=args.seed, clamp_negative=args.clamp_negative
    )
    samples = eigen_samples(instances)
    lam1 = samples.representative_lambda1
    bandwidth = None if cfg.kde.bandwidth is None else (cfg.kde.bandwidth, cfg.kde.bandwidth)
    density = kde2d(
        lam1.real, lam1.imag, bandwidths=bandwidth, grid_points=cfg.kde.grid_points
    )
    fmt = "%.{}g".format(cfg.output_precision)
    out_path = Path(args.out)
    with open(out_path, "w", encoding="utf-8", newline="") as handle:
        handle.write("grid_re,grid_im,density\n")
        for a, re_val in enumerate(density.grid_re):
            for b, im_val in enumerate(density.grid_im):
                handle.write(
                    ",".join(fmt % v for v in (re_val, im_val, density.density[a, b])) + "\n"
                )
    table = eigen_moments(samples)
    bands_path = out_path.with_name(out_path.stem + "_bands" + out_path.suffix)
    with open(bands_path, "w", encoding="utf-8", newline="") as handle:
        handle.write(
            "index,mean_re,mean_im,var_re,var_im,"
            "band_re_lo,band_re_hi,band_im_lo,band_im_hi\n"
        )
        for idx in range(table.mean.size):
            sd_re = np.sqrt(table.variance_re[idx])
            sd_im = np.sqrt(table.variance_im[idx])
            row = (
                table.mean[idx].real,
                table.mean[idx].imag,
                table.variance_re[idx],
                table.variance_im[idx],
                table.mean[idx].real - 2.0 * sd_re,
                table.mean[idx].real + 2.0 * sd_re,
                table.mean[idx].imag - 2.0 * sd_im,
                table.mean[idx].imag + 2.0 * sd_im,
            )
            handle.write(str(idx) + "," + ",".join(fmt % v for v in row) + "\n")
    print(f"wrote {args.out} and {bands_path}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_pipeline_config(args)
    trajectory = load_csv(args.data)
    snapshots = build_snapshots(trajectory)
    noise = _noise_from_args(args, trajectory)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    moments_payload = _moments_payload(snapshots, noise, cfg)
    _write_json(out_dir / "moments.json", moments_payload, cfg.output_precision)

    summary = run_mc(snapshots, noise, config=cfg.mc, ridge=cfg.ridge)
    mc_payload = {
        "schema_version": SCHEMA_VERSION,
        "pinv_mean": summary.pinv_mean,
        "pinv_second_raw": summary.pinv_second_raw,
        "operator_mean": summary.operator_mean,
        "operator_variance": summary.operator_variance,
        "standard_errors": {
            "pinv_mean": summary.standard_errors.pinv_mean,
            "pinv_second_raw": summary.standard_errors.pinv_second_raw,
            "operator_mean": summary.standard_errors.operator_mean,
            "operator_variance": summary.standard_errors.operator_variance,
        },
        "eigen_samples": None
        if summary.eigen_samples is None
        else {"re": summary.eigen_samples.real, "im": summary.eigen_samples.imag},
        "trials": summary.trials,
        "failed_trials": summary.failed_trials,
        "sampling_mode": summary.sampling_mode,
        "master_seed": summary.master_seed,
        "metadata": {"config": cfg.to_dict(), "version": __version__},
    }
    _write_json(out_dir / "mc.json", mc_payload, cfg.output_precision)

    report = _report_payload(moments_payload, mc_payload, cfg.decimate_stride)
    _write_json(out_dir / "report.json", report, cfg.output_precision)
    print(f"wrote {out_dir / 'moments.json'}, {out_dir / 'mc.json'}, {out_dir / 'report.json'}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmduq",
        description="Propagate Gaussian measurement uncertainty through dynamic mode decomposition.",
    )
    parser.add_argument("--version", action="version", version=f"dmduq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a trajectory CSV")
    sim_sub = sim.add_subparsers(dest="system", required=True)
    spring = sim_sub.add_parser("spring-mass", help="hanging spring-mass system")
    spring.add_argument("--mass", type=float, default=5.0)
    spring.add_argument("--stiffness", type=float, default=20.0)
    spring.add_argument("--gravity", type=float, default=9.81)
    spring.add_argument("--x0", type=str, default=None, help="initial 'displacement,velocity'")
    spring.add_argument("--duration", type=float, default=40.0)
    spring.add_argument("--dt", type=float, default=0.01)
    spring.add_argument("--out", required=True)
    spring.set_defaults(func=cmd_simulate)
    network = sim_sub.add_parser("network", help="coupled oscillator network")
    network.add_argument("--nodes", type=int, default=17)
    network.add_argument("--seed", type=int, default=0)
    network.add_argument("--duration", type=float, default=120.0)
    network.add_argument("--dt", type=float, default=0.01)
    network.add_argument("--coupling-strength", type=float, default=1.0)
    network.add_argument("--damping", type=float, default=0.0)
    network.add_argument("--out", required=True)
    network.set_defaults(func=cmd_simulate)

    def add_noise_options(p):
        p.add_argument("--noise-window", type=str, default=None, help="'t_start:t_end' seconds")
        p.add_argument("--noise-variances", type=str, default=None, help="'v1,v2,...' per state")

    moments = sub.add_parser("moments", help="estimate moment tables from a CSV")
    moments.add_argument("data")
    moments.add_argument("--config", default=None)
    add_noise_options(moments)
    moments.add_argument("--out", required=True)
    moments.set_defaults(func=cmd_moments)

    mc = sub.add_parser("mc", help="Monte Carlo verification summaries")
    mc.add_argument("data")
    mc.add_argument("--config", default=None)
    add_noise_options(mc)
    mc.add_argument("--out", required=True)
    mc.set_defaults(func=cmd_mc)

    comp = sub.add_parser("compare", help="compare moment tables against MC summaries")
    comp.add_argument("moments")
    comp.add_argument("mc")
    comp.add_argument("--config", default=None)
    comp.add_argument("--out", required=True)
    comp.set_defaults(func=cmd_compare)

    spec = sub.add_parser("spectrum", help="eigenvalue density of sampled operators")
    spec.add_argument("moments")
    spec.add_argument("--samples", type=int, default=1000)
    spec.add_argument("--seed", type=int, default=0)
    spec.add_argument("--clamp-negative", action="store_true")
    spec.add_argument("--config", default=None)
    spec.add_argument("--out", required=True)
    spec.set_defaults(func=cmd_spectrum)

    pipe = sub.add_parser("pipeline", help="moments, mc, and compare in one run")
    pipe.add_argument("data")
    pipe.add_argument("--config", default=None)
    add_noise_options(pipe)
    pipe.add_argument("--out-dir", required=True)
    pipe.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DmduqError as exc:
        sys.stderr.write(dumps_json({"error": exc.code, "message": str(exc)}))
        return 1
    except OSError as exc:
        sys.stderr.write(dumps_json({"error": "io_error", "message": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
