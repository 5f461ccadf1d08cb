"""Command-line entry point: simulate, identify, train, run, evaluate, plot."""
from __future__ import annotations

import argparse
import glob
import io
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .. import aerodynamics
from .._fsutil import atomic_write
from ..aerodynamics import AeroCoefficients, BodyKinematics
from ..eskf import AeroInversePredictor, ProcessNoise, TruthVelocityPredictor, run_filter
from ..exceptions import AeroIOError
from ..sensor_sim import NoiseConfig, simulate
from ..velocity_net import serialization
from ..velocity_net.estimator import NetVelocityPredictor, RotorNormalizer, VelocityRegressor
from ..velocity_net.windows import make_windows
from .config import load_config
from .io import Track, load_sequence, load_trajectory, save_sequence, save_trajectory
from .metrics import compute_metrics, format_csv, format_table

logger = logging.getLogger("aeroio")


def _noise_from_metadata(meta: dict) -> NoiseConfig | None:
    keys = {k[6:]: v for k, v in meta.items() if k.startswith("noise.")}
    return NoiseConfig.from_mapping(keys) if keys else None


# -- subcommands ------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.spec, args.coeffs, args.noise)
    spec, noise = cfg.trajectory, cfg.noise
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
        noise = replace(noise, seed=args.seed)
    log = simulate(spec, cfg.aero, noise, cfg.sim["mode"], cfg.sim["coriolis"])
    save_sequence(log, args.out)
    print(f"wrote {len(log)} frames to {args.out}")
    return 0


def cmd_identify(args) -> int:
    seq = load_sequence(args.input)
    if seq.truth is None:
        raise AeroIOError("identification needs ground-truth velocity columns")
    accel = seq.accel - (seq.bias_a if seq.bias_a is not None else 0.0)
    kin = BodyKinematics(seq.truth.body_velocity, seq.truth.omega_body, seq.omega_m_sq)
    fit = aerodynamics.fit_coefficients(accel, kin, with_coriolis=seq.coriolis)
    atomic_write(args.out, fit.coefficients.to_ini())
    rms = np.atleast_1d(fit.residual_rms)
    print("residual rms [m/s^2]: " + " ".join(f"{x:.6g}" for x in rms))
    print(f"condition number: {fit.condition_number:.6g}")
    for name, value in zip(AeroCoefficients.__dataclass_fields__, fit.coefficients.as_array()):
        print(f"{name:>9} = {value:.10g}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    paths = sorted(glob.glob(os.path.join(args.data, "*.csv")))
    if not paths:
        raise AeroIOError(f"no .csv sequences in {args.data}")
    win = cfg.window
    use_rotor = win.use_rotor and not args.no_rotor
    Xs, ys, omega_hover = [], [], None
    for path in paths:
        seq = load_sequence(path)
        coeffs = seq.coefficients or cfg.aero
        if omega_hover is None:
            omega_hover = float(np.sqrt(coeffs.hover_omega_sq))
        stride = win.stride if win.mode == "online" else None
        X, y, _ = make_windows(seq, win.mode, win.length, omega_hover, use_rotor, win.rotor_channels,
                               stride=stride, prior_count=win.prior_count)
        Xs.append(X)
        ys.append(y)
    X, y = np.concatenate(Xs), np.concatenate(ys)
    t = cfg.train
    model = VelocityRegressor(learning_rate=t.learning_rate, batch_size=t.batch_size, epochs=t.epochs,
                              huber_delta=t.huber_delta, patience=t.patience, min_improvement=t.min_improvement,
                              clip_norm=t.clip_norm, random_state=t.seed)
    model.fit(X, y)
    model.save(args.out, omega_hover=omega_hover, window=win.length, use_rotor=float(use_rotor),
               four_rotor_channels=float(win.rotor_channels == "four"), prior_count=win.prior_count)
    history = args.history or os.path.splitext(args.out)[0] + ".loss.csv"
    model.export_history(history)
    last = model.history_[-1]
    print(f"trained on {len(X)} windows from {len(paths)} sequences; "
          f"final huber {last['huber']:.6g}, nll {last['nll']:.6g}")
    print(f"wrote {args.out} and {history}")
    return 0


def _predictor(args, seq, cfg):
    if args.estimator == "truth":
        return TruthVelocityPredictor(cfg.truth_variance, seed=args.seed)
    if args.estimator == "aero":
        coeffs = load_config(args.coeffs).aero if args.coeffs else seq.coefficients
        if coeffs is None:
            raise AeroIOError("aero estimator needs --coeffs or aero.* metadata in the sequence")
        noise = _noise_from_metadata(seq.metadata)
        sigma_a = args.sigma_a if args.sigma_a is not None else (noise.sigma_a if noise else cfg.noise.sigma_a)
        return AeroInversePredictor(coeffs, sigma_a=max(sigma_a, 1e-3), with_coriolis=seq.coriolis)
    if args.params is None:
        raise AeroIOError("net estimator needs --params")
    model = VelocityRegressor.load(args.params)
    meta = model.meta_
    try:
        window = int(meta["window"])
        normalizer = RotorNormalizer(float(meta["omega_hover"]), float(meta["prior_count"]),
                                     bool(meta["use_rotor"]),
                                     "four" if bool(meta.get("four_rotor_channels", 0.0)) else "mean")
    except KeyError as exc:
        raise serialization.ParseError(f"parameter file lacks meta.{exc.args[0]}") from None
    return NetVelocityPredictor(model, window, normalizer)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seq = load_sequence(args.input)
    fcfg = cfg.filter
    init = args.init or ("truth" if seq.truth is not None else "accel")
    fcfg = replace(fcfg, init=init)
    if args.update_rate is not None:
        fcfg = replace(fcfg, update_rate=args.update_rate)
    noise = _noise_from_metadata(seq.metadata)
    if not args.config and noise is not None and seq.dt > 0:
        q = ProcessNoise.from_noise_config(noise, seq.dt)
        floor = ProcessNoise()
        fcfg = replace(fcfg, process_noise=ProcessNoise(max(q.acc, floor.acc), max(q.gyro, floor.gyro),
                                                        max(q.acc_bias, floor.acc_bias),
                                                        max(q.gyro_bias, floor.gyro_bias)))
    predictor = None if args.estimator == "none" else _predictor(args, seq, cfg)
    result = run_filter(seq, predictor, fcfg)
    save_trajectory(Track.from_filter(result), args.out,
                    {"estimator": args.estimator, "updates": result.n_updates, "skipped": result.n_skipped})
    print(f"{result.n_updates} updates, {result.n_skipped} skipped; wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    est, gt = load_trajectory(args.est), load_trajectory(args.gt)
    report = compute_metrics(est, gt, args.interval, args.rve_mode, name=os.path.basename(args.est))
    print(format_table([report]))
    print()
    text = format_csv([report])
    print(text, end="")
    if args.csv:
        atomic_write(args.csv, text)
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    est, gt = load_trajectory(args.est), load_trajectory(args.gt)
    fig = plt.figure(figsize=(10, 6))
    ax = fig.add_subplot(1, 2, 1)
    ax.plot(gt.p[:, 0], gt.p[:, 1], "k-", lw=1.0, label="ground truth")
    ax.plot(est.p[:, 0], est.p[:, 1], "r-", lw=1.0, label="estimate")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best")
    for i, axis in enumerate("xyz"):
        a = fig.add_subplot(3, 2, 2 * i + 2)
        a.plot(gt.t, gt.v[:, i], "k-", lw=0.8)
        a.plot(est.t, est.v[:, i], "r-", lw=0.8)
        a.set_ylabel(f"v{axis} [m/s]")
    a.set_xlabel("t [s]")
    fig.tight_layout()
    buf = io.BytesIO()
    try:
        fig.savefig(buf, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    atomic_write(args.out, buf.getvalue())
    print(f"wrote {args.out}")
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aeroio", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic sequence CSV")
    p.add_argument("--spec", help="ini file with [trajectory] (and optionally [sim])")
    p.add_argument("--coeffs", help="ini file with [aero]")
    p.add_argument("--noise", help="ini file with [noise]")
    p.add_argument("--seed", type=int, help="overrides trajectory and noise seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="fit drag coefficients from a sequence with ground truth")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("train", help="train the velocity network on a directory of sequences")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="ini file with [train] and [window]")
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="loss history CSV (default: <out>.loss.csv)")
    p.add_argument("--no-rotor", action="store_true", help="drop the rotor channel (ablation)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run the filter on a sequence")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--estimator", choices=("net", "aero", "truth", "none"), required=True)
    p.add_argument("--params", help="network parameter file (net)")
    p.add_argument("--coeffs", help="ini file with [aero] (aero; default: sequence metadata)")
    p.add_argument("--config", help="ini file with [filter]")
    p.add_argument("--init", choices=("truth", "accel"), help="default: truth when available")
    p.add_argument("--update-rate", type=float)
    p.add_argument("--sigma-a", type=float, help="accelerometer noise std for the aero estimator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="ATE/RTE/AVE/RVE of an estimate against ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--interval", type=float, default=5.0)
    p.add_argument("--rve-mode", choices=("delta", "mean"), default="delta")
    p.add_argument("--csv", help="also write the metrics CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="SVG with top-down track and velocity panels")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (AeroIOError, ValueError, OSError) as exc:
        print(f"aeroio {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
