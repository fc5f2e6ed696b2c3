"""Command-line surface.

Subcommands wrap the library operations: solve detectors (`lfp`,
`detector`), pick thresholds (`calibrate`), evaluate procedures (`arl`,
`edd`, `verify`) and run the full experiment suite (`experiment`).

Conventions: results go to stdout (or --out), diagnostics and progress to
stderr only.  Exit codes: 0 success, 1 validation/usage error, 2 solver or
calibration non-convergence.  Identical argv + config + seed produce
byte-identical output artifacts regardless of --threads.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from .config import bundled_config_path, parse_config
from .cusum import calibrate_threshold_mc, threshold_from_gamma
from .errors import CalibrationError, ConfigError, ConvergenceError, RobustCusumError
from .gaussian import Gaussian, SeededStream
from .simulate import (
    LANE_CALIBRATION,
    LANE_VERIFY,
    _delay_times,
    estimate_arl,
    prepare_scenario,
    render_human,
    run_experiment,
    stream_id,
    to_csv,
    verify_detector_bounds,
)

_FORMATS = ("csv", "human")


class _UsageError(Exception):
    def __init__(self, message, parser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message, self)


def _default_threads() -> int:
    env = os.environ.get("ROBUSTCUSUM_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _add_common(sub):
    sub.add_argument("--config", required=True, help="config file path or bundled name (e.g. table1_desk.cfg)")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--out", default=None, help="output file (default: stdout)")
    sub.add_argument("--format", choices=_FORMATS, default="csv")
    sub.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help="worker threads for Monte Carlo trials (default: ROBUSTCUSUM_THREADS or available parallelism)",
    )
    sub.add_argument("--quiet", action="store_true", help="suppress progress messages on stderr")
    sub.add_argument("--scenario", default=None, help="restrict to one scenario by name")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustcusum", description="Minimax-robust CUSUM change-point detection")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("lfp", "solve the least-favorable mean pair for mean-shift scenarios"),
        ("detector", "solve the quadratic-detector saddle problem for covariance scenarios"),
        ("calibrate", "Monte Carlo threshold calibration per scenario and procedure"),
        ("arl", "estimate average run length at the configured threshold"),
        ("edd", "estimate worst-case detection delay at the configured threshold"),
        ("verify", "audit the detector exponential-moment bounds on sampled class members"),
        ("experiment", "run the full scenario suite and emit the comparison table"),
    ):
        sub = subs.add_parser(name, help=desc, description=desc)
        _add_common(sub)
        if name == "verify":
            sub.add_argument("--members", type=int, default=10, help="sampled members per class")
            sub.add_argument("--samples", type=int, default=100_000, help="Monte Carlo draws per member")
    return parser


class _Progress:
    """Throttled progress printer (>= 1 s between lines), stderr only."""

    def __init__(self, quiet: bool):
        self.quiet = quiet
        self._last = 0.0

    def __call__(self, message: str):
        if self.quiet:
            return
        now = time.monotonic()
        if now - self._last >= 1.0:
            print(message, file=sys.stderr, flush=True)
            self._last = now


def _load(args):
    path = args.config
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    else:
        try:
            bundled = bundled_config_path(path)
            text = bundled.read_text(encoding="utf-8")
        except (FileNotFoundError, ModuleNotFoundError):
            raise ConfigError([f"config: no such file or bundled config '{path}'"]) from None
        cfg = parse_config(text)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _select_scenarios(cfg, args, kinds=None):
    scens = cfg.scenarios
    if args.scenario is not None:
        scens = [s for s in scens if s.name == args.scenario]
        if not scens:
            raise ConfigError([f"--scenario: no scenario named '{args.scenario}'"])
    if kinds is not None:
        scens = [s for s in scens if s.kind in kinds]
        if not scens:
            raise ConfigError([f"config: no scenario of kind {kinds} selected"])
    return scens


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _num(x) -> str:
    return repr(float(x))


def _vec(v) -> str:
    return ";".join(repr(float(x)) for x in np.asarray(v).ravel())


def _table(header, rows, fmt) -> str:
    if fmt == "csv":
        lines = [",".join(header)]
        lines += [",".join(row) for row in rows]
        return "\n".join(lines) + "\n"
    all_rows = [list(header)] + [list(r) for r in rows]
    widths = [max(len(r[j]) for r in all_rows) for j in range(len(header))]
    out = []
    for i, row in enumerate(all_rows):
        out.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def _cmd_lfp(cfg, args, progress):
    rows = []
    for scen in _select_scenarios(cfg, args, kinds=("mean_shift",)):
        prep = prepare_scenario(cfg, scen, progress=progress)
        sol = prep.solution
        rows.append(
            [scen.name, _num(sol.delta_sq), _num(sol.epsilon_star), str(sol.iterations), _num(sol.residual),
             _vec(sol.mu0_star), _vec(sol.mu1_star)]
        )
    header = ["scenario", "delta_sq", "epsilon_star", "iterations", "residual", "mu0_star", "mu1_star"]
    return _table(header, rows, args.format)


def _cmd_detector(cfg, args, progress):
    rows = []
    for scen in _select_scenarios(cfg, args, kinds=("covariance_shift",)):
        prep = prepare_scenario(cfg, scen, progress=progress)
        sol = prep.solution
        if args.format == "csv":
            rows.append(
                [scen.name, _num(sol.sv), _num(sol.gap), _num(sol.epsilon_star), str(sol.iterations),
                 _vec(sol.h_star), _vec(sol.H_star)]
            )
        else:
            rows.append(
                [scen.name, f"{sol.sv:.8g}", f"{sol.gap:.3g}", f"{sol.epsilon_star:.8g}", str(sol.iterations),
                 f"||h*||={np.linalg.norm(sol.h_star):.4g}", f"||H*||_F={np.linalg.norm(sol.H_star):.4g}"]
            )
    header = ["scenario", "sv", "gap", "epsilon_star", "iterations", "h_star", "H_star"]
    return _table(header, rows, args.format)


def _procedures(prep):
    return (("robust", prep.robust_detector), ("baseline", prep.baseline_detector))


def _threshold(cfg, prep, detector, procedure, args, progress):
    if cfg.threshold_mode == "theoretical":
        eps = getattr(detector, "epsilon_star", None)
        if eps is not None and 0.0 < eps < 1.0:
            return threshold_from_gamma(cfg.gamma, eps)
        return math.log(cfg.gamma)
    lane_offset = 0 if procedure == "robust" else 1 << 30
    ids = [stream_id(prep.config.index, LANE_CALIBRATION, lane_offset | t) for t in range(cfg.arl_trials)]
    return calibrate_threshold_mc(
        detector, prep.nu0_true, cfg.gamma, cfg.arl_trials, cfg.seed,
        horizon=cfg.arl_horizon, threads=args.threads, stream_ids=ids, progress=progress,
    )


def _cmd_calibrate(cfg, args, progress):
    rows = []
    for scen in _select_scenarios(cfg, args):
        prep = prepare_scenario(cfg, scen, progress=progress)
        for procedure, det in _procedures(prep):
            eps = getattr(det, "epsilon_star", None)
            b_theory = threshold_from_gamma(cfg.gamma, eps) if eps is not None and 0 < eps < 1 else math.log(cfg.gamma)
            lane_offset = 0 if procedure == "robust" else 1 << 30
            ids = [stream_id(scen.index, LANE_CALIBRATION, lane_offset | t) for t in range(cfg.arl_trials)]
            progress(f"{scen.name}/{procedure}: calibrating")
            b_cal = calibrate_threshold_mc(
                det, prep.nu0_true, cfg.gamma, cfg.arl_trials, cfg.seed,
                horizon=cfg.arl_horizon, threads=args.threads, stream_ids=ids, progress=progress,
            )
            rows.append([scen.name, procedure, _num(b_theory), _num(b_cal)])
    return _table(["scenario", "procedure", "b_theoretical", "b_calibrated"], rows, args.format)


def _cmd_arl(cfg, args, progress):
    rows = []
    for scen in _select_scenarios(cfg, args):
        prep = prepare_scenario(cfg, scen, progress=progress)
        for procedure, det in _procedures(prep):
            b = _threshold(cfg, prep, det, procedure, args, progress)
            progress(f"{scen.name}/{procedure}: ARL at b={b:.5g}")
            mean, se, censored = estimate_arl(
                det, b, prep.nu0_true, cfg.arl_trials, cfg.arl_horizon, cfg.seed,
                scenario_index=scen.index, threads=args.threads,
            )
            rows.append([scen.name, procedure, _num(b), _num(mean), _num(se), _num(censored)])
    return _table(["scenario", "procedure", "b", "arl_mean", "arl_se", "censored_fraction"], rows, args.format)


def _cmd_edd(cfg, args, progress):
    rows = []
    for scen in _select_scenarios(cfg, args):
        prep = prepare_scenario(cfg, scen, progress=progress)
        n_delay = scen.delay_trials(cfg.delay_trials)
        for procedure, det in _procedures(prep):
            b = _threshold(cfg, prep, det, procedure, args, progress)
            progress(f"{scen.name}/{procedure}: delays at b={b:.5g}")
            times = _delay_times(det, b, cfg.delay_horizon, n_delay, cfg.seed, scen.index, prep.post_draw, args.threads)
            kept = times[times <= cfg.delay_horizon].astype(float)
            mean = float(np.mean(kept)) if kept.size else math.nan
            sd = float(np.std(kept, ddof=1)) if kept.size > 1 else 0.0
            rows.append([scen.name, procedure, _num(b), _num(mean), _num(sd), str(int(n_delay - kept.size))])
    return _table(["scenario", "procedure", "b", "wdd_mean", "wdd_sd", "censored"], rows, args.format)


def _cmd_verify(cfg, args, progress):
    rows = []
    for scen in _select_scenarios(cfg, args):
        prep = prepare_scenario(cfg, scen, progress=progress)
        progress(f"{scen.name}: sampling class members")
        members0, members1 = _class_members(cfg, scen, prep, args.members)
        report = verify_detector_bounds(
            prep.robust_detector, members0, members1, args.samples, cfg.seed, scenario_index=scen.index
        )
        for e in report.entries:
            rows.append(
                [scen.name, str(e.side), str(e.index), e.method, _num(e.value), _num(e.std_error),
                 _num(e.bound), "pass" if e.passed else "FAIL"]
            )
    header = ["scenario", "side", "member", "method", "moment", "std_error", "bound", "status"]
    return _table(header, rows, args.format)


def _class_members(cfg, scen, prep, n_members):
    """Gaussians sampled from the scenario's declared classes."""
    from .config import build_matrix_set, build_vector_set, matrix_payload, vector_payload

    d = cfg.dimension
    rng = SeededStream(cfg.seed, stream_id(scen.index, LANE_VERIFY, 1 << 30)).generator()
    members0, members1 = [], []
    raw = scen.raw
    if scen.kind == "mean_shift":
        m0 = build_vector_set(raw["m0"], d)
        m1 = build_vector_set(raw["m1"], d)
        sigma = matrix_payload(raw["sigma"], d)
        sol = prep.solution
        members0.append(Gaussian(sol.mu0_star, sigma))
        members1.append(Gaussian(sol.mu1_star, sigma))
        for _ in range(max(n_members - 1, 0)):
            members0.append(Gaussian(m0.sample_member(rng), sigma))
            members1.append(Gaussian(m1.sample_member(rng), sigma))
    else:
        u0 = build_matrix_set(raw["u0"], d)
        u1 = build_matrix_set(raw["u1"], d)
        mean0 = vector_payload(raw.get("mean0", "zeros"), d)
        mean1 = vector_payload(raw.get("mean1", "zeros"), d)
        jitter = 1e-9 * np.eye(d)  # keep sampled members factorizable
        for _ in range(n_members):
            members0.append(Gaussian(mean0, u0.sample_member(rng) + jitter))
            members1.append(Gaussian(mean1, u1.sample_member(rng) + jitter))
    return members0, members1


def _cmd_experiment(cfg, args, progress):
    reports = run_experiment(cfg, threads=args.threads, progress=progress)
    if args.scenario is not None:
        reports = [r for r in reports if r.scenario == args.scenario]
    return to_csv(reports) if args.format == "csv" else render_human(reports)


_COMMANDS = {
    "lfp": _cmd_lfp,
    "detector": _cmd_detector,
    "calibrate": _cmd_calibrate,
    "arl": _cmd_arl,
    "edd": _cmd_edd,
    "verify": _cmd_verify,
    "experiment": _cmd_experiment,
}


def dispatch(argv) -> int:
    """Parse argv, run the command, write artifacts; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load(args)
        progress = _Progress(args.quiet)
        text = _COMMANDS[args.command](cfg, args, progress)
        _emit(text, args.out)
        return 0
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, CalibrationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        if isinstance(exc, ConvergenceError) and exc.residual is not None:
            print(f"last residual/gap: {exc.residual:.6g}", file=sys.stderr)
        return 2
    except RobustCusumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
