"""Monte Carlo evaluation: ARL, worst-case detection delay, bound audits,
and the four-scenario experiment suite.

Worst-case delay convention: for the reflected CUSUM the essential supremum
over pre-change histories is attained with the statistic at its reset
barrier, and from that state the delay distribution does not depend on where
the change falls.  Delay trials therefore start at the reset state and draw
post-change observations from time 1.

Stream discipline: every Monte Carlo trial owns one substream, with the id
composed as (scenario_index << 48) | (lane << 40) | trial.  Lanes separate
ARL runs, delay runs, calibration, bound audits and design-time draws, so no
two uses ever share a stream and results are independent of thread count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, ScenarioConfig, build_matrix_set, build_vector_set, matrix_payload, vector_payload
from .cusum import GaussianSource, alarm_times_gaussian, calibrate_threshold_mc, run_until_alarm, threshold_from_gamma
from .errors import DomainError
from .gaussian import Gaussian, SeededStream, kl_divergence, sample
from .lfp import AffineDetector, SolverOptions, build_affine_detector, solve_lfp
from .quadratic import ClassSetup, SaddleOptions, SingletonMean, build_quadratic_detector, llr_detector, solve_saddle

LANE_ARL = 1
LANE_WDD = 2
LANE_CALIBRATION = 3
LANE_VERIFY = 4
LANE_DESIGN = 6


def stream_id(scenario_index: int, lane: int, trial: int) -> int:
    """Compose a collision-free substream id (trial < 2**40)."""
    return (scenario_index << 48) | (lane << 40) | trial


@dataclass(frozen=True)
class ChangeScenario:
    """True data-generating pair around an unknown change time."""

    nu0_true: Gaussian
    nu1_true: Gaussian
    kappa: int = 1

    def __post_init__(self):
        if self.nu0_true.dim != self.nu1_true.dim:
            raise DomainError(f"pre/post dimensions differ: {self.nu0_true.dim} vs {self.nu1_true.dim}")
        if self.kappa < 1:
            raise DomainError(f"kappa must be >= 1, got {self.kappa}")


@dataclass(frozen=True)
class RunReport:
    scenario: str
    procedure: str
    d: int
    gamma: float
    b: float
    epsilon_star: float | None
    arl_mean: float
    arl_se: float
    wdd_mean: float
    wdd_sd: float
    censored_fraction: float
    trials: int
    seed: int
    efficiency_factor: float | None = None


CSV_COLUMNS = (
    "scenario",
    "procedure",
    "d",
    "gamma",
    "b",
    "epsilon_star",
    "arl_mean",
    "arl_se",
    "wdd_mean",
    "wdd_sd",
    "censored_fraction",
    "trials",
    "seed",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def to_csv(reports) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in reports:
        lines.append(",".join(_fmt(getattr(r, col)) for col in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def render_human(reports) -> str:
    """Aligned table for eyeballing; CSV is the machine format."""
    float_cols = {"gamma", "b", "epsilon_star", "arl_mean", "arl_se", "wdd_mean", "wdd_sd", "censored_fraction"}
    headers = list(CSV_COLUMNS) + ["efficiency_factor"]
    rows = [headers]
    for r in reports:
        row = []
        for col in CSV_COLUMNS:
            value = getattr(r, col)
            if col in float_cols and value is not None:
                row.append(f"{float(value):.6g}")
            else:
                row.append(_fmt(value))
        row.append("-" if r.efficiency_factor is None else f"{r.efficiency_factor:.4g}")
        rows.append(row)
    widths = [max(len(row[j]) for row in rows) for j in range(len(headers))]
    out = []
    for i, row in enumerate(rows):
        out.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def estimate_arl(detector, b: float, nu0: Gaussian, trials: int, horizon: int, seed: int, *, scenario_index: int = 0, threads: int = 1):
    """(mean, standard error, censored fraction) of the run length under nu0.

    Censored runs count at the horizon, which biases the mean downward; the
    censored fraction is reported so callers can judge the bias.
    """
    if trials < 100:
        raise DomainError(f"need at least 100 trials, got {trials}")
    streams = [SeededStream(seed, stream_id(scenario_index, LANE_ARL, t)) for t in range(trials)]
    times = alarm_times_gaussian(detector, nu0, streams, b, horizon, threads=threads)
    capped = np.minimum(times, horizon).astype(float)
    mean = float(np.mean(capped))
    se = float(np.std(capped, ddof=1) / math.sqrt(trials))
    censored = float(np.mean(times > horizon))
    return mean, se, censored


def _delay_times(detector, b: float, horizon: int, trials: int, seed: int, scenario_index: int, draw, threads: int = 1) -> np.ndarray:
    """Alarm times from the reset state under per-trial post-change laws.

    `draw(rng) -> Gaussian` may consume the trial's generator before the
    observations do, so parameter draws and sample paths share one substream.
    """
    out = np.empty(trials, dtype=np.int64)

    def run_range(lo, hi):
        for i in range(lo, hi):
            rng = SeededStream(seed, stream_id(scenario_index, LANE_WDD, i)).generator()
            gaussian = draw(rng)
            source = GaussianSource(gaussian, stream=None, rng=rng)
            res = run_until_alarm(detector, source, b, horizon)
            out[i] = res.alarm_time if res.alarm_time is not None else horizon + 1

    if threads <= 1 or trials < 2:
        run_range(0, trials)
    else:
        from concurrent.futures import ThreadPoolExecutor

        workers = min(threads, trials)
        bounds = np.linspace(0, trials, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda ab: run_range(ab[0], ab[1]), zip(bounds[:-1], bounds[1:])))
    return out


def estimate_wdd(detector, b: float, scenario: ChangeScenario, trials: int, seed: int, *, horizon: int = 10_000, scenario_index: int = 0, threads: int = 1):
    """(mean, standard deviation) of the detection delay at the worst case.

    Change at time 1 with the statistic at the reset barrier (kappa in the
    scenario is metadata: from the reset state the delay law is the same for
    every change time).  Censored trials are excluded from the estimate and
    reported via a warning.
    """
    if trials < 100:
        raise DomainError(f"need at least 100 trials, got {trials}")
    times = _delay_times(detector, b, horizon, trials, seed, scenario_index, lambda rng: scenario.nu1_true, threads)
    kept = times[times <= horizon].astype(float)
    n_censored = trials - kept.size
    if n_censored:
        warnings.warn(f"{n_censored}/{trials} delay trials censored at horizon {horizon} and excluded", stacklevel=2)
    if kept.size == 0:
        return math.nan, math.nan
    sd = float(np.std(kept, ddof=1)) if kept.size > 1 else 0.0
    return float(np.mean(kept)), sd


# ---------------------------------------------------------------------------
# detector bound audits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    side: int  # 0: E[exp(-phi)] under a pre-change member; 1: E[exp(+phi)] post-change
    index: int
    method: str  # "exact" or "monte_carlo"
    value: float
    std_error: float
    bound: float
    passed: bool


@dataclass(frozen=True)
class BoundReport:
    entries: tuple
    epsilon_star: float
    samples: int

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries)


def verify_detector_bounds(detector, p0_members, p1_members, samples: int, seed: int, *, scenario_index: int = 0) -> BoundReport:
    """Check the certified exponential-moment bounds member by member.

    Affine detectors use the exact Gaussian moment formula; quadratic ones
    are estimated by Monte Carlo with `samples` draws per member.  A member
    passes when its moment is below epsilon_star plus three standard errors.
    """
    eps = getattr(detector, "epsilon_star", None)
    if eps is None:
        raise DomainError("detector carries no certified risk to audit")
    entries = []
    for side, members in ((0, p0_members), (1, p1_members)):
        sign = -1.0 if side == 0 else 1.0
        for idx, member in enumerate(members):
            if isinstance(detector, AffineDetector):
                value = detector.moment_minus(member) if side == 0 else detector.moment_plus(member)
                se = 0.0
                method = "exact"
            else:
                stream = SeededStream(seed, stream_id(scenario_index, LANE_VERIFY, (side << 20) | idx))
                x = sample(member, stream, samples)
                vals = np.exp(sign * _phi_values(detector, x))
                value = float(np.mean(vals))
                se = float(np.std(vals, ddof=1) / math.sqrt(samples))
                method = "monte_carlo"
            entries.append(
                BoundCheck(
                    side=side,
                    index=idx,
                    method=method,
                    value=value,
                    std_error=se,
                    bound=eps,
                    passed=value <= eps + 3.0 * se + 1e-10,
                )
            )
    return BoundReport(entries=tuple(entries), epsilon_star=eps, samples=samples)


def _phi_values(detector, x: np.ndarray) -> np.ndarray:
    return -np.asarray(detector.increments(x), dtype=float)


# ---------------------------------------------------------------------------
# experiment runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedScenario:
    """Solved detectors and scenario context, before any simulation."""

    config: ScenarioConfig
    robust_detector: object
    baseline_detector: object
    nu0_true: Gaussian
    epsilon_star: float
    efficiency_factor: float | None
    post_draw: object  # draw(rng) -> Gaussian, per-trial true post-change law
    baseline_post: Gaussian
    solution: object


def _resolve_cov_spec(spec, u1, d, rng):
    kind = spec["kind"]
    if kind == "uniform_sigma":
        return u1.member(float(rng.uniform(u1.sigma_lo, u1.sigma_hi)))
    if kind == "random_member":
        return u1.sample_member(rng)
    if kind == "interval_point":
        return u1.member(float(spec["sigma"]))
    if kind == "fixed":
        return matrix_payload(spec["value"], d)
    raise DomainError(f"unknown covariance sampler kind {kind!r}")


def prepare_scenario(cfg: ExperimentConfig, scen: ScenarioConfig, *, progress=None) -> PreparedScenario:
    d = cfg.dimension
    solver = cfg.solver
    raw = scen.raw
    if progress:
        progress(f"{scen.name}: solving detector")
    if scen.kind == "mean_shift":
        m0 = build_vector_set(raw["m0"], d)
        m1 = build_vector_set(raw["m1"], d)
        sigma = matrix_payload(raw["sigma"], d)
        sol = solve_lfp(m0, m1, sigma, SolverOptions(tol=solver["lfp_tol"], max_iters=solver["lfp_max_iters"]))
        robust = build_affine_detector(sol, sigma)
        if "true_pre_mean" in raw:
            pre_mean = vector_payload(raw["true_pre_mean"], d)
        else:
            pre_mean = m0.point  # validated singleton
        nu0_true = Gaussian(pre_mean, sigma)
        base = raw["baseline"]
        base_pre = vector_payload(base["pre_mean"], d) if "pre_mean" in base else pre_mean
        base_post = Gaussian(vector_payload(base["post_mean"], d), sigma)
        baseline = llr_detector(Gaussian(base_pre, sigma), base_post)
        sampler = raw["true_post_mean"]

        if sampler["kind"] == "uniform_entries":
            low, high = float(sampler["low"]), float(sampler["high"])

            def post_draw(rng, _sigma=sigma):
                return Gaussian(rng.uniform(low, high, size=d), _sigma)

        else:
            fixed_mean = vector_payload(sampler["value"], d)

            def post_draw(rng, _sigma=sigma):
                return Gaussian(fixed_mean, _sigma)

        eps = sol.epsilon_star
        efficiency = kl_divergence(nu0_true, base_post) / (2.0 * (1.0 - eps)) if eps < 1.0 else None
        return PreparedScenario(scen, robust, baseline, nu0_true, eps, efficiency, post_draw, base_post, sol)

    # covariance shift
    u0 = build_matrix_set(raw["u0"], d)
    u1 = build_matrix_set(raw["u1"], d)
    mean0 = vector_payload(raw.get("mean0", "zeros"), d)
    mean1 = vector_payload(raw.get("mean1", "zeros"), d)
    setup0 = ClassSetup(u0, SingletonMean(mean0))
    setup1 = ClassSetup(u1, SingletonMean(mean1))
    sol = solve_saddle(
        setup0,
        setup1,
        beta=solver["beta"],
        opts=SaddleOptions(gap_tol=solver["gap_tol"], max_iters=solver["saddle_max_iters"]),
    )
    robust = build_quadratic_detector(sol, setup0, setup1)
    if "true_pre_cov" in raw:
        pre_cov = matrix_payload(raw["true_pre_cov"], d)
    else:
        pre_cov = u0.matrix  # validated singleton
    nu0_true = Gaussian(mean0, pre_cov)
    design_rng = SeededStream(cfg.seed, stream_id(scen.index, LANE_DESIGN, 0)).generator()
    base_post_cov = _resolve_cov_spec(raw["baseline"]["post_cov"], u1, d, design_rng)
    base_pre_cov = matrix_payload(raw["baseline"]["pre_cov"], d) if "pre_cov" in raw["baseline"] else pre_cov
    base_post = Gaussian(mean1, base_post_cov)
    baseline = llr_detector(Gaussian(mean0, base_pre_cov), base_post)
    sampler = raw["true_post_cov"]

    def post_draw(rng, _u1=u1, _d=d, _mean=mean1, _sampler=sampler):
        return Gaussian(_mean, _resolve_cov_spec(_sampler, _u1, _d, rng))

    eps = sol.epsilon_star
    efficiency = kl_divergence(nu0_true, base_post) / (2.0 * (1.0 - eps)) if eps < 1.0 else None
    return PreparedScenario(scen, robust, baseline, nu0_true, eps, efficiency, post_draw, base_post, sol)


def _pick_threshold(cfg: ExperimentConfig, prep: PreparedScenario, detector, procedure: str, *, threads: int, progress=None) -> float:
    if cfg.threshold_mode == "theoretical":
        eps = getattr(detector, "epsilon_star", None)
        if eps is not None and 0.0 < eps < 1.0:
            return threshold_from_gamma(cfg.gamma, eps)
        return math.log(cfg.gamma)  # classic CUSUM guideline for the fully specified baseline
    if progress:
        progress(f"{prep.config.name}/{procedure}: calibrating threshold")
    lane_offset = 0 if procedure == "robust" else 1 << 30
    ids = [stream_id(prep.config.index, LANE_CALIBRATION, lane_offset | t) for t in range(cfg.arl_trials)]
    return calibrate_threshold_mc(
        detector,
        prep.nu0_true,
        cfg.gamma,
        cfg.arl_trials,
        cfg.seed,
        horizon=cfg.arl_horizon,
        threads=threads,
        stream_ids=ids,
        progress=progress,
    )


def run_experiment(cfg: ExperimentConfig, *, threads: int = 1, progress=None) -> list[RunReport]:
    """Run every configured scenario with both procedures; one report per
    (scenario, procedure) pair, in configuration order."""
    reports = []
    for scen in cfg.scenarios:
        prep = prepare_scenario(cfg, scen, progress=progress)
        for procedure, detector in (("robust", prep.robust_detector), ("baseline", prep.baseline_detector)):
            b = _pick_threshold(cfg, prep, detector, procedure, threads=threads, progress=progress)
            if progress:
                progress(f"{scen.name}/{procedure}: ARL at b={b:.5g}")
            # both procedures reuse the same per-trial streams: each trial draws
            # one true parameter and one path, evaluated by both detectors
            arl_mean, arl_se, censored = estimate_arl(
                detector, b, prep.nu0_true, cfg.arl_trials, cfg.arl_horizon, cfg.seed,
                scenario_index=scen.index,
                threads=threads,
            )
            if progress:
                progress(f"{scen.name}/{procedure}: delays")
            n_delay = scen.delay_trials(cfg.delay_trials)
            times = _delay_times(
                detector, b, cfg.delay_horizon, n_delay, cfg.seed,
                scen.index,
                prep.post_draw,
                threads,
            )
            kept = times[times <= cfg.delay_horizon].astype(float)
            wdd_mean = float(np.mean(kept)) if kept.size else math.nan
            wdd_sd = float(np.std(kept, ddof=1)) if kept.size > 1 else 0.0
            reports.append(
                RunReport(
                    scenario=scen.name,
                    procedure=procedure,
                    d=cfg.dimension,
                    gamma=cfg.gamma,
                    b=b,
                    epsilon_star=prep.epsilon_star if procedure == "robust" else None,
                    arl_mean=arl_mean,
                    arl_se=arl_se,
                    wdd_mean=wdd_mean,
                    wdd_sd=wdd_sd,
                    censored_fraction=censored,
                    trials=n_delay,
                    seed=cfg.seed,
                    efficiency_factor=prep.efficiency_factor if procedure == "robust" else None,
                )
            )
    return reports
