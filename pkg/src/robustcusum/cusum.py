"""Stopping rules: recursive CUSUM over detector increments.

The running statistic follows S_t = max(S_{t-1}, 0) + increment_t and the
procedure alarms at the first t with S_t >= b.  This recursion equals the
max-form statistic max_{1<=k<=t} sum_{i=k}^t increment_i (verified against a
brute-force oracle in the test suite, not assumed).

`run_until_alarm` evaluates the same recursion block-wise with cumulative
sums and running minima so long horizons cost O(horizon) numpy work instead
of a Python loop per step:

    S_t = max(s0 + C_t, C_t - min_{0<=j<=t-1} C_j),   C_0 = 0, s0 = max(S_prev, 0)

Thresholds come either from the certified rule b = log(gamma) +
log(eps*/(1-eps*)) or from Monte Carlo calibration via bisection on b with
common random numbers per trial (so the estimated ARL is exactly monotone in
b along the bisection).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CalibrationError, DomainError, StreamExhaustedError
from .gaussian import Gaussian, SeededStream, sample_with

_DEFAULT_BLOCK = 1024

# stream_id lane reserved for calibration trials (see simulate.stream_id)
_CALIBRATION_LANE = 3


@dataclass(frozen=True)
class CusumState:
    threshold: float
    statistic: float = 0.0
    time: int = 0
    alarmed: bool = False


def step(state: CusumState, increment: float) -> CusumState:
    """One reflected-CUSUM update; alarming is absorbing."""
    if state.alarmed:
        raise DomainError("cannot step an alarmed CUSUM state; reset first")
    stat = max(state.statistic, 0.0) + increment
    return replace(
        state,
        statistic=stat,
        time=state.time + 1,
        alarmed=stat >= state.threshold,
    )


@dataclass(frozen=True)
class StoppingResult:
    alarm_time: int | None  # None when censored at the horizon
    horizon: int
    final_statistic: float
    increments_consumed: int

    @property
    def censored(self) -> bool:
        return self.alarm_time is None


class GaussianSource:
    """Endless observation source: i.i.d. rows from one Gaussian, one stream.

    Pass either a SeededStream or an already-positioned generator (`rng=`);
    the latter lets a caller draw trial parameters and observations from the
    same substream.
    """

    def __init__(self, gaussian: Gaussian, stream: SeededStream | None = None, *, rng: np.random.Generator | None = None):
        if (stream is None) == (rng is None):
            raise ValueError("provide exactly one of stream or rng")
        self.gaussian = gaussian
        self._rng = rng if rng is not None else stream.generator()

    @property
    def dim(self):
        return self.gaussian.dim

    def take(self, n: int) -> np.ndarray:
        return sample_with(self.gaussian, self._rng, n)


class ArraySource:
    """Finite source over the rows of a matrix; raises when exhausted."""

    def __init__(self, data):
        self.data = np.atleast_2d(np.asarray(data, dtype=float))
        self._cursor = 0

    @property
    def dim(self):
        return self.data.shape[1]

    def take(self, n: int) -> np.ndarray:
        end = self._cursor + n
        if end > self.data.shape[0]:
            raise StreamExhaustedError(
                f"observation source exhausted: requested {n} rows at offset {self._cursor}, "
                f"have {self.data.shape[0]}"
            )
        out = self.data[self._cursor:end]
        self._cursor = end
        return out


def threshold_from_gamma(gamma: float, epsilon_star: float) -> float:
    """Smallest threshold certified to give ARL >= gamma."""
    if not gamma > 1.0:
        raise DomainError(f"gamma must be > 1, got {gamma}")
    if not 0.0 < epsilon_star < 1.0:
        raise DomainError(
            f"epsilon_star must lie strictly in (0, 1), got {epsilon_star} "
            "(1 means the classes overlap and the change is undetectable)"
        )
    return math.log(gamma) + math.log(epsilon_star / (1.0 - epsilon_star))


def _scan_block(increments: np.ndarray, carry: float, b: float):
    """First alarm index (0-based) within a block, else new carry.

    Implements S_t = max(carry + C_t, C_t - min_{j<t} C_j) for the block.
    """
    c = np.concatenate([[0.0], np.cumsum(increments)])
    run_min = np.minimum.accumulate(c)[:-1]
    stats = np.maximum(carry + c[1:], c[1:] - run_min)
    hits = np.nonzero(stats >= b)[0]
    if hits.size:
        i = int(hits[0])
        return i, float(stats[i])
    return None, float(stats[-1])


def run_until_alarm(detector, source, b: float, horizon: int, *, block: int = _DEFAULT_BLOCK) -> StoppingResult:
    """Run the reflected CUSUM on -phi increments until alarm or horizon."""
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    carry = 0.0
    consumed = 0
    while consumed < horizon:
        n = min(block, horizon - consumed)
        observations = source.take(n)
        increments = np.asarray(detector.increments(observations), dtype=float)
        hit, stat = _scan_block(increments, carry, b)
        if hit is not None:
            consumed += hit + 1
            return StoppingResult(alarm_time=consumed, horizon=horizon, final_statistic=stat, increments_consumed=consumed)
        carry = max(stat, 0.0)
        consumed += n
    return StoppingResult(alarm_time=None, horizon=horizon, final_statistic=carry, increments_consumed=consumed)


def alarm_times_gaussian(detector, gaussian: Gaussian, streams, b: float, horizon: int, *, block: int = _DEFAULT_BLOCK, threads: int = 1) -> np.ndarray:
    """Alarm time per trial stream (horizon + 1 marks a censored run).

    Trials are independent (one substream each) and results land in a
    preallocated array by trial index, so the output is identical for any
    thread count.
    """
    streams = list(streams)
    out = np.empty(len(streams), dtype=np.int64)

    def run_range(lo, hi):
        for i in range(lo, hi):
            res = run_until_alarm(detector, GaussianSource(gaussian, streams[i]), b, horizon, block=block)
            out[i] = res.alarm_time if res.alarm_time is not None else horizon + 1

    if threads <= 1 or len(streams) < 2:
        run_range(0, len(streams))
    else:
        from concurrent.futures import ThreadPoolExecutor

        n = len(streams)
        workers = min(threads, n)
        bounds = np.linspace(0, n, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda ab: run_range(ab[0], ab[1]), zip(bounds[:-1], bounds[1:])))
    return out


def calibrate_threshold_mc(
    detector,
    nu0: Gaussian,
    gamma: float,
    trials: int,
    seed: int,
    *,
    horizon: int | None = None,
    rel_tol: float = 0.05,
    max_bisections: int = 60,
    threads: int = 1,
    stream_ids=None,
    progress=None,
) -> float:
    """Bisect on b until the Monte Carlo ARL under nu0 is within rel_tol of gamma.

    Censored runs count at the horizon (default 50 * gamma), which biases the
    ARL estimate downward, so the calibrated threshold errs conservative.
    Every evaluation reuses the same per-trial streams (common random
    numbers), making the estimated ARL monotone in b.
    """
    if trials < 100:
        raise DomainError(f"calibration needs at least 100 trials, got {trials}")
    if not gamma > 1.0:
        raise DomainError(f"gamma must be > 1, got {gamma}")
    horizon = int(horizon if horizon is not None else round(50 * gamma))
    eps = getattr(detector, "epsilon_star", None)
    if eps is not None and 0.0 < eps < 1.0:
        b_theory = threshold_from_gamma(gamma, eps)
    else:
        b_theory = math.log(gamma)  # classic CUSUM guideline for a fully specified pair
    lo, hi = 0.1 * b_theory, 2.0 * b_theory + 10.0
    if stream_ids is None:
        stream_ids = [(_CALIBRATION_LANE << 40) | t for t in range(trials)]
    streams = [SeededStream(seed, sid) for sid in stream_ids]

    def arl(b):
        times = alarm_times_gaussian(detector, nu0, streams, b, horizon, threads=threads)
        return float(np.mean(np.minimum(times, horizon)))

    arl_lo = arl(lo)
    if abs(arl_lo - gamma) <= rel_tol * gamma:
        return lo
    arl_hi = arl(hi)
    if arl_lo > gamma or arl_hi < gamma:
        raise CalibrationError(
            f"failed to bracket ARL={gamma:g}: ARL({lo:.4g})={arl_lo:.4g}, ARL({hi:.4g})={arl_hi:.4g}",
            arl_low=arl_lo,
            arl_high=arl_hi,
        )
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        val = arl(mid)
        if progress is not None:
            progress(f"calibration: b={mid:.5g} ARL={val:.1f} target={gamma:g}")
        if abs(val - gamma) <= rel_tol * gamma:
            return mid
        if val > gamma:
            hi = mid
        else:
            lo = mid
    raise CalibrationError(
        f"bisection did not settle within {max_bisections} rounds (last bracket [{lo:.5g}, {hi:.5g}])",
        arl_low=None,
        arl_high=None,
    )
