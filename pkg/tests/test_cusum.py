import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustcusum import (
    ArraySource,
    CalibrationError,
    CusumState,
    DomainError,
    Gaussian,
    GaussianSource,
    SeededStream,
    StreamExhaustedError,
    calibrate_threshold_mc,
    run_until_alarm,
    step,
    threshold_from_gamma,
)
from robustcusum.lfp import AffineDetector


class ConstantDetector:
    """Detector whose increment (-phi) is a fixed constant."""

    def __init__(self, increment):
        self.increment = increment
        self.epsilon_star = None

    def increments(self, observations):
        return np.full(len(np.atleast_2d(observations)), self.increment, dtype=float)


def brute_force_stat(increments, t):
    """max over k of a freshly-summed tail sum_{i=k}^{t} (reversed cumsum oracle)."""
    tail = np.cumsum(increments[t::-1])
    return float(np.max(tail))


def test_step_examples():
    s = CusumState(threshold=100.0, statistic=3.0, time=5)
    s2 = step(s, -0.5)
    assert s2.statistic == pytest.approx(2.5) and s2.time == 6 and not s2.alarmed
    s3 = step(CusumState(threshold=100.0, statistic=-1.2, time=1), 0.2)
    assert s3.statistic == pytest.approx(0.2)  # reset at zero before adding


def test_step_alarm_absorbing():
    s = step(CusumState(threshold=1.0), 2.0)
    assert s.alarmed
    with pytest.raises(DomainError, match="alarmed"):
        step(s, 0.1)


def test_recursion_matches_brute_force():
    rng = np.random.default_rng(123)
    inc = rng.normal(size=1000)
    s = CusumState(threshold=math.inf)
    for t, x in enumerate(inc):
        s = step(s, float(x))
        assert abs(s.statistic - brute_force_stat(inc, t)) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=120))
def test_recursion_matches_brute_force_property(incs):
    s = CusumState(threshold=math.inf)
    for t, x in enumerate(incs):
        s = step(s, x)
        assert abs(s.statistic - brute_force_stat(np.array(incs), t)) <= 1e-9 * max(1.0, abs(s.statistic))


def test_threshold_examples():
    assert threshold_from_gamma(5000.0, 0.5) == pytest.approx(math.log(5000.0), abs=1e-12)
    expected = math.log(5000.0) + math.log(0.963194 / (1.0 - 0.963194))
    assert threshold_from_gamma(5000.0, 0.963194) == pytest.approx(expected, abs=1e-9)
    assert threshold_from_gamma(math.exp(5.0), math.exp(-1.0)) == pytest.approx(4.458675145387082, abs=1e-9)


def test_threshold_rejects_undetectable_and_bad_gamma():
    with pytest.raises(DomainError):
        threshold_from_gamma(100.0, 1.0)
    with pytest.raises(DomainError):
        threshold_from_gamma(100.0, 1.3)
    with pytest.raises(DomainError):
        threshold_from_gamma(1.0, 0.5)


def test_run_until_alarm_deterministic_ramp():
    res = run_until_alarm(ConstantDetector(1.0), ArraySource(np.zeros((50, 1))), 10.0, 50)
    assert res.alarm_time == 10 and not res.censored
    assert res.final_statistic == pytest.approx(10.0)


def test_run_until_alarm_censors():
    res = run_until_alarm(ConstantDetector(-1.0), ArraySource(np.zeros((30, 1))), 10.0, 30)
    assert res.censored and res.alarm_time is None and res.increments_consumed == 30


def test_run_until_alarm_stream_exhaustion():
    with pytest.raises(StreamExhaustedError):
        run_until_alarm(ConstantDetector(-1.0), ArraySource(np.zeros((5, 1))), 10.0, 50)


def test_run_until_alarm_seeded_determinism():
    det = AffineDetector(a=np.array([-0.5, 0.2]), c=-0.05, epsilon_star=0.9)
    g = Gaussian(np.zeros(2), np.eye(2))
    r1 = run_until_alarm(det, GaussianSource(g, SeededStream(9, 1)), 3.0, 10_000)
    r2 = run_until_alarm(det, GaussianSource(g, SeededStream(9, 1)), 3.0, 10_000)
    assert r1.alarm_time == r2.alarm_time


def test_block_runner_matches_stepwise_loop():
    rng = np.random.default_rng(77)
    for b in (0.5, 2.0, 5.0):
        inc = rng.normal(loc=0.05, scale=1.0, size=3000)

        class Replay:
            epsilon_star = None

            def increments(self, observations):
                idx = np.asarray(observations, dtype=int).ravel()
                return inc[idx]

        src = ArraySource(np.arange(3000.0)[:, None])
        fast = run_until_alarm(Replay(), src, b, 3000, block=64)
        s = CusumState(threshold=b)
        slow = None
        for t, x in enumerate(inc):
            s = step(s, float(x))
            if s.alarmed:
                slow = t + 1
                break
        assert fast.alarm_time == slow


def test_alarm_time_monotone_in_threshold():
    rng = np.random.default_rng(5)
    inc = rng.normal(loc=0.2, size=2000)

    class Replay:
        epsilon_star = None

        def increments(self, observations):
            idx = np.asarray(observations, dtype=int).ravel()
            return inc[idx]

    prev = 0
    for b in (0.5, 1.0, 2.0, 4.0, 8.0):
        res = run_until_alarm(Replay(), ArraySource(np.arange(2000.0)[:, None]), b, 2000)
        assert res.alarm_time >= prev
        prev = res.alarm_time


def test_calibration_hits_target_arl():
    # canonical pair detector for mu1 = 0.5 * ones in d=2: a = -mu1/2, c = |mu1|^2/4
    det = AffineDetector(a=np.array([-0.25, -0.25]), c=0.125, epsilon_star=math.exp(-0.5 / 8))
    nu0 = Gaussian(np.zeros(2), np.eye(2))
    gamma = 150.0
    b = calibrate_threshold_mc(det, nu0, gamma, trials=150, seed=3)
    streams = [SeededStream(3, (3 << 40) | t) for t in range(150)]
    from robustcusum.cusum import alarm_times_gaussian

    times = alarm_times_gaussian(det, nu0, streams, b, int(50 * gamma))
    arl = float(np.mean(np.minimum(times, int(50 * gamma))))
    assert 0.95 * gamma <= arl <= 1.05 * gamma


def test_calibration_monotone_in_gamma():
    det = AffineDetector(a=np.array([-0.2]), c=0.04, epsilon_star=math.exp(-0.16 / 8))
    nu0 = Gaussian(np.zeros(1), np.eye(1))
    b_small = calibrate_threshold_mc(det, nu0, 100.0, trials=120, seed=5)
    b_large = calibrate_threshold_mc(det, nu0, 1000.0, trials=120, seed=5)
    assert b_large > b_small


def test_calibrated_threshold_below_certified_bound_on_desk_l1():
    # the certified threshold is conservative: Monte Carlo calibration at the
    # same ARL target lands well below it
    from robustcusum import L1Ball, SingletonVector, build_affine_detector, solve_lfp

    d, gamma = 10, 500.0
    sol = solve_lfp(SingletonVector(np.zeros(d)), L1Ball(np.ones(d), 0.9 * d), np.eye(d))
    det = build_affine_detector(sol, np.eye(d))
    b_cal = calibrate_threshold_mc(det, Gaussian(np.zeros(d), np.eye(d)), gamma, trials=200, seed=17)
    assert b_cal <= threshold_from_gamma(gamma, sol.epsilon_star) + 0.5


def test_calibration_bracket_failure_reports_endpoints():
    det = ConstantDetector(-1.0)  # never alarms: ARL is the horizon everywhere
    nu0 = Gaussian(np.zeros(1), np.eye(1))
    with pytest.raises(CalibrationError) as exc:
        calibrate_threshold_mc(det, nu0, 150.0, trials=100, seed=1, horizon=500)
    assert exc.value.arl_low is not None


def test_calibration_requires_enough_trials():
    det = ConstantDetector(1.0)
    with pytest.raises(DomainError, match="100"):
        calibrate_threshold_mc(det, Gaussian(np.zeros(1), np.eye(1)), 100.0, trials=50, seed=0)
