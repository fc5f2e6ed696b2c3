import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from robustcusum import (
    ClassSetup,
    DomainError,
    Gaussian,
    GeneralZ,
    MatrixInterval,
    SeededStream,
    SingletonMean,
    SingletonPSD,
    SpectralBall,
    build_quadratic_detector,
    compute_delta,
    default_theta_star,
    eval_phi_big,
    llr_detector,
    phi_support,
    sample,
    solve_saddle,
)
from robustcusum.quadratic import _phi_pieces


def _singleton_setup(d, u=None, theta=None):
    return ClassSetup(SingletonPSD(np.eye(d) if theta is None else theta), SingletonMean(np.zeros(d) if u is None else u))


# -- delta ------------------------------------------------------------------


def test_delta_zero_for_matched_singleton():
    assert compute_delta(SingletonPSD(np.eye(3)), np.eye(3)) == pytest.approx(0.0, abs=1e-12)


def test_delta_for_scaled_identity_interval():
    # members c*I for c in [0.5, 1]: worst member is c = 0.5
    s = MatrixInterval(0.5 * np.eye(3), np.eye(3), 0.0, 0.5)
    assert compute_delta(s, np.eye(3)) == pytest.approx(1.0 - math.sqrt(0.5), abs=1e-9)


def test_delta_for_spectral_ball_is_one():
    assert compute_delta(SpectralBall(0.5, 3), 0.5 * np.eye(3)) == pytest.approx(1.0, abs=1e-9)


def test_delta_rejects_non_dominating_theta_star():
    with pytest.raises(DomainError, match="eigenvalue"):
        compute_delta(SingletonPSD(np.eye(2)), 0.5 * np.eye(2))


def test_default_theta_star_interval_falls_back_to_envelope():
    # indefinite direction: neither endpoint dominates the other
    v = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            if i != j:
                v[i, j] = math.exp(-((i - j) ** 2))
    s = MatrixInterval(np.eye(4), v, 0.5, 1.0)
    star = default_theta_star(s)
    for sigma in np.linspace(0.5, 1.0, 21):
        assert np.linalg.eigvalsh(star - s.member(float(sigma)))[0] >= -1e-9


def test_default_theta_star_interval_uses_endpoint_when_dominant():
    s = MatrixInterval(0.5 * np.eye(3), np.eye(3), 0.0, 0.5)  # direction PSD: top endpoint dominates
    assert np.allclose(default_theta_star(s), np.eye(3))


# -- phi support ------------------------------------------------------------


def test_phi_support_singleton_zero_mean_reads_corner():
    lift = SingletonMean(np.zeros(2))
    y = np.diag([5.0, 6.0, 7.0])
    assert phi_support(lift, y) == pytest.approx(7.0, abs=1e-12)
    assert phi_support(lift, np.zeros((3, 3))) == 0.0


def test_phi_support_singleton_hand_case():
    lift = SingletonMean(np.array([1.0, 0.0]))
    assert phi_support(lift, np.eye(3)) == pytest.approx(2.0, abs=1e-12)


def test_general_z_oracle_validated():
    ok = GeneralZ(lambda y: (0.0, np.diag([0.0, 0.0, 1.0])), dim=2)
    val, z = ok.support_with_argmax(np.zeros((3, 3)))
    assert z[-1, -1] == 1.0
    bad = GeneralZ(lambda y: (0.0, np.diag([0.0, 0.0, 2.0])), dim=2)
    with pytest.raises(DomainError, match="bottom-right"):
        bad.support_with_argmax(np.zeros((3, 3)))


# -- bounding function ------------------------------------------------------


def test_phi_big_vanishes_at_origin():
    setup = _singleton_setup(3)
    assert eval_phi_big(np.zeros(3), np.zeros((3, 3)), np.eye(3), setup) == pytest.approx(0.0, abs=1e-14)


def test_phi_big_d1_hand_expansion():
    setup = _singleton_setup(1)
    eta = 0.37
    val = eval_phi_big(np.array([eta]), np.zeros((1, 1)), np.eye(1), setup)
    assert val == pytest.approx(0.5 * eta * eta, abs=1e-12)


def test_phi_big_matches_gaussian_log_moment_at_theta_star():
    # with delta=0 and Theta=Theta*, the bound is the exact log-MGF
    rng = np.random.default_rng(2)
    d = 3
    u = rng.normal(size=d) * 0.4
    setup = _singleton_setup(d, u=u)
    for _ in range(20):
        h = rng.normal(size=d) * 0.3
        a = rng.normal(size=(d, d))
        big_h = (a + a.T) / 2 * 0.15
        val = eval_phi_big(h, big_h, np.eye(d), setup)
        x = sample(Gaussian(u, np.eye(d)), SeededStream(3, 1), 200_000)
        quad = 0.5 * np.einsum("ij,ij->i", x @ big_h, x) + x @ h
        mc = math.log(float(np.mean(np.exp(quad))))
        assert val == pytest.approx(mc, abs=4e-2)


def test_phi_big_midpoint_convexity():
    rng = np.random.default_rng(7)
    d = 3
    setup = ClassSetup(SpectralBall(0.6, d), SingletonMean(rng.normal(size=d) * 0.2))
    for _ in range(200):
        def rand_point():
            h = rng.normal(size=d) * 0.5
            a = rng.normal(size=(d, d))
            return h, (a + a.T) / 2 * 0.2
        h1, b1 = rand_point()
        h2, b2 = rand_point()
        theta = setup.uset.sample_member(rng)
        v1 = eval_phi_big(h1, b1, theta, setup)
        v2 = eval_phi_big(h2, b2, theta, setup)
        vm = eval_phi_big((h1 + h2) / 2, (b1 + b2) / 2, theta, setup)
        assert vm <= (v1 + v2) / 2 + 1e-9


def test_phi_big_linear_in_theta():
    rng = np.random.default_rng(8)
    d = 4
    setup = ClassSetup(SpectralBall(0.5, d), SingletonMean(np.zeros(d)))
    h = rng.normal(size=d) * 0.2
    a = rng.normal(size=(d, d))
    big_h = (a + a.T) / 2 * 0.2
    t1 = setup.uset.sample_member(rng)
    t2 = setup.uset.sample_member(rng)
    lhs = eval_phi_big(h, big_h, t1, setup) - eval_phi_big(h, big_h, t2, setup)
    rhs = 0.5 * float(np.sum((t1 - t2) * big_h))
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_phi_big_domain_error_near_unit_whitened_norm():
    setup = _singleton_setup(2)
    with pytest.raises(DomainError, match="spectral norm"):
        eval_phi_big(np.zeros(2), 1.0000001 * np.eye(2), np.eye(2), setup)


def test_subgradients_match_finite_differences():
    # central differences at random smooth points; the spectral-norm term is
    # only sampled where the top eigenvalue is clearly separated
    rng = np.random.default_rng(12)
    d = 3
    setups = [
        _singleton_setup(d, u=rng.normal(size=d) * 0.3),
        ClassSetup(SpectralBall(0.5, d), SingletonMean(np.zeros(d))),
        ClassSetup(MatrixInterval(np.eye(d), np.diag([0.0, 0.3, -0.2]), 0.0, 1.0), SingletonMean(np.zeros(d))),
    ]
    checked = 0
    step = 1e-5
    while checked < 100:
        setup = setups[checked % len(setups)]
        a = rng.normal(size=d) * 0.3
        m = rng.normal(size=(d, d))
        big_a = (m + m.T) / 2 * 0.2
        w = setup.sqrt @ big_a @ setup.sqrt
        lam = np.abs(np.linalg.eigvalsh(w))
        lam_sorted = np.sort(lam)
        if setup.delta > 0 and lam_sorted[-1] - lam_sorted[-2] <= 1e-3:
            continue
        val, ga, gA, _ = _phi_pieces(setup, a, big_a, theta=None)
        i = int(rng.integers(d))
        ap, am = a.copy(), a.copy()
        ap[i] += step
        am[i] -= step
        vp, *_ = _phi_pieces(setup, ap, big_a, theta=None, want_grad=False)
        vm, *_ = _phi_pieces(setup, am, big_a, theta=None, want_grad=False)
        fd = (vp - vm) / (2 * step)
        assert ga[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)
        j, k = sorted(rng.integers(d, size=2))
        pert = np.zeros((d, d))
        pert[j, k] = pert[k, j] = 1.0  # symmetric coordinate direction
        vp, *_ = _phi_pieces(setup, a, big_a + step * pert, theta=None, want_grad=False)
        vm, *_ = _phi_pieces(setup, a, big_a - step * pert, theta=None, want_grad=False)
        fd = (vp - vm) / (2 * step)
        expected = float(np.sum(gA * pert))
        assert expected == pytest.approx(fd, rel=1e-4, abs=1e-7)
        checked += 1


# -- saddle solver ----------------------------------------------------------


def test_saddle_identical_classes_is_trivial():
    setup = _singleton_setup(2)
    sol = solve_saddle(setup, setup)
    assert sol.sv == pytest.approx(0.0, abs=1e-12)
    assert sol.epsilon_star == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(sol.h_star, 0.0) and np.allclose(sol.H_star, 0.0)
    det = build_quadratic_detector(sol, setup, setup)
    for x in ([0.4, -1.0], [2.0, 2.0]):
        assert det.phi(x) == pytest.approx(0.0, abs=1e-12)


def _best_affine_risk(u0, u1, sigma):
    """Brute-force oracle: grid over scaled likelihood-ratio detectors
    a = -s * Sigma^{-1}(u1-u0) and offsets c, minimizing the worse of the two
    closed-form exponential moments (exp(-phi) under u0, exp(+phi) under u1)."""
    g = Gaussian(np.zeros(len(u0)), sigma)
    direction = g.solve_covariance(u1 - u0)
    best = math.inf
    for s in np.linspace(0.05, 1.2, 120):
        a = -s * direction
        quad = 0.5 * float(a @ sigma @ a)
        for c in np.linspace(-3.0, 3.0, 241):
            m0 = math.exp(-float(a @ u0) - c + quad)
            m1 = math.exp(float(a @ u1) + c + quad)
            best = min(best, max(m0, m1))
    return best


@pytest.mark.parametrize("dsq", [2.0, 8.0])
def test_saddle_degenerate_singleton_matches_affine_oracle(dsq):
    d = 3
    u1 = np.zeros(d)
    u1[0] = math.sqrt(dsq)
    target = math.exp(-dsq / 8.0)
    oracle = _best_affine_risk(np.zeros(d), u1, np.eye(d))
    assert oracle == pytest.approx(target, abs=2e-3)  # validates the target itself
    s0 = _singleton_setup(d)
    s1 = _singleton_setup(d, u=u1)
    sol = solve_saddle(s0, s1)
    assert sol.gap <= 1e-4
    assert math.exp(sol.sv) == pytest.approx(target, abs=1e-2)


def test_saddle_spectral_ball_with_support_brute_force():
    d = 2
    s0 = _singleton_setup(d)
    s1 = ClassSetup(SpectralBall(0.5, d), SingletonMean(np.zeros(d)))
    sol = solve_saddle(s0, s1)
    assert sol.sv < 0.0
    assert sol.gap <= 1e-4
    # exact inner max dominates 10^4 sampled members of U1
    rng = np.random.default_rng(4)
    value, arg = s1.uset.support_linear(sol.H_star)
    sampled = max(float(np.sum(s1.uset.sample_member(rng) * sol.H_star)) for _ in range(10_000))
    assert value >= sampled - 1e-9
    assert s1.uset.contains(arg, tol=1e-9)


def test_saddle_value_monotone_in_ball_radius():
    d = 2
    s0 = _singleton_setup(d)
    svs = []
    for rho in (0.3, 0.5):
        s1 = ClassSetup(SpectralBall(rho, d), SingletonMean(np.zeros(d)))
        svs.append(solve_saddle(s0, s1).sv)
    assert svs[1] >= svs[0] - 1e-6  # larger post-change set cannot be easier


def test_saddle_rejects_bad_beta_and_dims():
    s2 = _singleton_setup(2)
    s3 = _singleton_setup(3)
    with pytest.raises(DomainError, match="beta"):
        solve_saddle(s2, s2, beta=1.0)
    with pytest.raises(DomainError, match="dimensions"):
        solve_saddle(s2, s3)


def test_saddle_feasibility_of_solution():
    d = 3
    s0 = _singleton_setup(d)
    s1 = ClassSetup(SpectralBall(0.5, d), SingletonMean(np.zeros(d)))
    sol = solve_saddle(s0, s1)
    for setup in (s0, s1):
        w = setup.sqrt @ sol.H_star @ setup.sqrt
        assert np.max(np.abs(np.linalg.eigvalsh((w + w.T) / 2))) <= 0.99 + 1e-8
    assert s0.uset.contains(sol.theta0_star, tol=1e-8)
    assert s1.uset.contains(sol.theta1_star, tol=1e-8)
    assert sol.epsilon_star == math.exp(sol.sv)
    assert sol.gap >= 0.0


def test_detector_moment_bounds_by_monte_carlo():
    d = 3
    s0 = _singleton_setup(d)
    s1 = ClassSetup(SpectralBall(0.5, d), SingletonMean(np.zeros(d)))
    sol = solve_saddle(s0, s1)
    det = build_quadratic_detector(sol, s0, s1)
    bound = math.exp(sol.sv)
    rng = np.random.default_rng(6)
    # pre-change member
    x = sample(Gaussian(np.zeros(d), np.eye(d)), SeededStream(1, 0), 50_000)
    vals = np.exp(-np.array([det.phi(row) for row in x[:2000]]))
    assert vals.mean() <= bound + 3 * vals.std(ddof=1) / math.sqrt(len(vals))
    for k in range(10):
        theta = s1.uset.sample_member(rng) + 1e-9 * np.eye(d)
        x = sample(Gaussian(np.zeros(d), theta), SeededStream(2, k), 20_000)
        vals = np.exp(det.increments(x) * -1.0)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert vals.mean() <= bound + 3 * se


def test_detector_two_evaluation_paths_agree():
    d = 3
    s0 = _singleton_setup(d)
    s1 = ClassSetup(SpectralBall(0.5, d), SingletonMean(np.zeros(d)))
    sol = solve_saddle(s0, s1)
    det = build_quadratic_detector(sol, s0, s1)
    kappa = 0.5 * (
        eval_phi_big(-sol.h_star, -sol.H_star, sol.theta0_star, s0)
        - eval_phi_big(sol.h_star, sol.H_star, sol.theta1_star, s1)
    )
    rng = np.random.default_rng(10)
    for _ in range(20):
        xi = rng.normal(size=d)
        direct = 0.5 * float(xi @ sol.H_star @ xi) + float(sol.h_star @ xi) + kappa
        assert det.phi(xi) == pytest.approx(direct, abs=1e-12)


def test_singleton_pair_detector_balances_at_midpoint():
    d = 2
    u1 = np.array([1.3, -0.4])
    s0 = _singleton_setup(d)
    s1 = _singleton_setup(d, u=u1)
    sol = solve_saddle(s0, s1)
    det = build_quadratic_detector(sol, s0, s1)
    assert det.phi(u1 / 2.0) == pytest.approx(0.0, abs=1e-3)


def test_llr_detector_matches_log_density_ratio():
    rng = np.random.default_rng(13)
    d = 3
    a0 = rng.normal(size=(d, d))
    a1 = rng.normal(size=(d, d))
    g0 = Gaussian(rng.normal(size=d), a0 @ a0.T + np.eye(d))
    g1 = Gaussian(rng.normal(size=d), a1 @ a1.T + np.eye(d))
    det = llr_detector(g0, g1)
    xs = rng.normal(size=(50, d))
    expected = multivariate_normal(g1.mean, g1.covariance).logpdf(xs) - multivariate_normal(
        g0.mean, g0.covariance
    ).logpdf(xs)
    assert np.allclose(det.increments(xs), expected, atol=1e-10)


def test_class_setup_rejects_uncovered_delta():
    with pytest.raises(DomainError, match="delta"):
        ClassSetup(SpectralBall(0.5, 2), SingletonMean(np.zeros(2)), theta_star=0.5 * np.eye(2), delta=0.1)


def test_solve_saddle_requires_singleton_lifts():
    d = 2
    oracle = GeneralZ(lambda y: (float(y[-1, -1]), np.diag([0.0, 0.0, 1.0])), dim=d)
    s0 = ClassSetup(SingletonPSD(np.eye(d)), oracle)
    s1 = _singleton_setup(d)
    with pytest.raises(DomainError, match="singleton"):
        solve_saddle(s0, s1)
