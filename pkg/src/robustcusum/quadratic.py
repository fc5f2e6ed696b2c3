"""Quadratic detectors for joint mean/covariance uncertainty.

The detector phi(xi) = xi^T H xi / 2 + h^T xi + kappa is designed so that its
exponential moments under every distribution in the pre-change class (with
exp(-phi)) and the post-change class (with exp(+phi)) are bounded by
exp(sv), where sv is the value of a convex-concave saddle problem over
(h, H) and the class covariances (Theta0, Theta1).

Structure of the saddle problem exploited here:

* The Theta-dependence of the bounding function is linear (only the term
  Tr((Theta - Theta*) A) / 2), so the inner maximization is an exact support
  function call on the covariance uncertainty set and the outer problem is a
  plain convex minimization of the resulting max-function g(h, H).
* (h, H) is constrained only through H: eigenvalues of the whitened matrix
  Theta*^{1/2} H Theta*^{1/2} must lie in [-beta, beta] for each class.
  Projection is eigenvalue clipping in each whitened basis, alternated
  between the two classes (cyclic projection).
* For singleton mean lifts the objective is an explicit strongly convex
  quadratic in h at fixed H, so h is eliminated exactly by a linear solve.
  This yields rigorous duality-gap certificates: for any fixed feasible
  (Theta0, Theta1), the reduced objective G(H) = min_h F(h, H) is convex and
  G(H) + min_{H' feasible} <grad, H' - H> lower-bounds the saddle value.

The outer loop is projected subgradient descent with Polyak steps driven by
the best certified lower bound, with iterate and inner-maximizer averaging;
certificates are refreshed periodically until the duality gap passes the
requested tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError
from .gaussian import Gaussian, symmetrize
from .sets import MatrixInterval, MatrixSet, SingletonPSD, SpectralBall

_DOMAIN_MARGIN = 1e-9
_DOMINATION_TOL = 1e-9
# sigma grid used to audit interval sets; endpoints included.
_INTERVAL_DELTA_GRID = 17


# ---------------------------------------------------------------------------
# mean lifts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SingletonMean:
    """Lift of a single known mean u: Z = {[u;1][u;1]^T}."""

    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float).reshape(-1)
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def dim(self):
        return self.u.shape[0]

    def lifted(self) -> np.ndarray:
        return np.concatenate([self.u, [1.0]])

    def support_with_argmax(self, y: np.ndarray) -> tuple[float, np.ndarray]:
        z = self.lifted()
        return float(z @ y @ z), np.outer(z, z)


@dataclass(frozen=True)
class GeneralZ:
    """Oracle seam for a general convex compact lift set.

    `oracle` maps a symmetric (d+1)x(d+1) direction to (max value, attaining
    member).  Members must be PSD with bottom-right entry 1.
    """

    oracle: object
    dim: int

    def support_with_argmax(self, y: np.ndarray) -> tuple[float, np.ndarray]:
        value, z = self.oracle(y)
        z = np.asarray(z, dtype=float)
        n = self.dim + 1
        if z.shape != (n, n):
            raise DomainError(f"lift argmax must be {n}x{n}, got {z.shape}")
        if abs(z[-1, -1] - 1.0) > 1e-9:
            raise DomainError(f"lift argmax bottom-right entry must be 1, got {z[-1, -1]!r}")
        if np.linalg.eigvalsh((z + z.T) / 2.0)[0] < -1e-9:
            raise DomainError("lift argmax must be PSD")
        return float(value), z


def phi_support(lift, y) -> float:
    """Support function of the lift set: max over members Z of Tr(Z Y)."""
    ym = symmetrize(y, rel_tol=1e-9, what="Y")
    value, _ = lift.support_with_argmax(ym)
    return value


# ---------------------------------------------------------------------------
# class setup: (U, Theta*, delta, Z)
# ---------------------------------------------------------------------------


def _psd_sqrt(mat):
    lam, q = np.linalg.eigh(mat)
    lam = np.maximum(lam, 0.0)
    return (q * np.sqrt(lam)) @ q.T


def _audit_members(uset: MatrixSet) -> list[np.ndarray]:
    """Deterministic member sample used by domination / delta audits."""
    members = list(uset.extreme_members())
    if isinstance(uset, SpectralBall):
        members.append(np.zeros((uset.dim, uset.dim)))
        rng = np.random.Generator(np.random.Philox(key=np.array([0xAD17, 0], dtype=np.uint64)))
        for k in range(1, min(uset.dim, 4) + 1):
            z = rng.standard_normal((uset.dim, k))
            q, _ = np.linalg.qr(z)
            members.append(uset.radius * (q @ q.T))
    elif isinstance(uset, MatrixInterval):
        for s in np.linspace(uset.sigma_lo, uset.sigma_hi, _INTERVAL_DELTA_GRID)[1:-1]:
            members.append(uset.member(float(s)))
    return members


def _check_domination(theta_star, members, what="theta_star"):
    for idx, theta in enumerate(members):
        worst = float(np.linalg.eigvalsh(theta_star - theta)[0])
        if worst < -_DOMINATION_TOL:
            raise DomainError(
                f"{what} does not dominate member #{idx}: most negative eigenvalue "
                f"of (theta_star - member) is {worst:.3e}"
            )


def default_theta_star(uset: MatrixSet) -> np.ndarray:
    """Dominating matrix for the set.

    Singleton: the point.  Spectral ball: radius * I.  Interval: the endpoint
    with larger trace when it dominates the whole segment; otherwise the
    certified envelope base + sigma_mid * V + (sigma_spread/2) * |V|, which
    dominates every member even for indefinite directions V.
    """
    if isinstance(uset, SingletonPSD):
        return uset.matrix.copy()
    if isinstance(uset, SpectralBall):
        return uset.radius * np.eye(uset.dim)
    if isinstance(uset, MatrixInterval):
        lo, hi = uset.extreme_members()
        endpoint = hi if np.trace(hi) >= np.trace(lo) else lo
        try:
            _check_domination(endpoint, _audit_members(uset))
            return endpoint
        except DomainError:
            pass
        mid = 0.5 * (uset.sigma_lo + uset.sigma_hi)
        spread = 0.5 * (uset.sigma_hi - uset.sigma_lo)
        lam, q = np.linalg.eigh(uset.direction)
        abs_v = (q * np.abs(lam)) @ q.T
        return uset.member(mid) + spread * abs_v
    raise DomainError(f"no default dominating matrix for set type {type(uset).__name__}")


def compute_delta(uset: MatrixSet, theta_star) -> float:
    """Smallest certified delta with ||Theta^{1/2} Theta*^{-1/2} - I|| <= delta
    over the audited members, clamped to [0, 2].

    The spectral ball returns 1: the PSD-cone boundary (Theta -> 0) is in the
    closure and already attains ||0 - I|| = 1, and no member exceeds it.
    """
    theta_star = symmetrize(theta_star, what="theta_star")
    members = _audit_members(uset)
    _check_domination(theta_star, members)
    lam, q = np.linalg.eigh(theta_star)
    if lam[0] <= 0:
        raise DomainError("theta_star must be positive definite")
    star_inv_sqrt = (q / np.sqrt(lam)) @ q.T
    worst = 0.0
    for theta in members:
        m = _psd_sqrt(theta) @ star_inv_sqrt
        worst = max(worst, float(np.linalg.norm(m - np.eye(m.shape[0]), 2)))
    if isinstance(uset, SpectralBall):
        worst = max(worst, 1.0)
    return float(min(max(worst, 0.0), 2.0))


class ClassSetup:
    """One class's data: covariance set U, dominating Theta*, delta, mean lift.

    Caches the symmetric square root of Theta* and its inverse; those define
    the whitened basis every feasibility and objective computation works in.
    """

    def __init__(self, uset: MatrixSet, lift, theta_star=None, delta=None):
        self.uset = uset
        self.lift = lift
        if getattr(lift, "dim", uset.dim) != uset.dim:
            raise DomainError(f"lift dimension {lift.dim} does not match set dimension {uset.dim}")
        self.theta_star = (
            symmetrize(theta_star, what="theta_star") if theta_star is not None else default_theta_star(uset)
        )
        if self.theta_star.shape != (uset.dim, uset.dim):
            raise DomainError(f"theta_star must be {uset.dim}x{uset.dim}, got {self.theta_star.shape}")
        self.delta = float(delta) if delta is not None else compute_delta(uset, self.theta_star)
        if not 0.0 <= self.delta <= 2.0:
            raise DomainError(f"delta must lie in [0, 2], got {self.delta}")
        lam, q = np.linalg.eigh(self.theta_star)
        if lam[0] <= 0:
            raise DomainError("theta_star must be positive definite")
        self.sqrt = (q * np.sqrt(lam)) @ q.T
        self.inv_sqrt = (q / np.sqrt(lam)) @ q.T
        self.theta_star_inv = (q / lam) @ q.T
        self.theta_star_min_eig = float(lam[0])
        self.validate()

    @property
    def dim(self):
        return self.uset.dim

    def validate(self):
        members = _audit_members(self.uset)
        _check_domination(self.theta_star, members)
        eye = np.eye(self.dim)
        for idx, theta in enumerate(members):
            dist = float(np.linalg.norm(_psd_sqrt(theta) @ self.inv_sqrt - eye, 2))
            if dist > self.delta + 1e-9:
                raise DomainError(
                    f"delta={self.delta:g} does not cover member #{idx}: "
                    f"||Theta^(1/2) Theta*^(-1/2) - I|| = {dist:.6g}"
                )


# ---------------------------------------------------------------------------
# the bounding function Phi and its gradients
# ---------------------------------------------------------------------------


def _phi_pieces(setup: ClassSetup, a, big_a, theta=None, want_grad=True):
    """Value (and gradients w.r.t. its own arguments) of the bounding function
    at (a, A), with Theta either fixed or maximized exactly over the set.

    Returns (value, grad_a, grad_A, theta_used).
    """
    d = setup.dim
    s_mat, s_inv = setup.sqrt, setup.inv_sqrt
    w = symmetrize(s_mat @ big_a @ s_mat, rel_tol=np.inf)
    lam, q = np.linalg.eigh(w)
    spec = float(np.max(np.abs(lam)))
    if spec >= 1.0 - _DOMAIN_MARGIN:
        raise DomainError(
            f"whitened detector matrix has spectral norm {spec:.9f} >= 1; "
            "(h, H) is outside the feasible domain"
        )

    # log-det barrier
    value = -0.5 * float(np.sum(np.log1p(-lam)))
    inv_one_minus = q @ np.diag(1.0 / (1.0 - lam)) @ q.T
    grad_a_acc = np.zeros(d)
    grad_A_acc = 0.5 * (s_mat @ inv_one_minus @ s_mat) if want_grad else None

    # linear Theta term (the only Theta dependence)
    if theta is None:
        sup_val, theta_used = setup.uset.support_linear(big_a)
        value += 0.5 * (sup_val - float(np.sum(setup.theta_star * big_a)))
    else:
        theta_used = theta
        value += 0.5 * float(np.sum((theta_used - setup.theta_star) * big_a))
    if want_grad:
        grad_A_acc = grad_A_acc + 0.5 * (theta_used - setup.theta_star)

    # delta buffer against members below Theta*
    if setup.delta > 0.0:
        kd = setup.delta * (2.0 + setup.delta) / 2.0
        frob_sq = float(np.sum(lam * lam))
        value += kd * frob_sq / (1.0 - spec)
        if want_grad and frob_sq > 0.0:
            grad_A_acc = grad_A_acc + kd * (2.0 / (1.0 - spec)) * (s_mat @ w @ s_mat)
            # subgradient of the spectral norm, averaged over the (numerically)
            # degenerate top eigenspace so descent works on symmetric iterates
            top = np.abs(lam) >= spec - 1e-8 * (1.0 + spec)
            sq = s_mat @ q[:, top]
            signs = np.sign(lam[top])
            signs[signs == 0.0] = 1.0
            norm_sub = (sq * signs) @ sq.T / float(np.count_nonzero(top))
            grad_A_acc = grad_A_acc + kd * frob_sq / (1.0 - spec) ** 2 * norm_sub

    # support-function term on the lifted second-moment block
    r_inv = s_mat @ inv_one_minus @ s_mat  # (Theta*^{-1} - A)^{-1}
    c_mat = np.concatenate([big_a, a[:, None]], axis=1)  # d x (d+1)
    block = np.zeros((d + 1, d + 1))
    block[:d, :d] = big_a
    block[:d, d] = a
    block[d, :d] = a
    y = block + c_mat.T @ r_inv @ c_mat
    z_val, z_arg = setup.lift.support_with_argmax(symmetrize(y, rel_tol=np.inf))
    value += 0.5 * z_val
    if want_grad:
        m = r_inv @ c_mat  # d x (d+1)
        mz = m @ z_arg
        grad_A_acc = grad_A_acc + 0.5 * (z_arg[:d, :d] + mz[:, :d] + mz[:, :d].T + mz @ m.T)
        grad_a_acc = z_arg[:d, d] + mz[:, d]

    if want_grad:
        grad_A_acc = symmetrize(grad_A_acc, rel_tol=np.inf)
    return value, grad_a_acc, grad_A_acc, theta_used


def eval_phi_big(h, big_h, theta, setup: ClassSetup) -> float:
    """The bounding function at detector parameters (h, H) and covariance
    Theta, for this class's (Theta*, delta, lift)."""
    h = np.asarray(h, dtype=float).reshape(-1)
    big_h = symmetrize(big_h, what="H")
    theta = symmetrize(theta, what="Theta")
    value, _, _, _ = _phi_pieces(setup, h, big_h, theta=theta, want_grad=False)
    return value


# ---------------------------------------------------------------------------
# feasible-set projection (whitened eigenvalue clipping, cyclic)
# ---------------------------------------------------------------------------


def _clip_in_basis(big_h, setup: ClassSetup, beta: float):
    w = symmetrize(setup.sqrt @ big_h @ setup.sqrt, rel_tol=np.inf)
    lam, q = np.linalg.eigh(w)
    viol = float(np.max(np.abs(lam))) - beta
    if viol <= 0.0:
        return big_h, 0.0
    lam = np.clip(lam, -beta, beta)
    w = (q * lam) @ q.T
    return symmetrize(setup.inv_sqrt @ w @ setup.inv_sqrt, rel_tol=np.inf), viol


def project_feasible(big_h, setups, beta, *, rounds: int = 50, tol: float = 1e-12):
    """Cyclic whitened eigenvalue clipping onto the intersection of the
    per-class spectral boxes."""
    h_cur = symmetrize(big_h, rel_tol=np.inf)
    for _ in range(rounds):
        worst = 0.0
        for setup in setups:
            h_cur, viol = _clip_in_basis(h_cur, setup, beta)
            worst = max(worst, viol)
        if worst <= tol:
            break
    return h_cur


def _feasibility_violation(big_h, setups, beta):
    worst = 0.0
    for setup in setups:
        w = setup.sqrt @ big_h @ setup.sqrt
        lam = np.linalg.eigvalsh(symmetrize(w, rel_tol=np.inf))
        worst = max(worst, float(np.max(np.abs(lam))) - beta)
    return worst


# ---------------------------------------------------------------------------
# saddle solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SaddleOptions:
    gap_tol: float = 1e-4
    max_iters: int = 20_000
    check_every: int = 250
    inner_max_iters: int = 4_000
    projection_rounds: int = 50


@dataclass(frozen=True)
class SaddleSolution:
    h_star: np.ndarray
    H_star: np.ndarray
    theta0_star: np.ndarray
    theta1_star: np.ndarray
    sv: float
    gap: float
    epsilon_star: float
    iterations: int


class _SaddleProblem:
    def __init__(self, setup0: ClassSetup, setup1: ClassSetup, beta: float, rounds: int):
        self.s0, self.s1 = setup0, setup1
        self.beta = beta
        self.rounds = rounds
        self.d = setup0.dim
        # uniform lower bound on the h-Hessian eigenvalues over the feasible set
        self.h_strong = (setup0.theta_star_min_eig + setup1.theta_star_min_eig) / (2.0 * (1.0 + beta))

    def project(self, big_h):
        return project_feasible(big_h, (self.s0, self.s1), self.beta, rounds=self.rounds)

    def g_value_grad(self, h, big_h):
        """max-form objective g with a subgradient and the attaining Thetas."""
        v0, ga0, gA0, th0 = _phi_pieces(self.s0, -h, -big_h, theta=None)
        v1, ga1, gA1, th1 = _phi_pieces(self.s1, h, big_h, theta=None)
        val = 0.5 * (v0 + v1)
        gh = 0.5 * (ga1 - ga0)
        gH = 0.5 * (gA1 - gA0)
        return val, gh, gH, th0, th1

    def f_fixed(self, h, big_h, th0, th1, want_grad=True):
        """Objective at fixed (Theta0, Theta1)."""
        v0, ga0, gA0, _ = _phi_pieces(self.s0, -h, -big_h, theta=th0, want_grad=want_grad)
        v1, ga1, gA1, _ = _phi_pieces(self.s1, h, big_h, theta=th1, want_grad=want_grad)
        val = 0.5 * (v0 + v1)
        if not want_grad:
            return val, None, None
        return val, 0.5 * (ga1 - ga0), 0.5 * (gA1 - gA0)

    def exact_h(self, big_h):
        """argmin over h of the objective at fixed H (singleton lifts only).

        The h-dependence is quadratic with Hessian (R0^{-1} + R1^{-1}) / 2,
        independent of the Theta chosen in the linear term.
        """
        u0, u1 = self.s0.lift.u, self.s1.lift.u
        r0_inv = self._r_inv(self.s0, -big_h)
        r1_inv = self._r_inv(self.s1, big_h)
        lhs = 0.5 * (r0_inv + r1_inv)
        rhs = -0.5 * ((u1 - u0) + r0_inv @ (big_h @ u0) + r1_inv @ (big_h @ u1))
        return np.linalg.solve(lhs, rhs)

    @staticmethod
    def _r_inv(setup, big_a):
        w = symmetrize(setup.sqrt @ big_a @ setup.sqrt, rel_tol=np.inf)
        lam, q = np.linalg.eigh(w)
        if np.max(np.abs(lam)) >= 1.0 - _DOMAIN_MARGIN:
            raise DomainError("detector matrix outside the feasible domain")
        return setup.sqrt @ (q / (1.0 - lam)) @ q.T @ setup.sqrt

    def singleton_lifts(self):
        return isinstance(self.s0.lift, SingletonMean) and isinstance(self.s1.lift, SingletonMean)

    def dual_lower_bound(self, h, big_h, gh, gH, value):
        """Certified lower bound on min over the feasible set at fixed Thetas.

        Two valid bounds, the better one wins:

        * linearization minimized exactly over one class's spectral box (a
          superset of the intersection, so still a lower bound) -- tight when
          the gradient vanishes or the box binds;
        * strong convexity of the h-eliminated objective: the log-det term
          alone gives curvature mu in H uniformly over the box, so the
          unconstrained quadratic minorant bounds the minimum by
          F - ||gH||^2 / (2 mu) -- tight even at nonsmooth optima, where no
          single subgradient vanishes.

        The residual h-gradient (h is eliminated by an exact linear solve) is
        absorbed via the uniform strong convexity in h, plus a lump slack for
        the epsilon-subgradient band used on the spectral-norm term.
        """
        base = value - float(gh @ gh) / (2.0 * self.h_strong) - float(np.linalg.norm(gh)) - 1e-9
        best = -math.inf
        for setup in (self.s0, self.s1):
            m = setup.inv_sqrt @ gH @ setup.inv_sqrt
            nuclear = float(np.sum(np.abs(np.linalg.eigvalsh(symmetrize(m, rel_tol=np.inf)))))
            lin_min = -self.beta * nuclear
            best = max(best, base + lin_min - float(np.sum(gH * big_h)))
        mu = (self.s0.theta_star_min_eig**2 + self.s1.theta_star_min_eig**2) / (4.0 * (1.0 + self.beta) ** 2)
        best = max(best, base - float(np.sum(gH * gH)) / (2.0 * mu))
        return best

    def inner_min(self, th0, th1, h0, big_h0, max_iters):
        """Minimize at fixed Thetas; returns (value, h, H, certified bound).

        Projected gradient with an Armijo sufficient-decrease test on the
        h-eliminated objective; exits when no projected step of any length
        still decreases the value (numerical stationarity).
        """
        big_h = self.project(big_h0)
        h = self.exact_h(big_h) if self.singleton_lifts() else np.array(h0, dtype=float)
        val, gh, gH = self.f_fixed(h, big_h, th0, th1)
        step = 1.0
        scale = 1.0 + float(np.linalg.norm(big_h))
        for _ in range(max_iters):
            accepted = False
            for _bt in range(30):
                cand_h_mat = self.project(big_h - step * gH)
                move = float(np.linalg.norm(cand_h_mat - big_h))
                if move <= 1e-15 * scale:
                    break  # projected step is numerically a no-op
                if self.singleton_lifts():
                    cand_h = self.exact_h(cand_h_mat)
                else:
                    cand_h = h - step * gh
                cand_val, cand_gh, cand_gH = self.f_fixed(cand_h, cand_h_mat, th0, th1)
                if cand_val <= val - 1e-4 * move * move / step:
                    h, big_h, val, gh, gH = cand_h, cand_h_mat, cand_val, cand_gh, cand_gH
                    accepted = True
                    step *= 1.5
                    break
                step *= 0.5
            if not accepted:
                break
        bound = self.dual_lower_bound(h, big_h, gh, gH, val)
        return val, h, big_h, bound


def solve_saddle(setup0: ClassSetup, setup1: ClassSetup, beta: float = 0.99, opts: SaddleOptions | None = None) -> SaddleSolution:
    """Solve the detector-design saddle problem for two class setups.

    `beta` bounds the whitened detector matrix away from the log-det domain
    boundary; it must lie strictly inside (0, 1).  Raises ConvergenceError
    with the last iterate when the duality gap is still above
    `opts.gap_tol` after `opts.max_iters` outer iterations.
    """
    opts = opts or SaddleOptions()
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {beta}")
    if setup0.dim != setup1.dim:
        raise DomainError(f"class dimensions differ: {setup0.dim} vs {setup1.dim}")
    prob = _SaddleProblem(setup0, setup1, beta, opts.projection_rounds)
    if not prob.singleton_lifts():
        raise DomainError("solve_saddle currently requires singleton mean lifts for both classes")
    d = setup0.dim

    h = np.zeros(d)
    big_h = np.zeros((d, d))
    val, gh, gH, th0, th1 = prob.g_value_grad(h, big_h)
    best = {"h": h, "H": big_h, "g": val, "th0": th0, "th1": th1}
    sum_h, sum_H = h.copy(), big_h.copy()
    sum_th0, sum_th1 = th0.copy(), th1.copy()
    n_avg = 1
    q_best = -math.inf
    gap = math.inf
    iterations = 0

    def consider(cand_h, cand_H):
        nonlocal best
        v, _gh, _gH, t0, t1 = prob.g_value_grad(cand_h, cand_H)
        if v < best["g"]:
            best = {"h": cand_h, "H": cand_H, "g": v, "th0": t0, "th1": t1}
        return v

    warm = [None, None]  # per-candidate inner warm starts

    def certify():
        """Refresh the certified lower bound; may also improve the primal."""
        nonlocal q_best, gap
        candidates = [
            (best["th0"], best["th1"]),
            (sum_th0 / n_avg, sum_th1 / n_avg),
        ]
        for slot, (c_th0, c_th1) in enumerate(candidates):
            wh, wH = warm[slot] if warm[slot] is not None else (best["h"], best["H"])
            _, ih, iH, bound = prob.inner_min(c_th0, c_th1, wh, wH, opts.inner_max_iters)
            warm[slot] = (ih, iH)
            q_best = max(q_best, bound)
            consider(ih, iH)
        gap = best["g"] - q_best
        return gap

    if certify() <= opts.gap_tol:
        return _finish(best, gap, iterations)

    step_scale = 1.0
    zero_grad_stalls = 0
    for k in range(1, opts.max_iters + 1):
        iterations = k
        norm_sq = float(gh @ gh) + float(np.sum(gH * gH))
        if norm_sq <= 1e-30:
            certify()
            zero_grad_stalls += 1
            if gap <= opts.gap_tol or zero_grad_stalls >= 3:
                break
            continue
        if math.isfinite(q_best) and val > q_best:
            step = (val - q_best) / norm_sq  # Polyak step toward the certified level
        else:
            step = step_scale / math.sqrt(k) / math.sqrt(norm_sq)
        cand_H = prob.project(big_h - step * gH)
        cand_h = h - step * gh
        h, big_h = cand_h, cand_H
        val, gh, gH, th0, th1 = prob.g_value_grad(h, big_h)
        if val < best["g"]:
            best = {"h": h, "H": big_h, "g": val, "th0": th0, "th1": th1}
        sum_h += h
        sum_H += big_h
        sum_th0 += th0
        sum_th1 += th1
        n_avg += 1
        if k % opts.check_every == 0:
            consider(sum_h / n_avg, sum_H / n_avg)
            if certify() <= opts.gap_tol:
                break
    if gap > opts.gap_tol:
        raise ConvergenceError(
            f"saddle solver reached {iterations} iterations with duality gap {gap:.3e} "
            f"above tolerance {opts.gap_tol:g}",
            last_iterate=(best["h"], best["H"]),
            residual=gap,
        )
    return _finish(best, gap, iterations)


def _finish(best, gap, iterations):
    sv = float(best["g"])
    return SaddleSolution(
        h_star=best["h"],
        H_star=best["H"],
        theta0_star=best["th0"],
        theta1_star=best["th1"],
        sv=sv,
        gap=float(gap),
        epsilon_star=math.exp(sv),
        iterations=iterations,
    )


# ---------------------------------------------------------------------------
# detectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticDetector:
    """phi(xi) = xi^T H xi / 2 + h^T xi + kappa_const; CUSUM increment is -phi."""

    H: np.ndarray
    h: np.ndarray
    kappa_const: float
    epsilon_star: float | None = None

    def phi(self, xi) -> float:
        x = np.asarray(xi, dtype=float)
        return 0.5 * float(x @ self.H @ x) + float(self.h @ x) + self.kappa_const

    def increments(self, observations: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(observations, dtype=float))
        quad = 0.5 * np.einsum("ij,ij->i", x @ self.H, x)
        return -(quad + x @ self.h + self.kappa_const)


def build_quadratic_detector(sol: SaddleSolution, setup0: ClassSetup, setup1: ClassSetup) -> QuadraticDetector:
    """Assemble the detector from an accepted saddle solution.

    The constant balances the two classes' bounding values at the solution,
    so both exponential-moment bounds equal exp(sv)."""
    phi0 = eval_phi_big(-sol.h_star, -sol.H_star, sol.theta0_star, setup0)
    phi1 = eval_phi_big(sol.h_star, sol.H_star, sol.theta1_star, setup1)
    kappa = 0.5 * (phi0 - phi1)
    return QuadraticDetector(
        H=sol.H_star.copy(),
        h=sol.h_star.copy(),
        kappa_const=kappa,
        epsilon_star=sol.epsilon_star,
    )


def llr_detector(g0: Gaussian, g1: Gaussian, epsilon_star: float | None = None) -> QuadraticDetector:
    """Classic CUSUM detector for a fully specified pair: -phi(xi) is the
    log-likelihood ratio log p1(xi) - log p0(xi)."""
    if g0.dim != g1.dim:
        raise DomainError(f"pair dimensions differ: {g0.dim} vs {g1.dim}")
    eye = np.eye(g0.dim)
    inv0 = g0.solve_covariance(eye)
    inv1 = g1.solve_covariance(eye)
    w0 = g0.whiten(g0.mean)
    w1 = g1.whiten(g1.mean)
    quad0 = float(w0 @ w0)
    quad1 = float(w1 @ w1)
    big_h = symmetrize(inv1 - inv0, rel_tol=np.inf)
    h = inv0 @ g0.mean - inv1 @ g1.mean
    const = -0.5 * (quad0 - quad1) - 0.5 * (g0.log_det_covariance() - g1.log_det_covariance())
    return QuadraticDetector(H=big_h, h=h, kappa_const=const, epsilon_star=epsilon_star)
