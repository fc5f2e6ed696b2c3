"""Least-favorable pair for mean shifts, and the affine detector built from it.

The pair (mu0*, mu1*) minimizes the Mahalanobis gap
(mu0 - mu1)^T Sigma^{-1} (mu0 - mu1) over M0 x M1.  The solver is projected
gradient descent on the joint variable with a fixed 1/L step, where
L = 4 * lambda_max(Sigma^{-1}) is the exact Lipschitz constant of the
gradient of the joint quadratic; each block is projected after every step.

From the solved pair the detector is the affine function
phi(xi) = a^T xi + c whose negation is half the log-likelihood ratio of the
pair; its certified one-sample risk is eps* = exp(-gap/8), and its closed
form exponential moments under both pair members equal eps* exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError
from .gaussian import Gaussian, symmetrize
from .sets import VectorSet

# Below this Mahalanobis gap the two uncertainty sets are treated as
# overlapping (no detectable change).
OVERLAP_TOL = 1e-12


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    max_iters: int = 200_000


@dataclass(frozen=True)
class LfpSolution:
    mu0_star: np.ndarray
    mu1_star: np.ndarray
    delta_sq: float
    epsilon_star: float
    iterations: int
    residual: float


class _CovOps:
    """Solve helpers for one SPD covariance (factor cached, no inverse)."""

    def __init__(self, sigma):
        cov = symmetrize(sigma, what="covariance")
        self.gaussian = Gaussian(np.zeros(cov.shape[0]), cov)
        self.eigenvalues = np.linalg.eigvalsh(cov)
        if self.eigenvalues[0] <= 0:
            raise DomainError("covariance must be positive definite")

    def solve(self, v):
        return self.gaussian.solve_covariance(v)

    def quad(self, v):
        w = self.gaussian.whiten(v)
        return float(w @ w)


def solve_lfp(
    m0: VectorSet,
    m1: VectorSet,
    sigma,
    opts: SolverOptions | None = None,
    *,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> LfpSolution:
    """Minimize the Mahalanobis gap between M0 and M1.

    `init` overrides the deterministic start (projections of the origin);
    used by restart-invariance audits.  Raises ConvergenceError carrying the
    last iterate when the fixed-point residual is still above `opts.tol`
    after `opts.max_iters` sweeps.
    """
    opts = opts or SolverOptions()
    ops = _CovOps(sigma)
    d = ops.gaussian.dim
    if m0.dim != d or m1.dim != d:
        raise DomainError(f"set dimensions ({m0.dim}, {m1.dim}) do not match covariance dimension {d}")

    if init is None:
        mu0 = m0.project(np.zeros(d))
        mu1 = m1.project(np.zeros(d))
    else:
        mu0 = m0.project(np.asarray(init[0], dtype=float))
        mu1 = m1.project(np.asarray(init[1], dtype=float))

    # lambda_max(Sigma^{-1}) = 1 / lambda_min(Sigma); joint Hessian norm is 4x.
    lip = 4.0 / float(ops.eigenvalues[0])
    step = 1.0 / lip

    def objective(a, b):
        return ops.quad(a - b)

    value = objective(mu0, mu1)
    residual = math.inf
    for it in range(1, opts.max_iters + 1):
        grad_half = 2.0 * ops.solve(mu0 - mu1)  # d/dmu0; d/dmu1 is its negation
        nxt0 = m0.project(mu0 - step * grad_half)
        nxt1 = m1.project(mu1 + step * grad_half)
        residual = math.hypot(float(np.linalg.norm(nxt0 - mu0)), float(np.linalg.norm(nxt1 - mu1)))
        mu0, mu1 = nxt0, nxt1
        if __debug__:
            new_value = objective(mu0, mu1)
            assert new_value <= value + 1e-9 * max(value, 1.0), "projected-gradient step increased the objective"
            value = new_value
        if residual <= opts.tol:
            delta_sq = objective(mu0, mu1)
            return LfpSolution(
                mu0_star=mu0,
                mu1_star=mu1,
                delta_sq=delta_sq,
                epsilon_star=math.exp(-delta_sq / 8.0),
                iterations=it,
                residual=residual,
            )
    raise ConvergenceError(
        f"least-favorable-pair solver did not reach tol={opts.tol:g} in {opts.max_iters} iterations "
        f"(residual {residual:.3e})",
        last_iterate=(mu0, mu1),
        residual=residual,
    )


@dataclass(frozen=True)
class AffineDetector:
    """phi(xi) = a^T xi + c; the CUSUM increment is -phi = L*/2."""

    a: np.ndarray
    c: float
    epsilon_star: float

    def phi(self, xi) -> float:
        return float(self.a @ np.asarray(xi, dtype=float)) + self.c

    def increments(self, observations: np.ndarray) -> np.ndarray:
        """-phi row-wise: the CUSUM increment for each observation."""
        x = np.atleast_2d(np.asarray(observations, dtype=float))
        return -(x @ self.a) - self.c

    def moment_minus(self, g: Gaussian) -> float:
        """E[exp(-phi(xi))] for xi ~ g, in closed form."""
        half_quad = 0.5 * float(self.a @ (g.covariance @ self.a))
        return math.exp(-float(self.a @ g.mean) - self.c + half_quad)

    def moment_plus(self, g: Gaussian) -> float:
        """E[exp(+phi(xi))] for xi ~ g, in closed form."""
        half_quad = 0.5 * float(self.a @ (g.covariance @ self.a))
        return math.exp(float(self.a @ g.mean) + self.c + half_quad)


def build_affine_detector(sol: LfpSolution, sigma) -> AffineDetector:
    """Assemble the affine detector of the solved pair."""
    if sol.delta_sq <= OVERLAP_TOL:
        raise DomainError("uncertainty sets overlap; change undetectable")
    ops = _CovOps(sigma)
    diff = sol.mu1_star - sol.mu0_star
    a = -0.5 * ops.solve(diff)
    c = 0.25 * (ops.quad(sol.mu1_star) - ops.quad(sol.mu0_star))
    return AffineDetector(a=a, c=c, epsilon_star=sol.epsilon_star)
