"""Multivariate normal primitives.

Everything downstream (detectors, CUSUM runs, Monte Carlo) works with
``Gaussian`` values: a mean vector plus a positive-definite covariance with
its lower Cholesky factor cached at construction.  Quadratic forms are always
evaluated through triangular solves against that factor; no covariance
inverse is ever formed explicitly.

Randomness goes through ``SeededStream``: a (seed, stream_id) pair mapped to
a counter-based Philox generator.  Distinct keys give independent streams by
construction, so Monte Carlo trials parallelize without shared state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DimensionError, NotPositiveDefiniteError

# Above this relative asymmetry a covariance is rejected; below it the matrix
# is silently symmetrized (config files round-trip through text).
_ASYMMETRY_REL_TOL = 1e-8


def _as_vector(x, d: int, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.shape[0] != d:
        raise DimensionError(what, d, v.shape)
    return v


def symmetrize(mat: np.ndarray, *, rel_tol: float = _ASYMMETRY_REL_TOL, what: str = "matrix") -> np.ndarray:
    """Return (A + A^T)/2; reject asymmetry beyond `rel_tol` (relative Frobenius)."""
    a = np.asarray(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} must be square, got shape {a.shape}")
    scale = max(float(np.linalg.norm(a)), 1.0)
    skew = float(np.linalg.norm(a - a.T))
    if skew > rel_tol * scale:
        raise ValueError(
            f"{what} is asymmetric beyond tolerance: ||A - A^T||/||A|| = {skew / scale:.3e} > {rel_tol:.1e}"
        )
    return (a + a.T) / 2.0


class Gaussian:
    """Immutable N(mean, covariance) with cached lower Cholesky factor."""

    __slots__ = ("mean", "covariance", "factor")

    def __init__(self, mean, covariance):
        mean = np.array(mean, dtype=float).reshape(-1)
        cov = symmetrize(covariance, what="covariance")
        if cov.shape[0] != mean.shape[0]:
            raise DimensionError("covariance", mean.shape[0], cov.shape[0])
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"covariance is not positive definite: {exc}") from exc
        mean.setflags(write=False)
        cov.setflags(write=False)
        factor.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "factor", factor)

    def __setattr__(self, name, value):
        raise AttributeError("Gaussian is immutable")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_det_covariance(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))

    def solve_covariance(self, rhs: np.ndarray) -> np.ndarray:
        """Sigma^{-1} @ rhs via the cached factor."""
        return cho_solve((self.factor, True), rhs)

    def whiten(self, rhs: np.ndarray) -> np.ndarray:
        """L^{-1} @ rhs (forward triangular solve)."""
        return solve_triangular(self.factor, rhs, lower=True)

    def __repr__(self):
        return f"Gaussian(d={self.dim})"


@dataclass(frozen=True)
class SeededStream:
    """One reproducible random substream, keyed by (seed, stream_id).

    The pair is used verbatim as the 128-bit Philox key, so identical pairs
    reproduce identical sequences byte-for-byte and distinct stream_ids are
    independent by the counter-based generator's design.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this substream."""
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def mahalanobis_sq(x, y, g: Gaussian) -> float:
    """(x - y)^T Sigma^{-1} (x - y), computed via a triangular solve."""
    xv = _as_vector(x, g.dim, "x")
    yv = _as_vector(y, g.dim, "y")
    z = g.whiten(xv - yv)
    return float(z @ z)


def sample(g: Gaussian, stream: SeededStream, n: int) -> np.ndarray:
    """n i.i.d. rows from g, deterministic in the stream.

    Re-sampling with the same stream reproduces the same matrix; use
    ``stream.generator()`` directly when a single consumer needs to keep
    drawing from one substream.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return sample_with(g, stream.generator(), n)


def sample_with(g: Gaussian, rng: np.random.Generator, n: int) -> np.ndarray:
    """n rows from g using an already-positioned generator (advances it)."""
    z = rng.standard_normal((n, g.dim))
    return z @ g.factor.T + g.mean


def log_likelihood_ratio(xi, g0: Gaussian, g1: Gaussian) -> float:
    """log p1(xi) - log p0(xi) for a pair sharing one covariance.

    The equal-covariance restriction keeps this affine in xi; pairs with
    different covariances are handled by quadratic detectors instead.
    """
    if g0.dim != g1.dim:
        raise DimensionError("g1", g0.dim, g1.dim)
    scale = max(float(np.linalg.norm(g0.covariance)), 1.0)
    if float(np.linalg.norm(g0.covariance - g1.covariance)) > 1e-10 * scale:
        raise ValueError("covariances differ beyond 1e-10; use a quadratic detector for unequal covariances")
    xv = _as_vector(xi, g0.dim, "xi")
    w0 = g0.whiten(g0.mean)
    w1 = g0.whiten(g1.mean)
    s = g0.solve_covariance(g1.mean - g0.mean)
    return float(s @ xv) - 0.5 * (float(w1 @ w1) - float(w0 @ w0))


def kl_divergence(ga: Gaussian, gb: Gaussian) -> float:
    """KL(ga || gb) in closed form."""
    if ga.dim != gb.dim:
        raise DimensionError("gb", ga.dim, gb.dim)
    d = ga.dim
    trace_term = float(np.trace(gb.solve_covariance(ga.covariance)))
    maha = mahalanobis_sq(gb.mean, ga.mean, gb)
    return 0.5 * (trace_term + maha - d + gb.log_det_covariance() - ga.log_det_covariance())
