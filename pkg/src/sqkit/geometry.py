"""Norms, orthogonal transforms, truncation and prox machinery.

Everything here is deterministic given an explicit RNG/seed and shares no
mutable state, so it is safe to use concurrently.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class DimensionError(ValueError):
    pass


class ProxSolverError(RuntimeError):
    """Raised when the prox subproblem solver fails to converge."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


# ---------------------------------------------------------------------------
# norm indices


@dataclass(frozen=True)
class NormIndex:
    """A conjugate pair 1/p + 1/q = 1 with p, q in [1, inf]."""

    p: float
    q: float

    def __post_init__(self):
        if not (1.0 <= self.p) or not (1.0 <= self.q):
            raise ValueError("p and q must be >= 1")
        if not _conjugate(self.p, self.q):
            raise ValueError(f"p={self.p} and q={self.q} are not conjugate")

    @staticmethod
    def from_p(p):
        return NormIndex(p, conjugate_exponent(p))

    @staticmethod
    def from_q(q):
        return NormIndex(conjugate_exponent(q), q)


def conjugate_exponent(p):
    if p == 1.0:
        return math.inf
    if p == math.inf:
        return 1.0
    return p / (p - 1.0)


def _conjugate(p, q, tol=1e-12):
    if p == 1.0:
        return q == math.inf
    if p == math.inf:
        return q == 1.0
    return abs(1.0 / p + 1.0 / q - 1.0) <= tol


def lp_norm(v, p):
    v = np.asarray(v, dtype=float)
    if p == math.inf:
        return float(np.max(np.abs(v))) if v.size else 0.0
    if p == 1.0:
        return float(np.sum(np.abs(v)))
    if p == 2.0:
        return float(np.linalg.norm(v))
    return float(np.sum(np.abs(v) ** p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# orthogonal transforms


def fwht(v):
    """Orthonormal Walsh-Hadamard transform of a length-2^k vector.

    Preserves the Euclidean norm and is an involution (H @ H = I).
    """
    v = np.array(v, dtype=float, copy=True)
    d = v.shape[-1]
    if d < 1 or (d & (d - 1)) != 0:
        raise DimensionError(f"length {d} is not a power of two")
    h = 1
    while h < d:
        v = v.reshape(*v.shape[:-1], -1, 2 * h)
        a = v[..., :h].copy()
        b = v[..., h:2 * h].copy()
        v[..., :h] = a + b
        v[..., h:2 * h] = a - b
        v = v.reshape(*v.shape[:-2], d)
        h *= 2
    return v / math.sqrt(d)


def random_orthogonal(d, seed):
    """Haar-distributed orthogonal d x d matrix, deterministic in seed."""
    if d < 1:
        raise DimensionError("dimension must be >= 1")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    g = rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    # fix the signs so the distribution is exactly Haar
    q = q * np.sign(np.diag(r))
    return q


def truncate_coords(v, a):
    """Clamp every coordinate of v to [-a, a]."""
    if a <= 0:
        raise ValueError("truncation level must be positive")
    return np.clip(np.asarray(v, dtype=float), -a, a)


# ---------------------------------------------------------------------------
# ellipsoids


@dataclass
class EllipsoidSpec:
    """Ellipsoid {y : (y-center)^T shape^{-1} (y-center) <= 1}."""

    center: np.ndarray
    shape: np.ndarray
    _chol: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.shape = np.asarray(self.shape, dtype=float)
        if not np.allclose(self.shape, self.shape.T, atol=1e-10):
            raise ValueError("shape operator must be symmetric")
        try:
            self._chol = np.linalg.cholesky(self.shape)
        except np.linalg.LinAlgError as e:
            raise ValueError("shape operator must be positive definite") from e

    @property
    def dim(self):
        return self.center.shape[0]

    @property
    def chol(self):
        return self._chol

    def whiten(self, w):
        """Map points in the ellipsoid to the unit ball."""
        w = np.asarray(w, dtype=float)
        from scipy.linalg import solve_triangular
        return solve_triangular(self._chol, (w - self.center).T, lower=True).T

    def unwhiten(self, z):
        z = np.asarray(z, dtype=float)
        return z @ self._chol.T + self.center

    def norm(self, v):
        """Ellipsoidal norm of a displacement v (center-free)."""
        from scipy.linalg import solve_triangular
        return float(np.linalg.norm(solve_triangular(self._chol, np.asarray(v, float), lower=True)))

    @staticmethod
    def unit_ball(d):
        return EllipsoidSpec(np.zeros(d), np.eye(d))


# ---------------------------------------------------------------------------
# prox machinery


@dataclass
class ProxSetup:
    """An r-uniformly convex reference function on an lp ball.

    psi satisfies psi(y) >= psi(x) + <grad_psi(x), y-x> + (1/r)||y-x||^r in
    the body's norm, is nonnegative on the body and vanishes at the origin.
    """

    r: float
    psi: Callable[[np.ndarray], float]
    grad_psi: Callable[[np.ndarray], np.ndarray]
    prox_diameter: float
    body_p: float
    body_radius: float
    d: int
    # internal exponent of the power norm behind psi (p(d) smoothing for p=1)
    _exp: float = 2.0
    _scale: float = 1.0  # psi = _scale * ||x||_{_pp}^{_exp} / _exp-ish, see factory
    _pp: float = 2.0

    def argmin(self):
        return np.zeros(self.d)

    def bregman(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        return self.psi(y) - self.psi(x) - float(np.dot(self.grad_psi(x), y - x))


def lp_setup(p, d, radius=1.0):
    """Reference-function setup for the lp ball of the given radius.

    p=1 uses the smoothed ||.||_{1+1/ln d} norm; p=inf callers should use
    the equivalent ||.||_{ln d + 1} norm themselves (see lp_setup with a
    finite large p).
    """
    if d < 1:
        raise DimensionError("dimension must be >= 1")
    if p == math.inf:
        raise ValueError("p=inf has no uniformly convex setup; use a finite q(d)=ln d+1 norm")
    if p == 1.0:
        if d < 2:
            pd = 2.0
        else:
            pd = 1.0 + 1.0 / math.log(d)
        # the e^2 factor normalizes 2-uniform convexity w.r.t. ||.||_1
        scale = math.e ** 2 / (2.0 * (pd - 1.0))
        psi = lambda x: scale * lp_norm(x, pd) ** 2
        grad = _power_norm_grad_factory(pd, 2.0, scale)
        diam = scale * radius ** 2  # sup over B_1(R) attained at a vertex
        return ProxSetup(2.0, psi, grad, diam, 1.0, radius, d, _exp=2.0,
                         _scale=scale, _pp=pd)
    if 1.0 < p <= 2.0:
        scale = 1.0 / (2.0 * (p - 1.0)) if p < 2.0 else 0.5
        psi = lambda x: scale * lp_norm(x, p) ** 2
        grad = _power_norm_grad_factory(p, 2.0, scale)
        diam = scale * radius ** 2
        return ProxSetup(2.0, psi, grad, diam, p, radius, d, _exp=2.0,
                         _scale=scale, _pp=p)
    # p > 2: psi = (2^{p-2}/p) ||x||_p^p, p-uniformly convex w.r.t. ||.||_p
    scale = 2.0 ** (p - 2.0) / p
    psi = lambda x: scale * lp_norm(x, p) ** p
    grad = _power_norm_grad_factory(p, p, scale)
    diam = scale * radius ** p
    return ProxSetup(p, psi, grad, diam, p, radius, d, _exp=p, _scale=scale, _pp=p)


def _power_norm_grad_factory(pp, exp, scale):
    """Gradient of scale * ||x||_pp^exp."""

    def grad(x):
        x = np.asarray(x, dtype=float)
        t = lp_norm(x, pp)
        if t == 0.0:
            return np.zeros_like(x)
        return scale * exp * t ** (exp - pp) * np.abs(x) ** (pp - 1.0) * np.sign(x)

    return grad


def _invert_power_norm_grad(z, pp, exp, scale):
    """Solve grad(scale * ||y||_pp^exp) = z for y (unconstrained)."""
    z = np.asarray(z, dtype=float)
    if not np.any(z):
        return np.zeros_like(z)
    c = scale * exp
    if exp == pp:
        return np.sign(z) * (np.abs(z) / c) ** (1.0 / (pp - 1.0))
    # exp == 2: |y_i| = (|z_i| / (c t^{2-pp}))^{1/(pp-1)} with t = ||y||_pp,
    # which has the closed form below.
    a = np.sum((np.abs(z) / c) ** (pp / (pp - 1.0)))
    t = a ** ((pp - 1.0) / pp)
    return np.sign(z) * (np.abs(z) / c) ** (1.0 / (pp - 1.0)) * t ** ((pp - 2.0) / (pp - 1.0))


def prox_step(setup, x, g, alpha, tol=1e-10, max_iter=200):
    """Exact minimizer of alpha*<g, y-x> + V_x(y) over the setup's body.

    The ball-constrained case reduces to a 1-D bisection on the constraint
    multiplier; every coordinate subproblem is monotone in the multiplier.
    """
    if alpha <= 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    z = setup.grad_psi(x) - alpha * g
    R = setup.body_radius

    if setup.body_p == 2.0 and setup._pp == 2.0:
        y = z  # grad_psi = identity (scale 1/2 * 2)
        n = np.linalg.norm(y)
        return y if n <= R else y * (R / n)

    y = _invert_power_norm_grad(z, setup._pp, setup._exp, setup._scale)
    if lp_norm(y, setup.body_p) <= R * (1.0 + 1e-12):
        return y

    if setup.body_p == 1.0:
        return _prox_l1_constrained(setup, z, R, tol, max_iter)
    return _prox_lp_constrained(setup, z, R, tol, max_iter)


def _prox_lp_constrained(setup, z, R, tol, max_iter):
    # On the boundary ||y||_pp = R the KKT system collapses to
    # |y_i| = (|z_i|/beta)^{1/(pp-1)} for a single scalar beta.
    pp = setup._pp
    az = np.abs(z)

    def norm_at(beta):
        return lp_norm((az / beta) ** (1.0 / (pp - 1.0)), pp)

    lo = setup._scale * setup._exp * R ** (setup._exp - pp)
    hi = max(lo * 2.0, float(np.max(az)) / max(R, 1e-300) * 2.0 + lo)
    while norm_at(hi) > R:
        hi *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if norm_at(mid) > R:
            lo = mid
        else:
            hi = mid
        if (hi - lo) <= tol * hi:
            break
    else:
        raise ProxSolverError("lp prox bisection did not converge", residual=hi - lo)
    beta = hi
    return np.sign(z) * (az / beta) ** (1.0 / (pp - 1.0))


def _prox_l1_constrained(setup, z, R, tol, max_iter):
    # Outer bisection on the l1-ball multiplier (soft threshold), inner
    # closed-form inversion of the smoothed-norm gradient.
    az = np.abs(z)

    def solve(mu):
        zt = np.maximum(az - mu, 0.0) * np.sign(z)
        return _invert_power_norm_grad(zt, setup._pp, setup._exp, setup._scale)

    lo, hi = 0.0, float(np.max(az))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        y = solve(mid)
        if lp_norm(y, 1.0) > R:
            lo = mid
        else:
            hi = mid
        if (hi - lo) <= tol * max(hi, 1.0):
            break
    else:
        raise ProxSolverError("l1 prox bisection did not converge", residual=hi - lo)
    return solve(hi)
