"""Inexact first-order methods driven by query-based gradient estimates.

The gradient of the expected objective F(x) = E[f(x, w)] is itself a mean,
so it is estimated in the dual norm of the feasible ball with the matching
estimator; an estimate with dual-norm error eta/(2R) perturbs every inner
product <g - grad F, y - u> over the ball by at most eta.  The solvers then
run with that uniform slack:

* mirror_descent: fixed-step descent with an r-uniformly convex reference
  function; gap <= L0 (r D / T)^{1/r} + eta.
* accelerated_descent: three-sequence accelerated scheme (query points x^t,
  prox points y^t, dual-averaging points z^t); gap <= L1 D / T^2 + 3 eta.
* strongly_convex_solve: Euclidean projected gradient with geometrically
  weighted averaging under an (eta, M, mu) oracle with mu = kappa/2 and
  M = 2 L1 (or 2 L0^2/eta); gap <= (M R^2/2) exp(-(mu/M)(T+1)) + eta.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import meanest
from .geometry import conjugate_exponent, prox_step


@dataclass
class StochasticProblem:
    """F(x) = E[f(x, w)] with w drawn from `source`.

    value(x, W) and grad(x, W) are vectorized over rows of W.  L0 bounds the
    dual norm of the stochastic gradients, L1 the smoothness of F, kappa the
    strong convexity, B the range of f; unknown constants stay None.
    """

    source: "DistributionSource"
    value: Callable
    grad: Callable
    d: int
    L0: Optional[float] = None
    L1: Optional[float] = None
    kappa: Optional[float] = None
    B: float = 1.0
    # optional vectorized form value_many(X, W) -> (n_rows, n_points); used
    # by samplers that probe many points against the same query batch
    value_many: Optional[Callable] = None

    def expected_value(self, x):
        """Ground-truth F(x) for finite-support sources (evaluation only)."""
        return float(self.source.weights @ self.value(x, self.source.atoms))

    def expected_grad(self, x):
        return self.source.weights @ self.grad(x, self.source.atoms)


@dataclass
class OptResult:
    x: np.ndarray
    gap_bound: float
    queries: int
    info: dict = field(default_factory=dict)


def approx_gradient(h, prob, x, eta, q, R):
    """Estimate grad F(x) so that |<err, y-u>| <= eta for y, u in the body.

    Dispatches the dual-norm mean estimator on the normalized gradient
    distribution; the certified dual-norm error is eta / (2R).
    """
    if prob.L0 is None:
        raise ValueError("gradient estimation needs the L0 bound")
    L0 = prob.L0
    hg = h.push(lambda W: prob.grad(x, W) / L0, label="gradient")
    eps_q = min(eta / (2.0 * R * L0), 1.0)
    if q == math.inf:
        est = meanest.estimate_linf(hg, eps_q)
    elif q == 1.0:
        est = meanest.estimate_l1(hg, eps_q)
    elif q == 2.0:
        est = meanest.estimate_l2(hg, eps_q)
    elif q > 2.0:
        est = meanest.estimate_lq_high(hg, eps_q, q)
    else:
        est = meanest.estimate_lq_low(hg, eps_q, q)
    return L0 * est.value, est.queries


def value_query(h, prob, x, tol):
    """F(x) to additive accuracy tol through a single range-B query."""
    B = prob.B
    return B * h.query_stat(lambda W: prob.value(x, W) / B, min(tol / B, 1.0))


def strongly_convex_oracle(h, prob, x, eta, M=None, value_mode="estimate"):
    """(eta, M, mu)-oracle at x for a kappa-strongly convex, smooth F.

    Returns (F_tilde, g_tilde, M, mu) satisfying, for all y in the domain,
      F_tilde + <g, y-x> + (mu/2)|y-x|^2 <= F(y)
                                        <= F_tilde + <g, y-x> + (M/2)|y-x|^2 + eta.
    The gradient is an l_2 mean estimate with error sqrt(eta*kappa)/2 and the
    value estimate is shifted down by eta/2; value_mode="free" skips the
    value query and returns F_tilde = None.
    """
    if prob.kappa is None or prob.kappa <= 0:
        raise ValueError("strongly convex oracle needs kappa > 0")
    kappa = prob.kappa
    if M is None:
        if prob.L1 is not None:
            M = 2.0 * prob.L1
        else:
            M = 2.0 * prob.L0 ** 2 / eta
    mu = kappa / 2.0
    L0 = prob.L0
    hg = h.push(lambda W: prob.grad(x, W) / L0, label="gradient")
    eps2 = min(math.sqrt(eta * kappa) / (2.0 * L0), 1.0)
    g = L0 * meanest.estimate_l2(hg, eps2).value
    if value_mode == "free":
        return None, g, M, mu
    f_hat = value_query(h, prob, x, eta / 4.0)
    return f_hat - eta / 2.0, g, M, mu


def mirror_descent(h, prob, setup, T, eta):
    """Fixed-step inexact mirror descent over the setup's lp ball."""
    if T < 1:
        raise ValueError("need T >= 1")
    if eta <= 0:
        raise ValueError("need eta > 0")
    r = setup.r
    D = setup.prox_diameter
    L0 = prob.L0
    R = setup.body_radius
    q = conjugate_exponent(setup.body_p)
    alpha = (1.0 / L0) * (r * D / T) ** (1.0 - 1.0 / r)
    x = setup.argmin()
    queries = 0
    avg = np.zeros(prob.d)
    iterates = []
    for _ in range(T):
        g, nq = approx_gradient(h, prob, x, eta, q, R)
        queries += nq
        iterates.append(x)
        avg += x
        x = prox_step(setup, x, g, alpha)
    avg /= T
    bound = L0 * (r * D / T) ** (1.0 / r) + eta
    return OptResult(avg, bound, queries,
                     {"alpha": alpha, "T": T, "eta": eta,
                      "iterates": iterates})


def accelerated_descent(h, prob, setup, T, eta):
    """Accelerated scheme for L1-smooth objectives; needs a 2-uniformly
    convex reference function (setup.r == 2)."""
    if setup.r != 2.0:
        raise ValueError("acceleration needs a 2-uniformly convex setup")
    if prob.L1 is None:
        raise ValueError("acceleration needs the smoothness constant L1")
    L1 = prob.L1
    R = setup.body_radius
    q = conjugate_exponent(setup.body_p)
    x0 = setup.argmin()
    x = x0.copy()
    s = np.zeros(prob.d)   # weighted gradient sum for the z-sequence
    queries = 0
    y = x0.copy()
    for t in range(T):
        g, nq = approx_gradient(h, prob, x, eta, q, R)
        queries += nq
        y = prox_step(setup, x, g, 1.0 / L1)
        s = s + (t + 1) / 2.0 * g
        z = prox_step(setup, x0, s, 1.0 / L1)
        x = 2.0 / (t + 3.0) * z + (t + 1.0) / (t + 3.0) * y
    bound = L1 * setup.prox_diameter / T ** 2 + 3.0 * eta
    return OptResult(y, bound, queries, {"T": T, "eta": eta})


def strongly_convex_solve(h, prob, T, eta, R, x0=None, M=None):
    """Projected gradient with geometric averaging for strongly convex F
    over the Euclidean ball of radius R (value-free)."""
    if prob.kappa is None or prob.kappa <= 0:
        raise ValueError("needs kappa > 0")
    x = np.zeros(prob.d) if x0 is None else np.asarray(x0, dtype=float)
    queries = 0
    mu = prob.kappa / 2.0
    acc = np.zeros(prob.d)
    wsum = 0.0
    M_used = None
    for t in range(T):
        before = h.ledger.count
        _, g, M_used, mu = strongly_convex_oracle(h, prob, x, eta, M=M,
                                                  value_mode="free")
        queries += h.ledger.count - before
        x = x - g / M_used
        nrm = np.linalg.norm(x)
        if nrm > R:
            x *= R / nrm
        w = (1.0 - mu / M_used) ** (-(t + 1))
        acc += w * x
        wsum += w
    y = acc / wsum
    bound = (M_used * R ** 2 / 2.0) * math.exp(-(mu / M_used) * (T + 1)) + eta
    return OptResult(y, bound, queries,
                     {"T": T, "eta": eta, "M": M_used, "mu": mu})
