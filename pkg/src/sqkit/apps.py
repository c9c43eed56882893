"""Query-based halfspace learners and the generalized-linear-model harness.

The learners never touch individual examples: each round they ask one
relative-tolerance query for the violation rate, and if it is too high they
estimate the mean violating example through conditional queries (paying
only linearly in the inverse violation rate) and update with it.  The
margin of the unknown separator survives because an l_p-accurate estimate
of the mean counterexample is itself an approximate counterexample.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import meanest
from .firstorder import (StochasticProblem, accelerated_descent,
                         mirror_descent, strongly_convex_solve)
from .geometry import lp_norm, lp_setup
from .oracle import ConditionalStatAdapter


class MarginCertificateError(RuntimeError):
    """Update count exceeded the certified bound: the declared margin
    certificate cannot hold."""


class GLMConfigError(ValueError):
    pass


@dataclass
class LabeledDistribution:
    """Distribution over rows (x_1..x_d, y) with a p-margin certificate:
    some w* in B_q(W) has y<w*,x> >= gamma on the support, x in B_p(R)."""

    source: "DistributionSource"
    p: float
    R: float
    W: float
    gamma: float

    @property
    def d(self):
        return self.source.dim - 1

    def check_margin(self, wstar, n_probe=10 ** 4, seed=0):
        """Verify the certificate on probe samples (wstar known only in
        instrumented runs)."""
        rng = np.random.default_rng(seed)
        S = self.source.sample(rng, n_probe)
        margins = (S[:, :-1] @ wstar) * S[:, -1]
        return float(margins.min())


@dataclass
class LearnResult:
    w: np.ndarray
    updates: int
    violation_estimate: float
    queries: int
    info: dict = field(default_factory=dict)


def _project_halfspace_ball(v, normal, offset, radius, iters=200, tol=1e-12):
    """Project v onto {u : <normal, u> <= offset} intersected with the
    Euclidean ball of the given radius (Dykstra's alternating scheme)."""
    x = np.asarray(v, dtype=float).copy()
    p_half = np.zeros_like(x)
    p_ball = np.zeros_like(x)
    nn = float(np.dot(normal, normal))
    for _ in range(iters):
        x_prev = x
        y = x + p_half
        viol = float(np.dot(normal, y)) - offset
        y_proj = y - (viol / nn) * normal if (nn > 0 and viol > 0) else y
        p_half = (x + p_half) - y_proj
        x = y_proj
        y = x + p_ball
        nrm = np.linalg.norm(y)
        y_proj = y * (radius / nrm) if nrm > radius else y
        p_ball = (x + p_ball) - y_proj
        x = y_proj
        if np.linalg.norm(x - x_prev) <= tol:
            break
    return x


def _violation_cond(w, thresh, d):
    # at threshold 0 ties count as violations, otherwise w = 0 would be
    # vacuously consistent
    def cond(rows):
        rows = np.atleast_2d(np.asarray(rows, float))
        m = rows[:, -1] * (rows[:, :d] @ w)
        return m <= thresh if thresh == 0.0 else m < thresh

    return cond


def margin_perceptron_sq(D, h, eps, eta=None, max_rounds=None):
    """Margin-maximizing perceptron on conditional-mean updates (p=2).

    Guarantees Pr[y<w, x> < eta] <= eps on termination, with at most
    ceil(R^2 W^2 / (2 gamma/3 - eta)^2) updates; exceeding that bound
    raises MarginCertificateError.
    """
    if D.p != 2.0:
        raise ValueError("this learner is the p=2 member; use pnorm_learn")
    gamma, R, W_ = D.gamma, D.R, D.W
    if eta is None:
        eta = gamma / 2.0
    if not (eta < 2.0 * gamma / 3.0):
        raise ValueError("need eta < 2*gamma/3")
    cap = (R * W_) ** 2 / (2.0 * gamma / 3.0 - eta) ** 2
    return _margin_loop(D, h, eps, thresh=eta, project_eta=eta,
                        update_cap=math.ceil(cap * (1.0 - 1e-12)),
                        exponent=2.0, max_rounds=max_rounds)


def pnorm_learn(D, h, eps, max_rounds=None):
    """p-norm halfspace learner for p in [2, inf] (p=inf is the Winnow
    regime: the algorithm exponent is 2 ln d and updates are estimated
    coordinate-wise)."""
    p, d = D.p, D.d
    if p < 2.0:
        raise ValueError("p must lie in [2, inf]")
    if p == 2.0:
        return _margin_loop(D, h, eps, thresh=0.0, project_eta=0.0,
                            update_cap=math.ceil(
                                (D.R * D.W / (2.0 * D.gamma / 3.0)) ** 2),
                            exponent=2.0, max_rounds=max_rounds)
    P = 2.0 * math.log(d) if p == math.inf else p
    P = max(P, 2.0)
    # l_P norm of the instances and dual norm of the separator
    xP = D.R * d ** (1.0 / P) if p == math.inf else D.R
    cap = math.ceil((P - 1.0) * (xP * D.W / (2.0 * D.gamma / 3.0)) ** 2)
    return _margin_loop(D, h, eps, thresh=0.0, project_eta=None,
                        update_cap=cap, exponent=P, max_rounds=max_rounds)


def _margin_loop(D, h, eps, thresh, project_eta, update_cap, exponent,
                 max_rounds):
    d = D.d
    p, R, W_, gamma = D.p, D.R, D.W, D.gamma
    theta = np.zeros(d)   # dual accumulation of update vectors
    w = np.zeros(d)
    n_stop = math.ceil(16.0 / eps)
    updates = 0
    rounds = 0
    eps_mean = min(gamma / (3.0 * W_ * R), 1.0)
    if max_rounds is None:
        max_rounds = 4 * update_cap + 16
    while True:
        rounds += 1
        if rounds > max_rounds:
            raise MarginCertificateError(
                f"no termination within {max_rounds} rounds")
        cond = _violation_cond(w, thresh * 1.0, d)
        p_hat = h.query_vstat(lambda rows: cond(rows).astype(float), n_stop)
        if p_hat < 0.75 * eps:
            return LearnResult(w, updates, p_hat, h.ledger.count,
                               {"rounds": rounds, "update_cap": update_cap,
                                "threshold": thresh})
        # continuing certifies Pr[violation] >= eps/2
        adapter = ConditionalStatAdapter(
            h, cond, alpha=eps / 2.0,
            row_map=lambda rows: rows[:, :d] * rows[:, -1:] / R, dim=d)
        if p == math.inf:
            est = meanest.estimate_linf(adapter, eps_mean)
        elif p == 2.0:
            est = meanest.estimate_l2(adapter, eps_mean)
        else:
            est = meanest.estimate_lq_high(adapter, eps_mean, p)
        x_tilde = R * est.value
        if project_eta is not None:
            x_tilde = _project_halfspace_ball(x_tilde, w, project_eta, R)
        updates += 1
        if updates > update_cap:
            raise MarginCertificateError(
                f"update count {updates} exceeds certified bound {update_cap}")
        if exponent == 2.0:
            w = w + x_tilde
        else:
            theta = theta + x_tilde
            t = lp_norm(theta, exponent)
            if t > 0:
                w = (t ** (2.0 - exponent)) * \
                    np.abs(theta) ** (exponent - 1.0) * np.sign(theta)
            else:
                w = np.zeros(d)


def perceptron_vstat_cap(D, eps, frame_level=None):
    """Designed worst-case relative budget of one conditional query; the
    learner's ledger must stay below it."""
    K = frame_level if frame_level is not None else \
        meanest.kashin_frame(D.d).level
    tau = min(D.gamma / (3.0 * D.W * D.R), 1.0) / K
    n = math.ceil((6.0 / tau + 1.0) ** 2)
    return math.ceil(n / (eps / 2.0))


# ---------------------------------------------------------------------------
# generalized linear models


@dataclass
class GLMLoss:
    name: str
    value: Callable    # value(s, z)
    deriv: Callable
    L0: float          # Lipschitz constant of s -> loss(s, z)
    L1: Optional[float]  # smoothness in s, None if non-smooth
    bound: Callable    # bound(s_max) on |loss| for |s| <= s_max, |z| <= 1


def make_loss(name):
    if name == "squared":
        return GLMLoss("squared",
                       lambda s, z: 0.5 * (s - z) ** 2,
                       lambda s, z: s - z,
                       L0=math.nan, L1=1.0,
                       bound=lambda smax: 0.5 * (smax + 1.0) ** 2)
    if name == "hinge":
        return GLMLoss("hinge",
                       lambda s, z: np.maximum(0.0, 1.0 - z * s),
                       lambda s, z: np.where(z * s < 1.0, -z, 0.0),
                       L0=1.0, L1=None,
                       bound=lambda smax: 1.0 + smax)
    if name == "abs":
        return GLMLoss("abs",
                       lambda s, z: np.abs(s - z),
                       lambda s, z: np.sign(s - z),
                       L0=1.0, L1=None,
                       bound=lambda smax: smax + 1.0)
    raise GLMConfigError(f"unknown loss {name!r}")


@dataclass
class GLMSpec:
    """Regularized linear prediction: minimize
    E[loss(<w, x>, z)] + lam * |x|_2^2 over the l_p ball of radius R.

    W bounds the covariate norm (dual to p), so the induced Lipschitz
    constant is L_{loss,0} * W (plus the regularizer's 2*lam*R)."""

    loss: GLMLoss
    W: float
    R: float
    lam: float = 0.0
    p: float = 2.0


def glm_problem(spec, source):
    """StochasticProblem for GLM data rows (x_1..x_d, z)."""
    d = source.dim - 1
    loss = spec.loss
    smax = spec.W * spec.R
    lam = spec.lam
    if not math.isnan(loss.L0):
        l0_loss = loss.L0
    elif loss.L1 is not None:
        # smooth loss: the derivative is bounded on the bounded domain
        l0_loss = loss.L1 * (smax + 1.0)
    else:
        l0_loss = None  # genuinely undeclared; dispatch must refuse
    L0 = l0_loss * spec.W + 2.0 * lam * spec.R if l0_loss is not None else None
    L1 = (loss.L1 * spec.W ** 2 + 2.0 * lam) if loss.L1 is not None else None
    kappa = 2.0 * lam if lam > 0 else None
    B = loss.bound(smax) + lam * spec.R ** 2

    def value(x, rows):
        rows = np.atleast_2d(rows)
        s = rows[:, :d] @ x
        return loss.value(s, rows[:, -1]) + lam * float(x @ x)

    def grad(x, rows):
        rows = np.atleast_2d(rows)
        s = rows[:, :d] @ x
        return loss.deriv(s, rows[:, -1])[:, None] * rows[:, :d] + 2.0 * lam * x

    return StochasticProblem(source=source, value=value, grad=grad, d=d,
                             L0=L0, L1=L1, kappa=kappa, B=B)


def glm_solve(spec, source, h, eps):
    """Dispatch the GLM to the matching solver and return an eps-optimal
    predictor (by the solver's certified gap bound)."""
    prob = glm_problem(spec, source)
    d = prob.d
    if spec.lam > 0:
        # strongly convex path (Euclidean)
        eta = eps / 2.0
        M = 2.0 * prob.L1 if prob.L1 is not None else 2.0 * prob.L0 ** 2 / eta
        mu = prob.kappa / 2.0
        T = max(1, math.ceil((M / mu) *
                             math.log(max(M * spec.R ** 2 / eps, math.e))))
        res = strongly_convex_solve(h, prob, T, eta, spec.R, M=M)
        path = "strongly_convex"
    elif prob.L1 is not None and spec.p == 2.0:
        eta = eps / 6.0
        setup = lp_setup(2.0, d, spec.R)
        T = max(1, math.ceil(math.sqrt(2.0 * prob.L1 * setup.prox_diameter
                                       / eps)))
        res = accelerated_descent(h, prob, setup, T, eta)
        path = "accelerated"
    elif prob.L0 is not None:
        eta = eps / 2.0
        setup = lp_setup(spec.p, d, spec.R)
        r = setup.r
        T = max(1, math.ceil(r * setup.prox_diameter *
                             (2.0 * prob.L0 / eps) ** r))
        res = mirror_descent(h, prob, setup, T, eta)
        path = "mirror_descent"
    else:
        raise GLMConfigError("no constants declared; cannot pick a solver")
    res.info["path"] = path
    return res
