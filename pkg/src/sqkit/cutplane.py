"""Optimization without smoothness: random-walk sampling, simulated
annealing on an approximate value oracle, and a center-of-gravity scheme
with approximate centroids and gradients.

Membership bodies are given by a vectorized indicator plus a sandwich
certificate (an interior point with inner/outer ball radii), which is what
the chord search of hit-and-run needs.  The center-of-gravity method keeps
the localizer well-rounded by re-expressing it in the coordinates of the
estimated inertial ellipsoid after every cut and re-centering at the center
of the inscribed half-ball.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

# approximate-centroid slack: a centroid within CHI of the true one in the
# inertial-ellipsoid norm still guarantees every central cut keeps at least
# 1/e - CHI = 1/3 of the volume
CHI = 1.0 / math.e - 1.0 / 3.0


@dataclass
class MembershipBody:
    """Convex body given by a vectorized membership test and a certificate:
    the ball of radius r_in around `center` is inside, the body is inside
    the ball of radius r_out."""

    membership: Callable[[np.ndarray], np.ndarray]
    center: np.ndarray
    r_in: float
    r_out: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not (0 < self.r_in <= self.r_out):
            raise ValueError("need 0 < r_in <= r_out")

    @property
    def dim(self):
        return self.center.shape[0]

    def contains(self, X):
        return np.asarray(self.membership(np.atleast_2d(np.asarray(X, float))),
                          dtype=bool)

    @staticmethod
    def ball(d, radius=1.0, center=None):
        c = np.zeros(d) if center is None else np.asarray(center, float)
        return MembershipBody(
            lambda X: np.linalg.norm(X - c, axis=1) <= radius, c, radius, radius)

    @staticmethod
    def box(lo, hi):
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        c = (lo + hi) / 2.0
        r_in = float(np.min(hi - lo)) / 2.0
        r_out = float(np.linalg.norm(hi - lo)) / 2.0
        return MembershipBody(
            lambda X: np.all((X >= lo) & (X <= hi), axis=1), c, r_in, r_out)


def _chord_lengths(body, X, U, bisect_tol=1e-9):
    """For each row x with direction u, the maximal t- < 0 < t+ keeping
    x + t u inside the body, via stepping-out bisection."""
    m = X.shape[0]
    tmax = 2.0 * body.r_out

    def boundary(sign):
        lo = np.zeros(m)
        hi = np.full(m, tmax)
        iters = max(1, math.ceil(math.log2(tmax / bisect_tol))) if tmax > bisect_tol else 1
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            inside = body.contains(X + (sign * mid)[:, None] * U)
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return lo

    return -boundary(-1.0), boundary(1.0)


def hit_and_run_sample(body, n, seed=0, burn_in=None, density=None,
                       chains=64, thin=1, grid=64, start=None,
                       track_best=False):
    """n points from the body via parallel hit-and-run chains.

    density=None samples uniformly; density=(value_fn, alpha) samples from
    exp(-alpha * value_fn(x)) restricted to the body, drawing the chord
    coordinate from the discretized restricted density.  With track_best
    the lowest-value visited point is returned as well.
    """
    d = body.dim
    if burn_in is None:
        burn_in = 10 * d * d
    rng = np.random.default_rng(seed)
    chains = min(chains, max(1, n))
    per_chain = math.ceil(n / chains)
    X = np.tile(body.center, (chains, 1)) if start is None else \
        np.tile(np.asarray(start, float), (chains, 1))
    # tiny jitter inside the inner ball decorrelates the chains
    X = X + rng.standard_normal(X.shape) * (0.01 * body.r_in / math.sqrt(d))
    X = np.where(body.contains(X)[:, None], X, np.tile(body.center, (chains, 1)))
    out = np.empty((chains * per_chain, d))
    kept = 0
    best_x, best_v = None, math.inf
    total_steps = burn_in + per_chain * thin
    for step in range(total_steps):
        U = rng.standard_normal((chains, d))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        t_lo, t_hi = _chord_lengths(body, X, U)
        if density is None:
            t = rng.uniform(t_lo, t_hi)
        else:
            value_fn, alpha = density
            ts = t_lo[:, None] + (t_hi - t_lo)[:, None] * \
                (np.arange(grid) + 0.5) / grid
            pts = X[:, None, :] + ts[:, :, None] * U[:, None, :]
            vals = value_fn(pts.reshape(-1, d)).reshape(chains, grid)
            logw = -alpha * (vals - vals.min(axis=1, keepdims=True))
            w = np.exp(np.clip(logw, -700, 0))
            w /= w.sum(axis=1, keepdims=True)
            cum = np.cumsum(w, axis=1)
            r = rng.uniform(size=(chains, 1))
            idx = (cum < r).sum(axis=1)
            cell = (t_hi - t_lo) / grid
            t = ts[np.arange(chains), idx] + rng.uniform(-0.5, 0.5, chains) * cell
            if track_best:
                j = int(np.argmin(vals))
                if vals.flat[j] < best_v:
                    best_v = float(vals.flat[j])
                    best_x = pts.reshape(-1, d)[j].copy()
        X = X + t[:, None] * U
        if step >= burn_in and (step - burn_in) % thin == 0:
            out[kept:kept + chains] = X
            kept += chains
    samples = out[:kept][:n] if kept >= n else out[:kept]
    if track_best:
        return samples, best_x, best_v
    return samples


def estimate_centroid_inertia(body, n=None, seed=0, **kw):
    """Approximate centroid and inertia (covariance) from uniform samples.

    The default sample size targets centroid accuracy CHI in the
    inertial-ellipsoid norm with a comfortable margin."""
    d = body.dim
    if n is None:
        n = math.ceil(40.0 * d * (math.log(d) + 1.0) / CHI ** 2)
    S = hit_and_run_sample(body, n, seed=seed, **kw)
    z = S.mean(axis=0)
    C = np.cov(S.T, bias=True)
    if d == 1:
        C = np.array([[float(C)]])
    return z, C, S


@dataclass
class Localizer:
    """The shrinking feasible region of the center-of-gravity method.

    Points are tracked in a "current" coordinate frame; y_orig = M y + b.
    Cuts are stored in original coordinates so they survive re-expressions.
    The sandwich certificate (center, r_in, r_out) lives in current
    coordinates.
    """

    base: MembershipBody
    M: np.ndarray
    b: np.ndarray
    center: np.ndarray
    r_in: float
    r_out: float
    cut_normals: list = field(default_factory=list)
    cut_offsets: list = field(default_factory=list)

    @staticmethod
    def from_body(body):
        d = body.dim
        return Localizer(body, np.eye(d), np.zeros(d),
                         body.center.copy(), body.r_in, body.r_out,
                         [], [])

    def to_original(self, Y):
        return np.atleast_2d(np.asarray(Y, float)) @ self.M.T + self.b

    def as_body(self):
        loc = self

        def member(Y):
            Xo = loc.to_original(Y)
            ok = loc.base.contains(Xo)
            for nvec, off in zip(loc.cut_normals, loc.cut_offsets):
                ok &= Xo @ nvec <= off + 1e-12
            return ok

        # current-frame center: start of frame is the original center mapped in
        return MembershipBody(member, self.center, self.r_in, self.r_out)

    def add_cut(self, normal_orig, offset):
        self.cut_normals.append(np.asarray(normal_orig, float))
        self.cut_offsets.append(float(offset))

    def rescale(self, z_cur, cov, cut_dir_cur):
        """Re-express in the frame of the estimated inertial ellipsoid at
        z_cur and re-center at the inscribed half-ball center of the cut
        {<cut_dir, y - z> <= 0}."""
        L = np.linalg.cholesky(cov)
        self.b = self.M @ z_cur + self.b
        self.M = self.M @ L
        d = self.base.dim
        r0 = math.sqrt((d + 2.0) / d) - CHI
        r1 = (1.0 + CHI) * (math.sqrt(d * (d + 2.0)) + CHI)
        g2 = L.T @ cut_dir_cur
        nrm = np.linalg.norm(g2)
        ghat = g2 / nrm if nrm > 0 else np.zeros(d)
        self.center = -(r0 / 2.0) * ghat
        self.r_in = r0 / 2.0
        self.r_out = r0 / 2.0 + r1


@dataclass
class CutPlaneResult:
    x: np.ndarray
    value_est: float
    gap_bound: float
    rounds: int
    queries: int
    info: dict = field(default_factory=dict)


def cog_optimize(h, prob, body, eps, T=None, n_samples=None, seed=0,
                 gamma=2.0 / 3.0, chains=128):
    """Center-of-gravity minimization of F(x) = E[f(x, w)] over the body.

    Per round: estimate the localizer's centroid and inertia from uniform
    samples, probe F there with one value query at tolerance eps/4, cut
    through the centroid with a gradient estimated in the inertial-ellipsoid
    norm (2d queries), then rescale/re-center.  Returns the best probe;
    gap_bound eps holds when the sampled centroids stay within the
    approximate-Gruenbaum slack.
    """
    d = body.dim
    B = prob.B
    if T is None:
        T = math.ceil(d * math.log(4.0 * B / eps) / math.log(1.0 / gamma))
    if n_samples is None:
        n_samples = max(600, 200 * d)
    eta = eps / 4.0
    loc = Localizer.from_body(body)
    rng = np.random.default_rng(seed)
    best_x, best_v = None, math.inf
    queries = 0
    rounds_done = 0
    r0 = math.sqrt((d + 2.0) / d) - CHI
    r1 = (1.0 + CHI) * (math.sqrt(d * (d + 2.0)) + CHI)
    for t in range(T):
        cur = loc.as_body()
        if not cur.contains(cur.center[None, :])[0]:
            break  # numerically inconsistent certificate; keep best probe
        # chains start at the certificate center, so a short warm-start
        # burn-in suffices here (the conservative default is for cold starts)
        z, C, _ = estimate_centroid_inertia(
            cur, n=n_samples, seed=rng.integers(2 ** 31), chains=chains,
            burn_in=4 * d + 40, thin=2)
        # guard against numerically degenerate localizers
        try:
            evals = np.linalg.eigvalsh(C)
            if evals.min() <= 1e-20 * max(evals.max(), 1.0):
                break
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            break
        x_t = loc.to_original(z)[0]
        before = h.ledger.count
        # value probe
        v_t = B * h.query_stat(lambda W: prob.value(x_t, W) / B,
                               min(eta / B, 1.0))
        # gradient in the inertial-ellipsoid norm: whiten with L, then l2
        from . import meanest
        gbound = 1.25 * 2.0 * B / r0
        hw = h.push(lambda W: (prob.grad(x_t, W) @ loc.M @ L) / gbound)
        eps2 = min(eta / (2.0 * r1 * gbound), 1.0)
        est = meanest.estimate_l2(hw, eps2)
        queries += h.ledger.count - before
        g_white = gbound * est.value          # ~ L^T M^T grad F
        from scipy.linalg import solve_triangular
        g_curf = solve_triangular(L, g_white, lower=True, trans='T')
        # cut <g_cur, y - z> <= 0 in current coords -> original coords
        n_orig = np.linalg.solve(loc.M.T, g_curf)
        loc.add_cut(n_orig, float(n_orig @ x_t))
        if v_t < best_v:
            best_v, best_x = v_t, x_t
        rounds_done += 1
        gnorm = np.linalg.norm(g_curf)
        if gnorm <= 1e-14:
            break
        loc.rescale(z, C, g_curf)
        if np.abs(np.diag(loc.M)).max() < 1e-12:
            break
    return CutPlaneResult(best_x, best_v, eps, rounds_done, queries,
                          {"T": T, "n_samples": n_samples, "eta": eta})


def anneal_optimize(h, prob, body, eps, delta=0.25, steps=None, chains=4,
                    seed=0, grid=64, quant=1e-9):
    """Minimize F over the body by hit-and-run on the Gibbs density
    exp(-alpha * F_tilde) with alpha = 4 (d + ln(1/delta)) / eps.

    F_tilde is a memoized value oracle (one range-B query at tolerance
    eps/(d B) per distinct point, quantized at `quant`), so the walk sees a
    consistent approximate objective; the best visited point is returned.
    """
    d = body.dim
    B = prob.B
    alpha = 4.0 * (d + math.log(1.0 / delta)) / eps
    if steps is None:
        steps = 250 * d
    tol = min(eps / (d * B), 1.0)
    memo = {}

    def f_tilde(X):
        X = np.atleast_2d(np.asarray(X, float))
        out = np.empty(X.shape[0])
        missing = []
        keys = []
        for i in range(X.shape[0]):
            key = tuple(np.round(X[i] / quant).astype(np.int64))
            got = memo.get(key)
            if got is None:
                missing.append(i)
                keys.append(key)
            else:
                out[i] = got
        if missing:
            Xm = X[missing]
            if prob.value_many is not None:
                phi = lambda W: prob.value_many(Xm, W) / B
            else:
                phi = lambda W: np.stack([prob.value(x, W) for x in Xm],
                                         axis=1) / B
            vals = B * h.query_stat_batch(phi, tol)
            for j, i in enumerate(missing):
                memo[keys[j]] = vals[j]
                out[i] = vals[j]
        return out

    _, best_x, best_v = hit_and_run_sample(
        body, n=chains, seed=seed, burn_in=steps - 1,
        density=(f_tilde, alpha), chains=chains, thin=1,
        grid=grid, track_best=True)
    return CutPlaneResult(best_x, best_v, eps, steps, len(memo),
                          {"alpha": alpha, "tolerance": tol})
