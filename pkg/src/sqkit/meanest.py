"""High-dimensional mean estimation from noisy-expectation queries.

Estimators are organized by the norm in which the error is certified:

* l_inf: one additive query per coordinate;
* l_1: orthonormal Hadamard embedding into l_inf (pad to a power of two);
* l_2: redundant tight-frame representation with uniformly small
  coefficients ("kashin" variant), or coordinate truncation under a random
  rotation with geometric-median boosting ("rotation" variant);
* l_q, q > 2: dyadic rings, each estimated in both l_2 and l_inf and
  reconciled by a coordinate clamp, plus a small-coordinate tail;
* l_q, 1 < q < 2: either a direct l_2 reduction, or per-ring
  relative-tolerance queries on the positive/negative parts ("vstat_rings");
* ellipsoidal norms: whitening into the unit ball;
* symmetric polytope norms: one query per facet pair and a Chebyshev
  regression to invert the facet map.

Every estimator returns a MeanEstimate whose certified_error is a bound on
the corresponding norm of the error that holds for arbitrary in-band oracle
answers (the rotation variant certifies its bound with probability
1 - delta over its own randomness).
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import fwht, lp_norm, random_orthogonal, truncate_coords


class FrameError(RuntimeError):
    pass


@dataclass
class MeanEstimate:
    value: np.ndarray
    certified_error: float
    norm_p: float
    queries: int
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# tight frames with uniformly small representations


class KashinFrame:
    """Redundant tight frame on R^d with N = redundancy * d vectors.

    The frame operator S (N x d) has orthonormal columns, so analysis
    preserves the Euclidean norm.  ``representation`` computes coefficients
    a with S^T a = w and sqrt(N) * ||a||_inf <= level * ||w||_2 via repeated
    analyze / truncate / resynthesize passes; ``level`` is calibrated at
    build time over random unit vectors (with a safety margin) and is the K
    in the query-scaling sqrt(N)/K.
    """

    TRUNC = 1.5          # truncation multiplier per pass
    CAL_VECTORS = 1000   # calibration sample size
    CAL_MARGIN = 1.5     # headroom over the calibrated worst case; the
                         # representation pass caps coefficients at the level
                         # by construction, the margin keeps the cap slack

    def __init__(self, d, redundancy=2.0, seed=0, calibrate=True):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        if redundancy <= 1.0:
            raise ValueError("redundancy must exceed 1")
        self.d = d
        self.N = int(round(redundancy * d))
        self.seed = seed
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((self.N, d))
        q, r = np.linalg.qr(g)
        self.S = q * np.sign(np.diag(r))
        self._memo = {}
        if calibrate:
            probes = rng.standard_normal((self.CAL_VECTORS, d))
            probes /= np.linalg.norm(probes, axis=1, keepdims=True)
            A = self._represent(probes)
            worst = float((math.sqrt(self.N) * np.abs(A).max(axis=1)).max())
            self.level = worst * self.CAL_MARGIN
        else:
            self.level = 4.0

    def analyze(self, w):
        return np.asarray(w, dtype=float) @ self.S.T

    def synthesize(self, a):
        return np.asarray(a, dtype=float) @ self.S

    def _represent(self, W, tol=1e-11, max_iter=300, cap=None):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        A = np.zeros((W.shape[0], self.N))
        R = W.copy()
        norms = np.linalg.norm(W, axis=1)
        target = tol * np.maximum(norms, 1e-300)
        if cap is not None:
            budget = cap * norms[:, None] / math.sqrt(self.N)
        for _ in range(max_iter):
            C = R @ self.S.T
            lvl = self.TRUNC * np.linalg.norm(R, axis=1, keepdims=True) / math.sqrt(self.N)
            Ct = np.clip(C, -lvl, lvl)
            if cap is not None:
                # never let a cumulative coefficient leave the certified band
                Ct = np.clip(Ct, -budget - A, budget - A)
            A += Ct
            R = R - Ct @ self.S
            if np.all(np.linalg.norm(R, axis=1) <= target):
                return A
        raise FrameError("representation iteration did not converge")

    def representation(self, W):
        """Coefficients for each row of W, memoized per row."""
        W = np.atleast_2d(np.asarray(W, dtype=float))
        out = np.empty((W.shape[0], self.N))
        missing, keys = [], []
        for i in range(W.shape[0]):
            key = W[i].tobytes()
            hit = self._memo.get(key)
            if hit is None:
                missing.append(i)
                keys.append(key)
            else:
                out[i] = hit
        if missing:
            A = self._represent(W[missing], cap=self.level)
            norms = np.linalg.norm(W[missing], axis=1)
            bound = self.level * norms / math.sqrt(self.N)
            if np.any(np.abs(A).max(axis=1) > bound + 1e-12):
                raise FrameError("representation exceeded the calibrated level")
            for j, i in enumerate(missing):
                self._memo[keys[j]] = A[j]
                out[i] = A[j]
        return out


@lru_cache(maxsize=32)
def kashin_frame(d, redundancy=2.0, seed=0):
    return KashinFrame(d, redundancy=redundancy, seed=seed)


def geometric_median(points):
    """The sample point minimizing the median distance to the others."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 1:
        return P[0]
    D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    med = np.median(D, axis=1)
    return P[int(np.argmin(med))]


# ---------------------------------------------------------------------------
# contract bookkeeping


def padded_dim(d):
    return 1 << (d - 1).bit_length()


def ring_count_high(d, q):
    """Index k of the last dyadic ring for q > 2 (may be -1: tail only)."""
    return int(math.floor(math.log2(d) / q)) - 2


def ring_count_low(d, q):
    return int(math.floor(math.log2(d) / q)) - 2


def contract_queries(algo, d, q=None, redundancy=2.0, facets=None):
    """Exact number of oracle queries each estimator issues."""
    if algo == "linf":
        return d
    if algo == "l1":
        return padded_dim(d)
    if algo in ("l2_kashin", "ellipsoidal", "lq_low_via_l2"):
        return int(round(redundancy * d))
    if algo == "lq_high":
        k = ring_count_high(d, q)
        n_rings = max(k + 1, 0)
        return n_rings * (int(round(redundancy * d)) + d) + d
    if algo == "lq_low_vstat":
        k = ring_count_low(d, q)
        n_rings = max(k + 1, 0)
        return 2 * d * n_rings + d
    if algo == "polytope":
        return facets
    raise ValueError(f"unknown algorithm {algo!r}")


# ---------------------------------------------------------------------------
# estimators


def estimate_linf(h, eps):
    """Coordinate-wise estimation; support must lie in the unit l_inf ball."""
    _check_eps(eps)
    d = h.dim
    v = h.query_stat_batch(lambda W: np.asarray(W, dtype=float), eps)
    return MeanEstimate(v, eps, math.inf, d, {"tolerance": eps})


def estimate_l1(h, eps):
    """Hadamard-embedding estimation; support in the unit l_1 ball."""
    _check_eps(eps)
    d = h.dim
    dp = padded_dim(d)
    tau = eps / math.sqrt(2 * d)

    def phi(W):
        W = np.asarray(W, dtype=float)
        pad = np.zeros((W.shape[0], dp))
        pad[:, :d] = W
        return fwht(pad)

    v = h.query_stat_batch(phi, tau)
    est = fwht(v)[:d]  # the transform is symmetric and orthonormal
    err = math.sqrt(dp) * tau
    return MeanEstimate(est, err, 1.0, dp, {"tolerance": tau, "padded_dim": dp})


def estimate_l2(h, eps, variant="kashin", delta=0.05, redundancy=2.0,
                frame_seed=0, seed=0):
    """Euclidean-norm estimation; support in the unit l_2 ball."""
    _check_eps(eps)
    if variant == "kashin":
        return _estimate_l2_kashin(h, eps, redundancy, frame_seed)
    if variant == "rotation":
        return _estimate_l2_rotation(h, eps, delta, seed)
    raise ValueError(f"unknown l2 variant {variant!r}")


def _estimate_l2_kashin(h, eps, redundancy, frame_seed):
    d = h.dim
    frame = kashin_frame(d, redundancy, frame_seed)
    K, N = frame.level, frame.N
    scale = math.sqrt(N) / K
    tau = min(eps / K, 1.0)
    v = h.query_stat_batch(lambda W: scale * frame.representation(W), tau)
    a_hat = v / scale
    est = frame.synthesize(a_hat)
    # per-coefficient error tau/scale; Parseval gives sqrt(N) * that
    err = math.sqrt(N) * tau / scale
    return MeanEstimate(est, err, 2.0, N,
                        {"tolerance": tau, "K": K, "N": N})


def _estimate_l2_rotation(h, eps, delta, seed):
    d = h.dim
    rng = np.random.default_rng(seed)
    eps_rep = eps / 3.0   # the median step certifies 3x the per-run error
    delta_rep = 1.0 / 8.0
    a = math.sqrt(2.0 * math.log(16.0 / (delta_rep * eps_rep ** 2)) / d)
    tau = min(eps_rep / (2.0 * a * math.sqrt(d)), 1.0)
    k = max(3, math.ceil(4.0 * math.log(1.0 / delta)))
    if k % 2 == 0:
        k += 1
    reps = np.empty((k, d))
    for i in range(k):
        U = random_orthogonal(d, rng)
        phi = lambda W: truncate_coords(np.asarray(W, float) @ U.T, a) / a
        v = h.query_stat_batch(phi, tau) * a
        reps[i] = v @ U
    est = geometric_median(reps)
    return MeanEstimate(est, eps, 2.0, k * d,
                        {"tolerance": tau, "truncation": a, "repetitions": k,
                         "delta": delta})


def _ring_mask(W, j):
    aw = np.abs(W)
    return (aw > 2.0 ** (-(j + 1))) & (aw <= 2.0 ** (-j))


def estimate_lq_high(h, eps, q):
    """l_q estimation for q > 2; support in the unit l_q ball."""
    _check_eps(eps)
    if not (2.0 < q < math.inf):
        raise ValueError("q must lie in (2, inf)")
    d = h.dim
    k = ring_count_high(d, q)
    n_rings = max(k + 1, 0)
    est = np.zeros(d)
    queries = 0
    if n_rings:
        eps_ring = 2.0 ** (2.0 / q - 3.0) * eps / n_rings
        for j in range(n_rings):
            s2 = 2.0 ** ((j + 1) * (q / 2.0 - 1.0))   # l2 radius of ring j
            sinf = 2.0 ** (-j)                        # l_inf radius of ring j
            hj2 = h.push(lambda W, j=j, s2=s2: np.asarray(W, float) * _ring_mask(W, j) / s2)
            e2 = estimate_l2(hj2, min(eps_ring, 1.0))
            hjinf = h.push(lambda W, j=j, sinf=sinf: np.asarray(W, float) * _ring_mask(W, j) / sinf)
            einf = estimate_linf(hjinf, min(eps_ring, 1.0))
            queries += e2.queries + einf.queries
            lo = sinf * (einf.value - eps_ring)
            hi = sinf * (einf.value + eps_ring)
            est += np.clip(s2 * e2.value, lo, hi)
    # tail: coordinates at or below the last ring threshold
    c = min(2.0 ** (-(k + 1)), 1.0)
    tau_tail = min(eps / (2.0 * d ** (1.0 / q) * c), 1.0)
    htail = h.push(lambda W: np.asarray(W, float) * (np.abs(W) <= c) / c)
    etail = estimate_linf(htail, tau_tail)
    est += c * etail.value
    queries += etail.queries
    return MeanEstimate(est, eps, q, queries,
                        {"rings": n_rings, "tail_tolerance": tau_tail})


def estimate_lq_low(h, eps, q, variant="auto"):
    """l_q estimation for 1 < q < 2; support in the unit l_q ball.

    variant "via_l2" pays a d^{1/q-1/2} factor in tolerance; "vstat_rings"
    uses relative-tolerance ring queries whose budget depends only on
    (log d / eps)^p; "auto" picks the cheaper estimation complexity.
    """
    _check_eps(eps)
    if not (1.0 < q < 2.0):
        raise ValueError("q must lie in (1, 2)")
    d = h.dim
    if variant == "auto":
        p = q / (q - 1.0)
        cost_l2 = d ** (1.0 - 2.0 / q) / eps ** 2       # 1/tau^2 scaling
        k = max(ring_count_low(d, q) + 1, 0)
        cost_rings = ((2 * k + 3) * 8.0 / eps) ** p
        variant = "via_l2" if cost_l2 <= cost_rings else "vstat_rings"
    if variant == "via_l2":
        eps2 = eps * d ** (0.5 - 1.0 / q)
        inner = estimate_l2(h, min(eps2, 1.0))
        return MeanEstimate(inner.value, eps, q, inner.queries,
                            {"variant": "via_l2", "l2_error": eps2})
    if variant != "vstat_rings":
        raise ValueError(f"unknown lq_low variant {variant!r}")
    return _estimate_lq_low_vstat(h, eps, q)


def _estimate_lq_low_vstat(h, eps, q):
    d = h.dim
    p = q / (q - 1.0)
    k = ring_count_low(d, q)
    n_rings = max(k + 1, 0)
    eps_part = eps / (2 * n_rings + 1)
    est = np.zeros(d)
    queries = 0
    n_ring = math.ceil((8.0 / eps_part) ** p)
    for j in range(n_rings):
        for sign in (1.0, -1.0):
            def phi(W, j=j, sign=sign):
                Wp = np.maximum(sign * np.asarray(W, float), 0.0)
                return (2.0 ** j) * Wp * _ring_mask(Wp, j)

            v = h.query_vstat_batch(phi, n_ring)
            v = np.where(v >= 2.0 / n_ring, v, 0.0)  # kill spurious mass
            est += sign * (2.0 ** (-j)) * v
            queries += d
    # tail
    c = min(2.0 ** (-(k + 1)), 1.0)
    n_tail = math.ceil((2.0 * c * d ** (1.0 / q) / eps_part) ** 2)

    def phi_tail(W):
        W = np.asarray(W, float)
        return (W * (np.abs(W) <= c) + c) / (2.0 * c)

    vt = h.query_vstat_batch(phi_tail, n_tail)
    est += 2.0 * c * vt - c
    queries += d
    return MeanEstimate(est, eps, q, queries,
                        {"variant": "vstat_rings", "rings": n_rings,
                         "n_ring": n_ring, "n_tail": n_tail})


def estimate_ellipsoidal(h, eps, ell, redundancy=2.0, frame_seed=0):
    """Estimation in the norm of the ellipsoid containing the support."""
    _check_eps(eps)
    hw = h.push(lambda W: ell.whiten(W))
    inner = _estimate_l2_kashin(hw, eps, redundancy, frame_seed)
    est = ell.unwhiten(inner.value)
    return MeanEstimate(est, eps, 2.0, inner.queries,
                        {"whitened": inner.info})


def estimate_polytope(h, eps, facet_matrix):
    """Estimation in the norm of the symmetric polytope {|Phi w| <= 1}.

    One additive query per facet pair at tolerance eps/2, then a Chebyshev
    (l_inf) regression to map facet averages back to a point.
    """
    _check_eps(eps)
    from scipy.optimize import linprog

    Phi = np.atleast_2d(np.asarray(facet_matrix, dtype=float))
    m, d = Phi.shape
    tau = eps / 2.0
    v = h.query_stat_batch(lambda W: np.asarray(W, float) @ Phi.T, tau)
    # min_w t  s.t.  -t <= (Phi w - v)_i <= t
    c = np.zeros(d + 1)
    c[-1] = 1.0
    A_ub = np.block([[Phi, -np.ones((m, 1))], [-Phi, -np.ones((m, 1))]])
    b_ub = np.concatenate([v, -v])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (d + 1))
    if not res.success:
        raise RuntimeError(f"facet regression failed: {res.message}")
    est = res.x[:d]
    return MeanEstimate(est, eps, math.inf, m,
                        {"tolerance": tau, "facets": m,
                         "residual": float(res.x[-1])})


def _check_eps(eps):
    if not (0.0 < eps):
        raise ValueError("target error must be positive")
