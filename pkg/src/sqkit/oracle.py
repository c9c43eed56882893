"""Noisy-expectation query oracles.

An algorithm never touches samples directly; it asks an OracleHandle for
approximate expectations of bounded query functions and must work for any
answers consistent with the advertised tolerance band:

* additive-tolerance queries (``query_stat``): phi maps the sample space to
  [-1, 1], the answer v satisfies |v - E[phi]| <= tau;
* relative-tolerance queries (``query_vstat``): phi maps to [0, 1], the
  answer satisfies |v - p| <= max(1/n, sqrt(p(1-p)/n)) with p = E[phi];
* conditional queries (``conditional_vstat``): for an event A with
  Pr[A] >= alpha, querying phi*1_A with budget ceil(n/alpha) yields
  |v - E[phi 1_A]| <= Pr[A]/sqrt(n);
* locally private queries (``ldp_query``): each simulated user holds one
  sample and releases phi(w) + Laplace(1/alpha) noise, which keeps the
  per-user density ratio within e^alpha.

Backends: ``exact_noise`` computes exact expectations over a finite-support
source and adds in-band noise per policy; ``sample_sim`` averages fresh
samples; ``ldp`` averages privatized reports.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


class ContractViolationError(RuntimeError):
    """A query function left its declared range, or the source cannot
    support the requested backend."""


@dataclass
class QueryLedger:
    """Running account of oracle usage: query count only ever grows, the
    worst (smallest) additive tolerance only ever shrinks, and the worst
    (largest) relative budget only ever grows."""

    count: int = 0
    worst_tolerance: float = math.inf
    worst_vstat_n: int = 0

    def record_stat(self, tau, m=1):
        self.count += m
        if tau < self.worst_tolerance:
            self.worst_tolerance = tau

    def record_vstat(self, n, m=1):
        self.count += m
        if n > self.worst_vstat_n:
            self.worst_vstat_n = int(n)

    def snapshot(self):
        return QueryLedger(self.count, self.worst_tolerance, self.worst_vstat_n)


class DistributionSource:
    """A distribution over sample rows.

    Finite-support sources carry atoms (rows) and weights and can answer
    exact expectations; sampler-only sources support the simulation
    backends. Queries are vectorized callables mapping an (n, ...) array of
    rows to an (n,) or (n, m) array of values.
    """

    def __init__(self, atoms=None, weights=None, sampler=None, label="",
                 dim=None):
        if atoms is None and sampler is None:
            raise ValueError("need atoms and/or a sampler")
        if atoms is not None:
            atoms = np.asarray(atoms, dtype=float)
            if atoms.ndim == 1:
                atoms = atoms[None, :]
            if weights is None:
                weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (atoms.shape[0],) or np.any(weights < 0):
                raise ValueError("weights must be a nonnegative vector matching atoms")
            s = weights.sum()
            if not math.isclose(s, 1.0, rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError("weights must sum to 1")
            weights = weights / s
        self.atoms = atoms
        self.weights = weights
        self._sampler = sampler
        self.label = label
        if dim is None and atoms is not None:
            dim = atoms.shape[1]
        if dim is None:
            dim = np.asarray(sampler(np.random.default_rng(0), 1)).shape[-1]
        self.dim = int(dim)

    @property
    def has_exact(self):
        return self.atoms is not None

    def exact_mean(self, phi):
        """Exact E[phi] for a finite-support source; (m,) vector for a
        batched query returning (n, m)."""
        if self.atoms is None:
            raise ContractViolationError(
                "sampler-only source cannot answer exact expectations")
        vals = np.asarray(phi(self.atoms), dtype=float)
        return self.weights @ vals

    def sample(self, rng, n):
        if self._sampler is not None:
            return self._sampler(rng, n)
        idx = rng.choice(self.atoms.shape[0], size=n, p=self.weights)
        return self.atoms[idx]

    def map(self, fn, label=None):
        """Push the source through a row-wise map (fn is vectorized)."""
        atoms = fn(self.atoms) if self.atoms is not None else None
        sampler = None
        if self._sampler is not None:
            base = self._sampler
            sampler = lambda rng, n: fn(base(rng, n))
        dim = None
        if atoms is None:
            probe = fn(self._sampler(np.random.default_rng(0), 1))
            dim = np.asarray(probe).shape[-1]
        return DistributionSource(atoms=atoms, weights=self.weights,
                                  sampler=sampler,
                                  label=label or self.label, dim=dim)


def _as_2d(vals):
    vals = np.asarray(vals, dtype=float)
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    return vals, squeeze


class OracleHandle:
    """Query endpoint bound to one distribution source.

    noise_policy (exact_noise backend only):
      * "zero"        - answers are exact expectations;
      * "uniform"     - independent uniform noise over the tolerance band;
      * "adversarial" - noise saturating the band, pushed in the direction
        of the per-query hint (+1/-1), alternating when no hint is given.
    """

    SAMPLE_SIM_FAIL = 1e-6  # per-query failure probability of sample_sim
    LDP_FAIL = 1e-3         # default per-query failure probability of ldp

    def __init__(self, source, backend="exact_noise", noise_policy="zero",
                 seed=0, ldp_alpha=1.0, range_check=True):
        if backend not in ("exact_noise", "sample_sim", "ldp"):
            raise ValueError(f"unknown backend {backend!r}")
        if noise_policy not in ("zero", "uniform", "adversarial"):
            raise ValueError(f"unknown noise policy {noise_policy!r}")
        if backend == "exact_noise" and not source.has_exact:
            raise ContractViolationError(
                "exact_noise backend needs a finite-support source")
        self.source = source
        self.backend = backend
        self.noise_policy = noise_policy
        self.rng = np.random.default_rng(seed)
        self.ldp_alpha = ldp_alpha
        self.range_check = range_check
        self.ledger = QueryLedger()
        self.dim = source.dim
        # alternating adversarial sign state; an iterator so pushed views
        # share it by reference
        self._flip = itertools.count()

    # -- helpers ----------------------------------------------------------

    def _check_range(self, vals, lo, hi):
        if not self.range_check:
            return
        if vals.size and (vals.min() < lo - 1e-9 or vals.max() > hi + 1e-9):
            raise ContractViolationError(
                f"query values in [{vals.min():.4g}, {vals.max():.4g}] "
                f"leave the declared range [{lo}, {hi}]")

    def _noise_signs(self, m, hint):
        if hint is not None:
            h = np.broadcast_to(np.asarray(hint, dtype=float), (m,))
            return np.sign(h) + (h == 0)
        return np.array([1.0 if next(self._flip) % 2 == 0 else -1.0
                         for _ in range(m)])

    def _probe_values(self, phi):
        if self.source.has_exact:
            return np.asarray(phi(self.source.atoms), dtype=float)
        probe = self.source.sample(self.rng, 64)
        return np.asarray(phi(probe), dtype=float)

    # -- additive-tolerance queries --------------------------------------

    def query_stat(self, phi, tau, hint=None):
        """Answer within tau of E[phi]; phi maps rows to [-1, 1]."""
        return float(self.query_stat_batch(lambda W: np.asarray(phi(W))[:, None],
                                           tau, hint=None if hint is None else [hint])[0])

    def query_stat_batch(self, phi, tau, hint=None):
        """Batched form: phi maps (n, ...) rows to (n, m); counts m queries."""
        if not (0 < tau <= 1):
            raise ValueError("tolerance must lie in (0, 1]")
        if self.backend == "ldp":
            return self._ldp_batch(phi, tau, lo=-1.0, hi=1.0)
        if self.backend == "sample_sim":
            n = math.ceil(2.0 * math.log(1.0 / self.SAMPLE_SIM_FAIL) / tau ** 2)
            W = self.source.sample(self.rng, n)
            vals, _ = _as_2d(phi(W))
            self._check_range(vals, -1.0, 1.0)
            ans = vals.mean(axis=0)
            self.ledger.record_stat(tau, m=ans.shape[0])
            return np.clip(ans, -1.0, 1.0)
        vals, _ = _as_2d(phi(self.source.atoms))
        self._check_range(vals, -1.0, 1.0)
        truth = self.source.weights @ vals
        m = truth.shape[0]
        if self.noise_policy == "zero":
            ans = truth
        elif self.noise_policy == "uniform":
            ans = truth + self.rng.uniform(-tau, tau, size=m)
        else:
            ans = truth + tau * self._noise_signs(m, hint)
        self.ledger.record_stat(tau, m=m)
        return np.clip(ans, -1.0, 1.0)

    # -- relative-tolerance queries --------------------------------------

    def query_vstat(self, phi, n, hint=None):
        """Answer within max(1/n, sqrt(p(1-p)/n)) of p = E[phi]; phi in [0,1]."""
        return float(self.query_vstat_batch(lambda W: np.asarray(phi(W))[:, None],
                                            n, hint=None if hint is None else [hint])[0])

    def query_vstat_batch(self, phi, n, hint=None):
        if n < 1:
            raise ValueError("budget n must be >= 1")
        n = int(n)
        if self.backend == "ldp":
            # simulate at the equivalent additive tolerance 1/sqrt(n)
            return self._ldp_batch(phi, 1.0 / math.sqrt(n), lo=0.0, hi=1.0,
                                   vstat_n=n)
        if self.backend == "sample_sim":
            W = self.source.sample(self.rng, n)
            vals, _ = _as_2d(phi(W))
            self._check_range(vals, 0.0, 1.0)
            ans = vals.mean(axis=0)
            self.ledger.record_vstat(n, m=ans.shape[0])
            return np.clip(ans, 0.0, 1.0)
        vals, _ = _as_2d(phi(self.source.atoms))
        self._check_range(vals, 0.0, 1.0)
        p = np.clip(self.source.weights @ vals, 0.0, 1.0)
        band = np.maximum(1.0 / n, np.sqrt(p * (1.0 - p) / n))
        m = p.shape[0]
        if self.noise_policy == "zero":
            ans = p
        elif self.noise_policy == "uniform":
            ans = p + self.rng.uniform(-1.0, 1.0, size=m) * band
        else:
            ans = p + band * self._noise_signs(m, hint)
        self.ledger.record_vstat(n, m=m)
        return np.clip(ans, 0.0, 1.0)

    # -- conditional queries ---------------------------------------------

    def conditional_vstat(self, phi, cond, alpha, n, hint=None):
        """Estimate E[phi * 1_cond] with error <= Pr[cond]/sqrt(n), given the
        certified lower bound Pr[cond] >= alpha.  Internally a single
        relative-tolerance query with budget ceil(n/alpha)."""
        return float(self.conditional_vstat_batch(
            lambda W: np.asarray(phi(W))[:, None], cond, alpha, n,
            hint=None if hint is None else [hint])[0])

    def conditional_vstat_batch(self, phi, cond, alpha, n, hint=None):
        if not (0 < alpha <= 1):
            raise ValueError("alpha must lie in (0, 1]")
        big = math.ceil(n / alpha)

        def masked(W):
            vals, _ = _as_2d(phi(W))
            mask = np.asarray(cond(W), dtype=float)
            return vals * mask[:, None]

        return self.query_vstat_batch(masked, big, hint=hint)

    # -- locally private queries -----------------------------------------

    def ldp_n_users(self, tau, alpha=None, delta_fail=None):
        alpha = self.ldp_alpha if alpha is None else alpha
        delta_fail = self.LDP_FAIL if delta_fail is None else delta_fail
        return math.ceil(8.0 * math.log(2.0 / delta_fail) / (alpha * tau) ** 2)

    def ldp_query(self, phi, tau, alpha=None, delta_fail=None):
        """Estimate E[phi] (phi in [0,1]) from one Laplace-privatized report
        per simulated user; each user's released density ratio is at most
        e^alpha."""
        return float(self._ldp_batch(lambda W: np.asarray(phi(W))[:, None],
                                     tau, lo=0.0, hi=1.0,
                                     alpha=alpha, delta_fail=delta_fail)[0])

    def _ldp_batch(self, phi, tau, lo, hi, alpha=None, delta_fail=None,
                   vstat_n=None):
        alpha = self.ldp_alpha if alpha is None else alpha
        if alpha <= 0:
            raise ValueError("privacy parameter must be positive")
        n = self.ldp_n_users(tau, alpha, delta_fail)
        W = self.source.sample(self.rng, n)
        vals, _ = _as_2d(phi(W))
        self._check_range(vals, lo, hi)
        span = hi - lo
        reports = vals + self.rng.laplace(0.0, span / alpha, size=vals.shape)
        ans = reports.mean(axis=0)
        if vstat_n is not None:
            self.ledger.record_vstat(vstat_n, m=ans.shape[0])
        else:
            self.ledger.record_stat(tau, m=ans.shape[0])
        return np.clip(ans, lo, hi)

    # -- views ------------------------------------------------------------

    def push(self, fn, label=None):
        """Oracle view over the mapped source; shares ledger, rng and noise
        state with the parent, so query accounting stays unified."""
        view = OracleHandle.__new__(OracleHandle)
        view.__dict__.update(self.__dict__)
        view.source = self.source.map(fn, label=label)
        view.dim = view.source.dim
        return view


class ConditionalStatAdapter:
    """Additive-tolerance query interface to a conditional distribution.

    Given an event with certified probability lower bound alpha and an
    estimate p_hat of it, answers queries about E[phi | event] through
    conditional relative-tolerance queries on the parent, dividing by the
    estimated event probability.  For a requested tolerance tau it uses
    budget n = ceil((6/tau + 1)^2), which keeps the combined shift /
    division error within tau for any in-band parent answers.
    """

    def __init__(self, parent, cond, alpha, row_map=None, dim=None):
        self.parent = parent
        self.cond = cond
        self.alpha = alpha
        self.row_map = row_map if row_map is not None else (lambda W: W)
        self.dim = dim if dim is not None else parent.dim

    def query_stat(self, phi, tau, hint=None):
        return float(self.query_stat_batch(
            lambda W: np.asarray(phi(W))[:, None], tau)[0])

    def query_stat_batch(self, phi, tau, hint=None):
        n = math.ceil((6.0 / tau + 1.0) ** 2)
        shifted = lambda W: (_as_2d(phi(self.row_map(W)))[0] + 1.0) / 2.0
        ans01 = self.parent.conditional_vstat_batch(
            shifted, self.cond, self.alpha, n, hint=hint)
        p_hat = self.parent.conditional_vstat(
            lambda W: np.ones(np.asarray(W).shape[0]), self.cond, self.alpha, n)
        p_hat = max(p_hat, self.alpha / 2.0)
        # E[phi 1_A] = 2 E[(phi+1)/2 1_A] - Pr[A]
        est = (2.0 * ans01 - p_hat) / p_hat
        return np.clip(est, -1.0, 1.0)

    def push(self, fn, label=None):
        """Adapter view with `fn` composed after the current row map, so the
        frame/ring estimators can reshape the conditional distribution."""
        prev = self.row_map
        view = ConditionalStatAdapter(self.parent, self.cond, self.alpha,
                                      row_map=lambda W: fn(prev(W)))
        probe = np.atleast_2d(np.asarray(fn(np.zeros((1, self.dim)))))
        view.dim = probe.shape[1]
        return view

    @property
    def ledger(self):
        return self.parent.ledger
