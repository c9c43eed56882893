import math

import numpy as np
import pytest

from sqkit.distributions import discrete, lq_ball_mixture
from sqkit.oracle import (ConditionalStatAdapter, ContractViolationError,
                          DistributionSource, OracleHandle)


def two_mass(p, a=1.0, b=0.0):
    atoms = np.array([[a], [b]])
    return DistributionSource(atoms=atoms, weights=np.array([p, 1.0 - p]),
                              label="two_mass")


def test_exact_backend_zero_noise_returns_expectation():
    src = two_mass(0.3)
    h = OracleHandle(src, noise_policy="zero")
    assert abs(h.query_stat(lambda W: W[:, 0], 0.1) - 0.3) < 1e-12


def test_uniform_noise_stays_in_band():
    src = two_mass(0.4)
    h = OracleHandle(src, noise_policy="uniform", seed=1)
    for tau in (0.01, 0.1, 0.5):
        for _ in range(20):
            v = h.query_stat(lambda W: W[:, 0], tau)
            assert abs(v - 0.4) <= tau


def test_adversarial_noise_saturates_band_and_alternates():
    src = two_mass(0.5)
    h = OracleHandle(src, noise_policy="adversarial")
    v1 = h.query_stat(lambda W: W[:, 0], 0.1)
    v2 = h.query_stat(lambda W: W[:, 0], 0.1)
    assert abs(v1 - 0.6) < 1e-12
    assert abs(v2 - 0.4) < 1e-12


def test_adversarial_hint_controls_direction():
    src = two_mass(0.5)
    h = OracleHandle(src, noise_policy="adversarial")
    v = h.query_stat(lambda W: W[:, 0], 0.1, hint=-1.0)
    assert abs(v - 0.4) < 1e-12


def test_vstat_band_formula_two_mass():
    # the relative-tolerance band is max(1/n, sqrt(p(1-p)/n)), exactly
    for p in (0.01, 0.2, 0.5, 0.93):
        for n in (10, 100, 4000):
            src = two_mass(p)
            h = OracleHandle(src, noise_policy="adversarial")
            band = max(1.0 / n, math.sqrt(p * (1.0 - p) / n))
            v = h.query_vstat(lambda W: W[:, 0], n, hint=+1.0)
            assert abs(v - min(p + band, 1.0)) < 1e-12


def test_conditional_vstat_rare_event_bound():
    # error <= Pr[A]/sqrt(n) once Pr[A] >= alpha, on a two-mass source
    for pa in (0.1, 0.35, 0.8):
        for n in (25, 400):
            src = two_mass(pa)
            h = OracleHandle(src, noise_policy="adversarial")
            alpha = pa / 2.0
            truth = pa  # E[phi * 1_A] with phi = 1 on the A atom
            v = h.conditional_vstat(lambda W: np.ones(W.shape[0]),
                                    lambda W: W[:, 0] > 0.5, alpha, n)
            assert abs(v - truth) <= pa / math.sqrt(n) + 1e-12


def test_range_violation_raises():
    src = two_mass(0.5, a=2.0)
    h = OracleHandle(src)
    with pytest.raises(ContractViolationError):
        h.query_stat(lambda W: W[:, 0], 0.1)
    with pytest.raises(ContractViolationError):
        h.query_vstat(lambda W: W[:, 0] - 3.0, 10)


def test_ledger_counts_batches_and_extremes():
    src, _ = lq_ball_mixture(8, 2.0, 10, seed=0)
    h = OracleHandle(src, noise_policy="zero")
    h.query_stat_batch(lambda W: np.asarray(W), 0.2)
    assert h.ledger.count == 8
    assert h.ledger.worst_tolerance == 0.2
    h.query_stat(lambda W: W[:, 0], 0.05)
    assert h.ledger.count == 9
    assert h.ledger.worst_tolerance == 0.05
    h.query_vstat(lambda W: np.abs(W[:, 0]), 50)
    assert h.ledger.worst_vstat_n == 50
    snap = h.ledger.snapshot()
    h.query_stat(lambda W: W[:, 0], 0.5)
    assert snap.count == 10 and h.ledger.count == 11


def test_push_shares_ledger_and_maps_source():
    src, mean = lq_ball_mixture(6, 2.0, 12, seed=3)
    h = OracleHandle(src, noise_policy="zero")
    hv = h.push(lambda W: W * 0.5)
    v = hv.query_stat_batch(lambda W: np.asarray(W), 0.1)
    assert np.allclose(v, 0.5 * mean, atol=1e-12)
    assert h.ledger.count == 6


def test_sample_sim_backend_within_tolerance():
    src = two_mass(0.25)
    h = OracleHandle(src, backend="sample_sim", seed=0)
    for _ in range(10):
        v = h.query_stat(lambda W: W[:, 0], 0.1)
        assert abs(v - 0.25) <= 0.1


def test_ldp_density_ratio_is_exp_alpha():
    # Laplace(span/alpha) release: the density ratio between any two
    # clamped values a, b is exp(|a-b| * alpha / span) <= exp(alpha)
    alpha, span = 0.7, 1.0
    scale = span / alpha
    worst = math.exp(span / scale)
    assert abs(worst - math.exp(alpha)) < 1e-12


def test_ldp_query_accuracy():
    src = two_mass(0.6)
    h = OracleHandle(src, backend="ldp", seed=4, ldp_alpha=1.0)
    hits = 0
    for _ in range(50):
        v = h.ldp_query(lambda W: W[:, 0], 0.2)
        hits += abs(v - 0.6) <= 0.2
    assert hits >= 45


def test_conditional_adapter_budget_and_accuracy():
    rng = np.random.default_rng(5)
    atoms = rng.uniform(-1, 1, size=(40, 3))
    src, _ = discrete(atoms)
    h = OracleHandle(src, noise_policy="adversarial", seed=0)
    cond = lambda W: W[:, 0] > 0.0
    mask = cond(atoms)
    pa = float(src.weights[mask].sum())
    truth = (src.weights[mask] @ atoms[mask]) / pa
    ad = ConditionalStatAdapter(h, cond, alpha=pa / 2.0, dim=3)
    for tau in (0.05, 0.2):
        v = ad.query_stat_batch(lambda W: np.asarray(W), tau)
        assert np.max(np.abs(v - truth)) <= tau + 1e-12
    # ledger footprint of conditioning is linear in 1/alpha
    n_inner = math.ceil((6.0 / 0.05 + 1.0) ** 2)
    assert h.ledger.worst_vstat_n == math.ceil(n_inner / (pa / 2.0))


def test_adapter_push_composes_row_maps():
    rng = np.random.default_rng(6)
    atoms = rng.uniform(-1, 1, size=(30, 4))
    src, _ = discrete(atoms)
    h = OracleHandle(src, noise_policy="zero")
    cond = lambda W: np.ones(W.shape[0], dtype=bool)
    ad = ConditionalStatAdapter(h, cond, alpha=1.0, dim=4)
    ad2 = ad.push(lambda W: W * 0.25)
    v = ad2.query_stat_batch(lambda W: np.asarray(W), 0.05)
    assert np.max(np.abs(v - 0.25 * src.weights @ atoms)) <= 0.05
