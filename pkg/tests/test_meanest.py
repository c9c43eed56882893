import math

import numpy as np
import pytest

from sqkit import meanest
from sqkit.distributions import (discrete, ellipsoid_mixture, lq_ball_mixture,
                                 point_mass, sparse_lq_mixture)
from sqkit.geometry import EllipsoidSpec, lp_norm
from sqkit.oracle import OracleHandle

SLACK = 1.0 + 1e-9  # band arithmetic may land exactly on the bound


def handle(src, seed=0, policy="adversarial"):
    return OracleHandle(src, backend="exact_noise", noise_policy=policy,
                        seed=seed)


# ---------------------------------------------------------------------------
# frame machinery


def test_frame_parseval():
    for d in (8, 64):
        f = meanest.kashin_frame(d)
        assert np.linalg.norm(f.S.T @ f.S - np.eye(d)) <= 1e-9


def test_frame_representation_reconstructs():
    rng = np.random.default_rng(0)
    for d in (16, 128):
        f = meanest.kashin_frame(d)
        W = rng.standard_normal((50, d))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        A = f.representation(W)
        rel = np.linalg.norm(f.synthesize(A) - W, axis=1)
        assert rel.max() <= 1e-8
        # coefficients spread: sqrt(N) ||a||_inf <= level
        assert (math.sqrt(f.N) * np.abs(A).max(axis=1)).max() \
            <= f.level + 1e-9


def test_frame_level_bounded():
    for d in (16, 64, 256):
        assert meanest.kashin_frame(d).level <= 4.0


def test_geometric_median_picks_central_point():
    pts = np.vstack([np.zeros((5, 2)) + [[0.0, 0.0]],
                     np.array([[100.0, 100.0]])])
    med = meanest.geometric_median(pts)
    assert np.linalg.norm(med) < 1e-12


def test_ring_counts():
    assert meanest.ring_count_high(64, 4.0) == \
        math.floor(math.log2(64) / 4.0) - 2
    assert meanest.ring_count_high(2 ** 12, 3.0) == 2
    assert meanest.ring_count_low(64, 1.5) == \
        math.floor(math.log2(64) / 1.5) - 2


def test_padded_dim():
    assert meanest.padded_dim(1) == 1
    assert meanest.padded_dim(5) == 8
    assert meanest.padded_dim(64) == 64


# ---------------------------------------------------------------------------
# estimators: certified error holds under adversarial noise, query counts
# match the contract formulas


def _check(est, true, h, algo, d, q=None):
    err = lp_norm(est.value - true, est.norm_p)
    assert err <= est.certified_error * SLACK
    assert h.ledger.count == meanest.contract_queries(algo, d, q=q)


@pytest.mark.parametrize("seed", range(5))
def test_linf(seed):
    d, eps = 32, 0.1
    src, true = lq_ball_mixture(d, math.inf, 20, seed)
    h = handle(src, seed)
    est = meanest.estimate_linf(h, eps)
    _check(est, true, h, "linf", d)
    assert est.certified_error == eps


@pytest.mark.parametrize("seed", range(5))
def test_l1(seed):
    d, eps = 24, 0.1  # non-power-of-two exercises the padding
    src, true = lq_ball_mixture(d, 1.0, 20, seed)
    h = handle(src, seed)
    est = meanest.estimate_l1(h, eps)
    err = lp_norm(est.value - true, 1.0)
    assert err <= est.certified_error * SLACK <= eps * SLACK
    assert h.ledger.count == meanest.contract_queries("l1", d)


@pytest.mark.parametrize("seed", range(5))
def test_l2_kashin(seed):
    d, eps = 48, 0.1
    src, true = lq_ball_mixture(d, 2.0, 20, seed)
    h = handle(src, seed)
    est = meanest.estimate_l2(h, eps)
    _check(est, true, h, "l2_kashin", d)
    assert est.certified_error <= eps


def test_l2_rotation_certifies_eps():
    d, eps = 32, 0.15
    fails = 0
    for seed in range(10):
        src, true = lq_ball_mixture(d, 2.0, 20, seed)
        h = handle(src, seed, policy="uniform")
        est = meanest.estimate_l2(h, eps, variant="rotation", delta=0.05,
                                  seed=seed)
        if np.linalg.norm(est.value - true) > eps * SLACK:
            fails += 1
    assert fails <= 1  # failure probability delta = 0.05 per run


@pytest.mark.parametrize("seed", range(5))
def test_lq_high(seed):
    d, q, eps = 64, 4.0, 0.15
    src, true = sparse_lq_mixture(d, q, 20, seed)
    h = handle(src, seed)
    est = meanest.estimate_lq_high(h, eps, q)
    err = lp_norm(est.value - true, q)
    assert err <= eps * SLACK
    assert h.ledger.count == meanest.contract_queries("lq_high", d, q=q)


@pytest.mark.parametrize("variant", ["via_l2", "vstat_rings"])
@pytest.mark.parametrize("seed", range(3))
def test_lq_low(seed, variant):
    d, q, eps = 32, 1.5, 0.2
    src, true = sparse_lq_mixture(d, q, 20, seed)
    h = handle(src, seed)
    est = meanest.estimate_lq_low(h, eps, q, variant=variant)
    err = lp_norm(est.value - true, q)
    assert err <= eps * SLACK
    algo = "lq_low_via_l2" if variant == "via_l2" else "lq_low_vstat"
    assert h.ledger.count == meanest.contract_queries(algo, d, q=q)


def test_ellipsoidal():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((8, 8))
    ell = EllipsoidSpec(center=rng.standard_normal(8),
                        shape=A @ A.T + 2 * np.eye(8))
    src, true = ellipsoid_mixture(ell, 20, 1)
    h = handle(src, 1)
    est = meanest.estimate_ellipsoidal(h, 0.1, ell)
    # error is measured in the ellipsoid norm
    assert ell.norm(est.value - true) <= est.certified_error * SLACK <= 0.1 * SLACK


def test_polytope():
    rng = np.random.default_rng(2)
    m, d = 12, 6
    A = rng.standard_normal((m, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    atoms = rng.standard_normal((15, d))
    atoms /= np.abs(atoms @ A.T).max(axis=1, keepdims=True) * 1.2
    src, true = discrete(atoms)
    h = handle(src, 2)
    est = meanest.estimate_polytope(h, 0.1, A)
    # guarantee is in the polytope gauge: max_j |<a_j, err>| <= eps
    assert np.abs(A @ (est.value - true)).max() <= 0.1 * SLACK
    assert h.ledger.count == m


def test_bad_eps_rejected():
    src, _ = point_mass(np.zeros(4))
    h = handle(src)
    for bad in (0.0, -1.0, 1.5):
        with pytest.raises(ValueError):
            meanest.estimate_linf(h, bad)


def test_auto_variant_picks_cheaper_lq_low():
    # large d, moderate eps: the relative-budget ring variant is cheaper in
    # estimation complexity than squeezing the l2 tolerance
    d = 64
    n_via = meanest.contract_queries("lq_low_via_l2", d, q=1.1)
    n_vstat = meanest.contract_queries("lq_low_vstat", d, q=1.1)
    src, _ = sparse_lq_mixture(d, 1.1, 10, 0)
    h = handle(src)
    est = meanest.estimate_lq_low(h, 0.3, 1.1, variant="auto")
    assert h.ledger.count in (n_via, n_vstat)
