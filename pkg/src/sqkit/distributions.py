"""Synthetic finite-support distributions used by the experiments and tests.

Every family returns a DistributionSource together with its exact mean, so
estimator error can be measured against ground truth.  Keeping the support
finite lets the exact-expectation oracle backend answer arbitrary queries.
"""

import math

import numpy as np

from .geometry import lp_norm
from .oracle import DistributionSource


def point_mass(w):
    w = np.asarray(w, dtype=float)
    return DistributionSource(atoms=w[None, :], weights=np.array([1.0]),
                              label="point_mass"), w


def discrete(atoms, weights=None, label="discrete"):
    src = DistributionSource(atoms=atoms, weights=weights, label=label)
    return src, src.weights @ src.atoms


def lq_ball_mixture(d, q, n_atoms, seed, radius=1.0, spread=1.0):
    """Mixture of atoms in the lq ball of the given radius.

    spread < 1 pulls atoms toward a common direction, which keeps the mean
    away from zero.
    """
    rng = np.random.default_rng(seed)
    base = rng.standard_normal(d)
    atoms = np.empty((n_atoms, d))
    for i in range(n_atoms):
        v = spread * rng.standard_normal(d) + (1.0 - spread) * base
        r = rng.uniform(0.3, 1.0) * radius
        nrm = lp_norm(v, q)
        atoms[i] = v * (r / nrm) if nrm > 0 else 0.0
    w = rng.dirichlet(np.ones(n_atoms))
    return discrete(atoms, w, label=f"lq_mixture(q={q})")


def sparse_lq_mixture(d, q, n_atoms, seed, radius=1.0, nnz=None):
    """Atoms supported on a few coordinates; exercises the dyadic rings."""
    rng = np.random.default_rng(seed)
    nnz = nnz or max(1, d // 16)
    atoms = np.zeros((n_atoms, d))
    for i in range(n_atoms):
        idx = rng.choice(d, size=nnz, replace=False)
        v = rng.standard_normal(nnz) * np.exp(rng.uniform(-4, 0, size=nnz))
        atoms[i, idx] = v
        nrm = lp_norm(atoms[i], q)
        if nrm > radius:
            atoms[i] *= radius / nrm
    w = rng.dirichlet(np.ones(n_atoms))
    return discrete(atoms, w, label=f"sparse_lq(q={q})")


def ellipsoid_mixture(ell, n_atoms, seed):
    """Atoms inside the given EllipsoidSpec."""
    rng = np.random.default_rng(seed)
    d = ell.dim
    z = rng.standard_normal((n_atoms, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    z *= rng.uniform(0.2, 1.0, size=(n_atoms, 1))
    atoms = ell.unwhiten(z)
    w = rng.dirichlet(np.ones(n_atoms))
    return discrete(atoms, w, label="ellipsoid_mixture")


def margin_labeled(d, gamma, n_atoms, seed, p=2.0, radius=1.0, w_norm=1.0):
    """Labeled rows (x, y) with a margin-gamma separator.

    x lies in the lp ball of the given radius; y = sign(<w*, x>) and every
    atom satisfies y*<w*, x> >= gamma with ||w*||_q <= w_norm (q conjugate
    to p).  Rows are x coordinates followed by the label.
    """
    rng = np.random.default_rng(seed)
    q = math.inf if p == 1.0 else (1.0 if p == math.inf else p / (p - 1.0))
    if q == 1.0:
        # sparse separator, natural for l_inf examples
        wstar = np.zeros(d)
        idx = rng.choice(d, size=max(1, d // 8), replace=False)
        wstar[idx] = rng.choice([-1.0, 1.0], size=idx.size)
        wstar *= w_norm / lp_norm(wstar, 1.0)
    else:
        wstar = rng.standard_normal(d)
        wstar *= w_norm / lp_norm(wstar, q)
    atoms = np.empty((n_atoms, d + 1))
    kept = 0
    while kept < n_atoms:
        x = rng.standard_normal(d)
        nrm = lp_norm(x, p)
        x *= rng.uniform(0.5, 1.0) * radius / nrm
        m = float(np.dot(wstar, x))
        if abs(m) < gamma:
            # reflect toward the separator normal until the margin holds
            x = x + np.sign(m if m != 0 else 1.0) * 2.0 * gamma * wstar / max(np.dot(wstar, wstar), 1e-12)
            nrm = lp_norm(x, p)
            if nrm > radius:
                x *= radius / nrm
            m = float(np.dot(wstar, x))
            if abs(m) < gamma:
                continue
        atoms[kept, :d] = x
        atoms[kept, d] = 1.0 if m > 0 else -1.0
        kept += 1
    w = rng.dirichlet(np.ones(n_atoms))
    src = DistributionSource(atoms=atoms, weights=w, label="margin_labeled")
    return src, wstar


def glm_data(d, n_atoms, seed, w_radius=1.0, target=None):
    """Rows (w, z): covariates in the l2 ball and bounded real targets."""
    rng = np.random.default_rng(seed)
    covs = rng.standard_normal((n_atoms, d))
    covs *= (rng.uniform(0.3, 1.0, size=(n_atoms, 1)) * w_radius
             / np.linalg.norm(covs, axis=1, keepdims=True))
    if target is None:
        target = rng.standard_normal(d)
        target /= np.linalg.norm(target)
    z = covs @ target + 0.1 * rng.standard_normal(n_atoms)
    z = np.clip(z, -1.0, 1.0)
    atoms = np.hstack([covs, z[:, None]])
    w = rng.dirichlet(np.ones(n_atoms))
    return DistributionSource(atoms=atoms, weights=w, label="glm_data"), target
