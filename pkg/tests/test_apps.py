import math

import numpy as np
import pytest

from sqkit import apps
from sqkit.distributions import discrete, glm_data, margin_labeled
from sqkit.oracle import OracleHandle


def labeled(d, gamma, seed, p=2.0, n_atoms=200):
    src, wstar = margin_labeled(d, gamma, n_atoms, seed, p=p)
    D = apps.LabeledDistribution(src, p=p, R=1.0, W=1.0, gamma=gamma)
    return D, src, wstar


def handle(src, seed=0):
    return OracleHandle(src, noise_policy="adversarial", seed=seed)


def mc_violation(src, w, thresh, seed=0, n=10 ** 4):
    rng = np.random.default_rng(seed)
    S = rng.choice(src.atoms.shape[0], size=n, p=src.weights)
    rows = src.atoms[S]
    return float(np.mean(rows[:, -1] * (rows[:, :-1] @ w) < thresh))


def test_margin_certificate_on_probe_samples():
    D, src, wstar = labeled(16, 0.1, 0)
    assert D.check_margin(wstar) >= 0.1 - 1e-12


def test_separable_point_masses_terminate():
    gamma = 0.2
    wstar = np.zeros(4)
    wstar[0] = 1.0
    atoms = np.array([[gamma, 0, 0, 0, 1.0], [-gamma, 0, 0, 0, -1.0]])
    src, _ = discrete(atoms)
    D = apps.LabeledDistribution(src, p=2.0, R=1.0, W=1.0, gamma=gamma)
    h = handle(src)
    res = apps.margin_perceptron_sq(D, h, eps=0.1)
    assert mc_violation(src, res.w, gamma / 2.0) == 0.0


def test_update_cap_formula_at_default_eta():
    D, src, _ = labeled(16, 0.1, 1)
    h = handle(src, 1)
    res = apps.margin_perceptron_sq(D, h, eps=0.1)
    # eta = gamma/2 makes the certified ceiling 36 R^2 W^2 / gamma^2
    assert res.info["update_cap"] == math.ceil(36.0 / 0.1 ** 2)
    assert res.updates <= res.info["update_cap"]


def test_perceptron_violation_rate():
    D, src, _ = labeled(32, 0.1, 2)
    h = handle(src, 2)
    res = apps.margin_perceptron_sq(D, h, eps=0.05)
    assert mc_violation(src, res.w, 0.05, seed=2) <= 0.05


def test_perceptron_rejects_bad_eta_and_p():
    D, src, _ = labeled(8, 0.1, 3)
    with pytest.raises(ValueError):
        apps.margin_perceptron_sq(D, handle(src), 0.1, eta=0.1)
    D_inf = apps.LabeledDistribution(src, p=math.inf, R=1.0, W=1.0,
                                     gamma=0.1)
    with pytest.raises(ValueError):
        apps.margin_perceptron_sq(D_inf, handle(src), 0.1)


def test_mean_counterexample_margin_preservation():
    # any estimate within gamma/(3W) of the true conditional mean keeps
    # 2/3 of the margin against w*
    rng = np.random.default_rng(4)
    D, src, wstar = labeled(16, 0.15, 4)
    atoms = src.atoms
    yx = atoms[:, :-1] * atoms[:, -1:]
    xbar = src.weights @ yx
    for _ in range(100):
        delta = rng.standard_normal(16)
        delta *= (0.15 / 3.0) * rng.uniform(0, 1) / np.linalg.norm(delta)
        assert float(wstar @ (xbar + delta)) >= 2.0 * 0.15 / 3.0 - 1e-12


def test_projection_nonexpansive():
    rng = np.random.default_rng(5)
    normal = rng.standard_normal(8)
    for _ in range(50):
        a = rng.standard_normal(8) * 2
        b = rng.standard_normal(8) * 2
        pa = apps._project_halfspace_ball(a, normal, 0.05, 1.0)
        pb = apps._project_halfspace_ball(b, normal, 0.05, 1.0)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9
        assert float(normal @ pa) <= 0.05 + 1e-9
        assert np.linalg.norm(pa) <= 1.0 + 1e-9


def test_pnorm_p2_matches_margin_loop_at_zero():
    D, src, _ = labeled(16, 0.1, 6)
    h = handle(src, 6)
    res = apps.pnorm_learn(D, h, eps=0.1)
    assert res.info["threshold"] == 0.0
    assert mc_violation(src, res.w, 0.0, seed=6) <= 0.1


def test_winnow_sparse_target():
    d, gamma, eps = 64, 0.1, 0.05
    D, src, _ = labeled(d, gamma, 7, p=math.inf)
    h = handle(src, 7)
    res = apps.pnorm_learn(D, h, eps)
    assert mc_violation(src, res.w, 0.0, seed=7) <= eps
    # log d factor in the update ceiling
    cap = res.info["update_cap"]
    assert cap <= math.ceil((2 * math.log(d) - 1) * math.e / (2 * gamma / 3.0) ** 2) + 1
    assert res.updates <= cap


def test_zero_violation_start_one_query():
    # a distribution whose labels all have positive margin against w=0 is
    # impossible (margin 0 counts ties), so seed w by hand via the p=2
    # learner with eta > 0 on a separating start: one VSTAT query suffices
    gamma = 0.2
    atoms = np.array([[0.5, 0.0, 1.0], [0.5, 0.0, 1.0]])
    src, _ = discrete(atoms)
    D = apps.LabeledDistribution(src, p=2.0, R=1.0, W=1.0, gamma=gamma)
    h = OracleHandle(src, noise_policy="zero")
    res = apps.margin_perceptron_sq(D, h, eps=0.5, eta=0.1)
    # w = 0 gives margin 0 >= eta? no: 0 < 0.1, so one update then stop
    assert res.queries == h.ledger.count
    assert res.violation_estimate < 0.375


def test_vstat_cap_helper_dominates_ledger():
    D, src, _ = labeled(32, 0.1, 8)
    h = handle(src, 8)
    apps.margin_perceptron_sq(D, h, eps=0.1)
    assert h.ledger.worst_vstat_n <= apps.perceptron_vstat_cap(D, 0.1)


# ---------------------------------------------------------------------------
# GLM


def test_glm_losses():
    sq = apps.make_loss("squared")
    assert sq.value(2.0, 1.0) == 0.5
    assert sq.deriv(2.0, 1.0) == 1.0
    hg = apps.make_loss("hinge")
    assert hg.value(np.array([0.5]), np.array([1.0]))[0] == 0.5
    ab = apps.make_loss("abs")
    assert ab.L0 == 1.0 and ab.L1 is None
    with pytest.raises(apps.GLMConfigError):
        apps.make_loss("nope")


def test_glm_dispatch_paths():
    src, _ = glm_data(8, 40, 0)
    for loss, lam, path in (("squared", 0.5, "strongly_convex"),
                            ("squared", 0.0, "accelerated"),
                            ("hinge", 0.0, "mirror_descent")):
        spec = apps.GLMSpec(loss=apps.make_loss(loss), W=1.0, R=1.0, lam=lam)
        h = OracleHandle(src, noise_policy="adversarial", seed=0)
        res = apps.glm_solve(spec, src, h, eps=0.2)
        assert res.info["path"] == path


def test_glm_least_squares_point_mass_recovers_optimum():
    # single-atom data: F(x) = 0.5 (<w0, x> - z0)^2, minimized on the
    # segment of solutions; the normal-equations value at the optimum is 0
    w0 = np.array([0.6, 0.0, 0.0])
    atoms = np.array([np.r_[w0, 0.3]])
    src, _ = discrete(atoms)
    spec = apps.GLMSpec(loss=apps.make_loss("squared"), W=1.0, R=1.0)
    h = OracleHandle(src, noise_policy="adversarial", seed=1)
    res = apps.glm_solve(spec, src, h, eps=0.05)
    prob = apps.glm_problem(spec, src)
    assert prob.expected_value(res.x) <= 0.05


def test_glm_ridge_gap_to_closed_form():
    d, lam = 6, 0.4
    src, _ = glm_data(d, 30, 2)
    spec = apps.GLMSpec(loss=apps.make_loss("squared"), W=1.0, R=2.0, lam=lam)
    h = OracleHandle(src, noise_policy="adversarial", seed=2)
    res = apps.glm_solve(spec, src, h, eps=0.1)
    # closed-form ridge: (E ww^T + 2 lam I) x = E z w
    covs, z = src.atoms[:, :d], src.atoms[:, -1]
    A = (covs * src.weights[:, None]).T @ covs + 2 * lam * np.eye(d)
    b = src.weights @ (covs * z[:, None])
    xstar = np.linalg.solve(A, b)
    prob = apps.glm_problem(spec, src)
    gap = prob.expected_value(res.x) - prob.expected_value(xstar)
    assert gap <= 0.1 * (1 + 1e-9)


def test_glm_no_constants_errors():
    src, _ = glm_data(4, 10, 3)
    loss = apps.GLMLoss("mystery", lambda s, z: s * 0, lambda s, z: s * 0,
                        L0=math.nan, L1=None, bound=lambda s: 1.0)
    spec = apps.GLMSpec(loss=loss, W=1.0, R=1.0)
    h = OracleHandle(src, noise_policy="zero")
    with pytest.raises(apps.GLMConfigError):
        apps.glm_solve(spec, src, h, eps=0.1)
