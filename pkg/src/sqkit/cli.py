"""Configuration-driven experiment runner.

Experiments are described by small YAML files (task, distribution, oracle,
algorithm, seed); every run produces a RunReport whose achieved error is
checked against the certified bound whenever the oracle backend is exact,
and reports are emitted as a tab-separated table with a stable column
order.  The normalized config is echoed so a run can be reproduced
bit-for-bit from its own report artifacts.
"""

import math
import sys
import time
from dataclasses import dataclass, field

import click
import numpy as np
import yaml

from . import apps, cutplane, distributions, firstorder, meanest
from .geometry import lp_norm, lp_setup
from .oracle import OracleHandle

TASKS = ("mean_estimate", "optimize", "perceptron", "ldp", "cog", "anneal",
         "bench_suite")
COLUMNS = ("task", "d", "q", "eps", "tolerance", "vstat_n", "queries",
           "achieved", "certified", "seed", "ms")


class ConfigError(ValueError):
    """Raised with every schema violation listed, not just the first."""


class CertificationError(AssertionError):
    """An exact-backend run achieved more error than it certified."""


DEFAULTS = {
    "task": None,
    "seed": 0,
    "out": None,
    "distribution": {"family": "lq_ball", "d": 64, "q": 2.0, "n_atoms": 50,
                     "radius": 1.0, "spread": 1.0, "gamma": 0.1, "w_norm": 1.0},
    "oracle": {"backend": "exact_noise", "noise": "adversarial",
               "alpha": 1.0, "delta": 1e-3},
    "algorithm": {"name": None, "eps": 0.1, "q": 2.0, "p": 2.0, "T": 100,
                  "eta": None, "variant": "auto", "B": 1.0, "R": 1.0,
                  "lam": 0.0, "loss": "squared", "delta": 0.25},
}


def normalize_config(cfg):
    """Fill defaults and validate; returns the normalized dict or raises
    ConfigError listing every violation."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    out = {}
    errors = []
    # cutting-plane tasks sample high-dimensional bodies; keep the default
    # dimension small unless the config asks otherwise
    if cfg.get("task") in ("cog", "anneal") and \
            "d" not in cfg.get("distribution", {}):
        cfg = dict(cfg)
        cfg["distribution"] = dict(cfg.get("distribution", {}) or {}, d=3)
    known = set(DEFAULTS)
    for k in cfg:
        if k not in known:
            errors.append(f"unknown key {k!r}")
    for key, default in DEFAULTS.items():
        if isinstance(default, dict):
            sub = dict(default)
            given = cfg.get(key, {})
            if not isinstance(given, dict):
                errors.append(f"{key!r} must be a mapping")
                given = {}
            for k in given:
                if k not in default:
                    errors.append(f"unknown key {key}.{k}")
            sub.update({k: v for k, v in given.items() if k in default})
            out[key] = sub
        else:
            out[key] = cfg.get(key, default)
    if out["task"] not in TASKS:
        errors.append(f"task must be one of {TASKS}, got {out['task']!r}")
    if out["oracle"]["backend"] not in ("exact_noise", "sample_sim", "ldp"):
        errors.append(f"unknown backend {out['oracle']['backend']!r}")
    if out["oracle"]["noise"] not in ("zero", "uniform", "adversarial"):
        errors.append(f"unknown noise policy {out['oracle']['noise']!r}")
    eps = out["algorithm"]["eps"]
    if not (isinstance(eps, (int, float)) and 0 < eps <= 1):
        errors.append(f"algorithm.eps must lie in (0, 1], got {eps!r}")
    if not isinstance(out["seed"], int):
        errors.append("seed must be an integer")
    if errors:
        raise ConfigError("; ".join(errors))
    return out


@dataclass
class RunReport:
    task: str
    d: int
    q: float
    eps: float
    achieved: float
    certified: float
    queries: int
    tolerance: float
    vstat_n: int
    seed: int
    ms: float
    config: dict = field(default_factory=dict)

    def row(self):
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)
        return [fmt(getattr(self, c)) for c in COLUMNS]


def _make_handle(cfg, source):
    o = cfg["oracle"]
    return OracleHandle(source, backend=o["backend"], noise_policy=o["noise"],
                        seed=cfg["seed"], ldp_alpha=o["alpha"])


def _make_distribution(cfg):
    """(source, exact mean) for the configured synthetic family."""
    dd = cfg["distribution"]
    fam, d, seed = dd["family"], dd["d"], cfg["seed"]
    if fam == "point_mass":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(d)
        w *= dd["radius"] / lp_norm(w, dd["q"])
        return distributions.point_mass(w)
    if fam == "lq_ball":
        return distributions.lq_ball_mixture(d, dd["q"], dd["n_atoms"], seed,
                                             radius=dd["radius"],
                                             spread=dd["spread"])
    if fam == "sparse_lq":
        return distributions.sparse_lq_mixture(d, dd["q"], dd["n_atoms"], seed,
                                               radius=dd["radius"])
    raise ConfigError(f"unknown distribution family {dd['family']!r}")


def _mean_estimate(cfg):
    alg = cfg["algorithm"]
    q, eps = alg["q"], alg["eps"]
    src, true = _make_distribution(cfg)
    h = _make_handle(cfg, src)
    if q == math.inf:
        est = meanest.estimate_linf(h, eps)
    elif q == 1.0:
        est = meanest.estimate_l1(h, eps)
    elif q == 2.0:
        est = meanest.estimate_l2(h, eps, variant=alg["variant"]
                                  if alg["variant"] != "auto" else "kashin")
    elif q > 2.0:
        est = meanest.estimate_lq_high(h, eps, q)
    else:
        est = meanest.estimate_lq_low(h, eps, q, variant=alg["variant"])
    achieved = lp_norm(est.value - true, q)
    return achieved, est.certified_error, h


def _linear_problem(src, R):
    # F(x) = <mean, x>; minimum over the lp ball is -R * dual norm of mean
    d = src.dim
    return firstorder.StochasticProblem(
        source=src,
        value=lambda x, W: np.atleast_2d(W) @ x,
        grad=lambda x, W: np.atleast_2d(np.asarray(W, float)),
        d=d, L0=1.0, B=max(R, 1.0))


def _quadratic_problem(src, R):
    # F(x) = E 0.5|x - w|^2, smooth and 1-strongly convex
    d = src.dim
    return firstorder.StochasticProblem(
        source=src,
        value=lambda x, W: 0.5 * np.sum((x - np.atleast_2d(W)) ** 2, axis=1),
        grad=lambda x, W: x - np.atleast_2d(np.asarray(W, float)),
        d=d, L0=2.0 * max(R, 1.0), L1=1.0, kappa=1.0,
        B=0.5 * (R + 1.0) ** 2 + 0.5)


def _optimize(cfg):
    alg = cfg["algorithm"]
    p, eps, T, R = alg["p"], alg["eps"], alg["T"], alg["R"]
    src, mean = _make_distribution(cfg)
    h = _make_handle(cfg, src)
    name = alg["name"] or "mirror_descent"
    if name == "mirror_descent":
        prob = _linear_problem(src, R)
        setup = lp_setup(p, src.dim, R)
        res = firstorder.mirror_descent(h, prob, setup, T, eps)
        qq = math.inf if p == 1.0 else p / (p - 1.0)
        fstar = -R * lp_norm(mean, qq)
        achieved = float(mean @ res.x) - fstar
    elif name == "accelerated":
        prob = _quadratic_problem(src, R)
        setup = lp_setup(2.0, src.dim, R)
        res = firstorder.accelerated_descent(h, prob, setup, T, eps)
        achieved = prob.expected_value(res.x) - _quad_opt(prob, mean, R)
    elif name == "strongly_convex":
        prob = _quadratic_problem(src, R)
        res = firstorder.strongly_convex_solve(h, prob, T, eps, R)
        achieved = prob.expected_value(res.x) - _quad_opt(prob, mean, R)
    elif name == "glm":
        return _glm(cfg)
    else:
        raise ConfigError(f"unknown optimizer {name!r}")
    return achieved, res.gap_bound, h


def _quad_opt(prob, mean, R):
    xstar = mean if np.linalg.norm(mean) <= R else mean * R / np.linalg.norm(mean)
    return prob.expected_value(xstar)


def _glm(cfg):
    alg = cfg["algorithm"]
    d = cfg["distribution"]["d"]
    src, _ = distributions.glm_data(d, cfg["distribution"]["n_atoms"],
                                    cfg["seed"])
    spec = apps.GLMSpec(loss=apps.make_loss(alg["loss"]), W=1.0, R=alg["R"],
                        lam=alg["lam"], p=alg["p"])
    h = _make_handle(cfg, src)
    res = apps.glm_solve(spec, src, h, alg["eps"])
    prob = apps.glm_problem(spec, src)
    fstar = _glm_opt(prob, spec, src)
    achieved = prob.expected_value(res.x) - fstar
    return achieved, res.gap_bound, h


def _glm_opt(prob, spec, src, grid=400):
    # dense random search refined by local descent on the expected objective
    rng = np.random.default_rng(0)
    best_x, best_v = np.zeros(prob.d), prob.expected_value(np.zeros(prob.d))
    for _ in range(grid):
        x = rng.standard_normal(prob.d)
        x *= rng.uniform(0, spec.R) / np.linalg.norm(x)
        v = prob.expected_value(x)
        if v < best_v:
            best_x, best_v = x, v
    x = best_x.copy()
    step = 0.5
    for _ in range(3000):
        g = prob.expected_grad(x).ravel() if prob.expected_grad(x).ndim > 1 \
            else prob.expected_grad(x)
        y = x - step * g
        nrm = lp_norm(y, spec.p)
        if nrm > spec.R:
            y *= spec.R / nrm
        if prob.expected_value(y) < best_v - 1e-14:
            x = y
            best_v = prob.expected_value(y)
        else:
            step *= 0.7
            if step < 1e-9:
                break
    return best_v


def _perceptron(cfg):
    alg = cfg["algorithm"]
    dd = cfg["distribution"]
    d, gamma, eps, p = dd["d"], dd["gamma"], alg["eps"], alg["p"]
    src, wstar = distributions.margin_labeled(d, gamma, dd["n_atoms"],
                                              cfg["seed"], p=p,
                                              radius=dd["radius"],
                                              w_norm=dd["w_norm"])
    D = apps.LabeledDistribution(src, p=p, R=dd["radius"], W=dd["w_norm"],
                                 gamma=gamma)
    h = _make_handle(cfg, src)
    if p == 2.0:
        res = apps.margin_perceptron_sq(D, h, eps, eta=alg["eta"])
        thresh = alg["eta"] if alg["eta"] is not None else gamma / 2.0
    else:
        res = apps.pnorm_learn(D, h, eps)
        thresh = 0.0
    rng = np.random.default_rng(cfg["seed"] + 10 ** 6)
    S = src.sample(rng, 10 ** 5)
    achieved = float(np.mean(S[:, -1] * (S[:, :d] @ res.w) < thresh))
    return achieved, eps, h


def _ldp(cfg):
    cfg = dict(cfg)
    cfg["oracle"] = dict(cfg["oracle"], backend="ldp")
    return _mean_estimate(cfg)


def _cog(cfg):
    alg = cfg["algorithm"]
    d = cfg["distribution"]["d"]
    eps, R = alg["eps"], alg["R"]
    src, mean = _make_distribution(cfg)
    prob = _linear_problem(src, R)
    h = _make_handle(cfg, src)
    body = cutplane.MembershipBody.ball(d, R)
    res = cutplane.cog_optimize(h, prob, body, eps, seed=cfg["seed"])
    fstar = -R * np.linalg.norm(mean)
    achieved = float(mean @ res.x) - fstar
    return achieved, eps, h


def _anneal(cfg):
    alg = cfg["algorithm"]
    d = cfg["distribution"]["d"]
    eps, R = alg["eps"], alg["R"]
    src, mean = _make_distribution(cfg)
    prob = _linear_problem(src, R)
    h = _make_handle(cfg, src)
    body = cutplane.MembershipBody.ball(d, R)
    res = cutplane.anneal_optimize(h, prob, body, eps, delta=alg["delta"],
                                   seed=cfg["seed"])
    fstar = -R * np.linalg.norm(mean)
    achieved = float(mean @ res.x) - fstar
    return achieved, eps, h


_RUNNERS = {"mean_estimate": _mean_estimate, "optimize": _optimize,
            "perceptron": _perceptron, "ldp": _ldp, "cog": _cog,
            "anneal": _anneal}


def run_config(cfg):
    """Execute one normalized config; returns a RunReport (or a list for
    bench_suite).  Exact-backend runs hard-assert achieved <= certified."""
    cfg = normalize_config(cfg)
    if cfg["task"] == "bench_suite":
        return bench_suite(cfg)
    t0 = time.perf_counter()
    achieved, certified, h = _RUNNERS[cfg["task"]](cfg)
    ms = (time.perf_counter() - t0) * 1e3
    snap = h.ledger.snapshot()
    rep = RunReport(task=cfg["task"], d=cfg["distribution"]["d"],
                    q=cfg["algorithm"]["q"] if cfg["task"] in
                    ("mean_estimate", "ldp", "bench_suite")
                    else cfg["algorithm"]["p"],
                    eps=cfg["algorithm"]["eps"], achieved=float(achieved),
                    certified=float(certified), queries=snap.count,
                    tolerance=snap.worst_tolerance,
                    vstat_n=snap.worst_vstat_n, seed=cfg["seed"], ms=ms,
                    config=cfg)
    slack = 1.0 + 1e-9
    if cfg["oracle"]["backend"] == "exact_noise" and \
            rep.achieved > rep.certified * slack:
        raise CertificationError(
            f"achieved {rep.achieved} exceeds certified {rep.certified} "
            f"({cfg['task']}, seed {cfg['seed']})")
    return rep


def bench_suite(cfg):
    """Mean-estimation grid over q in {1.5, 2, 4, inf}; the `queries` column
    of each row matches the contract formula for that estimator."""
    reports = []
    for q in (1.5, 2.0, 4.0, math.inf):
        sub = {k: (dict(v) if isinstance(v, dict) else v)
               for k, v in cfg.items()}
        sub["task"] = "mean_estimate"
        sub["algorithm"]["q"] = q
        sub["distribution"]["q"] = q
        if q == 1.5:
            sub["algorithm"]["variant"] = "via_l2"
        reports.append(run_config(sub))
    return reports


def emit_report(reports, path=None):
    """Tab-separated table, one row per run, stable column order."""
    if not reports:
        raise ValueError("no reports to emit")
    lines = ["\t".join(COLUMNS)]
    lines += ["\t".join(r.row()) for r in reports]
    text = "\n".join(lines) + "\n"
    if path is not None:
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as e:
            raise click.ClickException(f"cannot write report to {path}: {e}")
    return text


def _load_config(path):
    with open(path) as fh:
        return yaml.safe_load(fh)


def _apply_overrides(cfg, seed, backend, noise, eps):
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    oracle = dict(cfg.get("oracle", {}))
    if backend is not None:
        oracle["backend"] = {"exact": "exact_noise", "samples": "sample_sim",
                             "ldp": "ldp"}.get(backend, backend)
    if noise is not None:
        oracle["noise"] = noise
    if oracle:
        cfg["oracle"] = oracle
    if eps is not None:
        cfg.setdefault("algorithm", {})
        cfg["algorithm"] = dict(cfg["algorithm"], eps=eps)
    return cfg


def _finish(cfg, out):
    try:
        rep = run_config(cfg)
    except (ConfigError, CertificationError) as e:
        raise click.ClickException(str(e))
    reports = rep if isinstance(rep, list) else [rep]
    text = emit_report(reports, out)
    click.echo(text, nl=False)
    if out is not None:
        echo = reports[0].config if len(reports) == 1 else \
            normalize_config(cfg)
        with open(str(out) + ".config.yaml", "w") as fh:
            yaml.safe_dump(echo, fh, sort_keys=True)


def _common(f):
    f = click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="YAML experiment config")(f)
    f = click.option("--seed", type=int, default=None)(f)
    f = click.option("--out", type=click.Path(), default=None)(f)
    f = click.option("--backend",
                     type=click.Choice(["exact", "samples", "ldp"]),
                     default=None)(f)
    f = click.option("--noise",
                     type=click.Choice(["zero", "uniform", "adversarial"]),
                     default=None)(f)
    f = click.option("--eps", type=float, default=None)(f)
    return f


@click.group()
def main():
    """Query-driven mean estimation and optimization experiments."""


def _subcommand(task, default_alg=None):
    @_common
    def cmd(config_path, seed, out, backend, noise, eps):
        cfg = _load_config(config_path) if config_path else {}
        cfg = _apply_overrides(cfg, seed, backend, noise, eps)
        cfg["task"] = task
        if default_alg and not cfg.get("algorithm", {}).get("name"):
            cfg.setdefault("algorithm", {})
            cfg["algorithm"] = dict(cfg["algorithm"], name=default_alg)
        _finish(cfg, out)
    cmd.__name__ = task
    return cmd


main.command("mean-estimate")(_subcommand("mean_estimate"))
main.command("optimize")(_subcommand("optimize", "mirror_descent"))
main.command("perceptron")(_subcommand("perceptron"))
main.command("ldp")(_subcommand("ldp"))
main.command("cog")(_subcommand("cog"))
main.command("anneal")(_subcommand("anneal"))
main.command("bench-suite")(_subcommand("bench_suite"))


if __name__ == "__main__":
    sys.exit(main())
