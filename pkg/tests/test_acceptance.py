"""Acceptance criteria, each at its stated tolerance and time budget.

Run with ``pytest tests/test_acceptance.py -v``; a summary with one PASS/FAIL
line per criterion is printed at the end of the session. The sine trend check
(6b) trains 20 networks for 2000 meta-iterations and takes about 16 minutes.
"""

import time

import numpy as np
import pytest

from alphameta.bounds import BoundConfig, evaluate_corollary_bound, evaluate_theorem2_bound, rademacher_from_features
from alphameta.cli import main
from alphameta.experiments import ExperimentSpec, run_experiment
from alphameta.features import LossEmbedding, loss_kernel, phi_hinge
from alphameta.gradient_meta import meta_gradient
from alphameta.kernel_distance import TaskGram, build_task_gram, kernel_distance
from alphameta.linear_meta import LinearTaskStats, fit_weighted_linear
from alphameta.mlp import num_params
from alphameta.tasks import Task, TaskCollection
from alphameta.weights import SimplexWeights, kkt_residual, solve_alpha_qp

from conftest import random_collection
from oracles import brute_mmd2, central_difference, gradient_descent, rademacher_enumerate
from test_gradient_meta import maml_objective, toy_problem


def _unit_ball(rng, d):
    v = rng.normal(size=d)
    return v * rng.uniform(0, 1) ** (1 / d) / np.linalg.norm(v)


def test_1_mmd_matches_brute_force(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(50):
        J, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        loss = "square" if k % 2 == 0 else "hinge"
        tc = random_collection(rng, J=J, d=d, n_max=8)
        if loss == "hinge":
            tc = TaskCollection(tuple(Task([_unit_ball(rng, d) for _ in range(t.size)],
                                           rng.choice([-1.0, 1.0], size=t.size)) for t in tc.sources),
                                Task([_unit_ball(rng, d) for _ in range(tc.target.size)],
                                     rng.uniform(-1, 1, size=tc.target.size)))
        emb = LossEmbedding(loss, None)
        alpha = rng.dirichlet(np.ones(J))
        got = kernel_distance(build_task_gram(tc, emb), alpha) ** 2
        ref = brute_mmd2(emb, tc.sources, tc.target, alpha)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-300))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5
    assert acceptance("1 MMD oracle equivalence", ok, f"max rel err {worst:.2e}, {elapsed:.2f}s")


def test_2_loss_identities(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    sq, hg = 0.0, 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        psi, w, y = rng.normal(size=d), rng.normal(size=d), float(rng.normal())
        k = loss_kernel(LossEmbedding("square", None), (psi, y), (-w, 1.0))
        sq = max(sq, abs(0.5 * k - 0.5 * (w @ psi - y) ** 2))
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        psi, w, y = _unit_ball(rng, d), _unit_ball(rng, d), float(rng.uniform(-1, 1))
        k = loss_kernel(LossEmbedding("hinge", None), (psi, y), (-w, 1.0))
        hg = max(hg, abs(k - (1 - y * psi @ w)))
    elapsed = time.perf_counter() - t0
    ok = sq <= 1e-12 and hg <= 1e-12 and elapsed < 1
    assert acceptance("2 loss identities", ok, f"square {sq:.1e}, hinge {hg:.1e}, {elapsed:.2f}s")


def _psd_gram(rng, J):
    r = int(rng.integers(1, J + 2))
    F = rng.normal(size=(J + 1, r)) * rng.uniform(0.1, 10)
    return TaskGram(F @ F.T, rng.integers(1, 20, size=J + 1))


def test_3_qp_correctness(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_kkt, worst_dom = 0.0, -np.inf
    for _ in range(100):
        J = int(rng.integers(1, 11))
        gram = _psd_gram(rng, J)
        a, _ = solve_alpha_qp(gram)
        Q, q, c = gram.quadratic()
        s = max(np.diag(Q).max(), np.abs(q).max())
        worst_kkt = max(worst_kkt, kkt_residual(Q / s, q / s, a.alpha))
        f = lambda x: kernel_distance(gram, x) ** 2
        best = min([f(np.full(J, 1 / J))] + [f(np.eye(J)[j]) for j in range(J)])
        worst_dom = max(worst_dom, f(a.alpha) - best)
    min_mass = 1.0
    for _ in range(20):
        J, d = int(rng.integers(2, 8)), 2
        j0 = int(rng.integers(J))
        srcs = [Task(rng.normal(loc=5 * rng.normal(size=d), size=(30, d)), rng.normal(size=30)) for _ in range(J)]
        tc = TaskCollection(tuple(srcs), Task(srcs[j0].features, srcs[j0].labels))
        a, _ = solve_alpha_qp(build_task_gram(tc, LossEmbedding("square", None)))
        min_mass = min(min_mass, a.alpha[j0])
    elapsed = time.perf_counter() - t0
    ok = worst_kkt <= 1e-8 and worst_dom <= 1e-9 and min_mass >= 0.99 and elapsed < 10
    assert acceptance("3 QP correctness", ok, f"max KKT {worst_kkt:.1e}, max f - best {worst_dom:.1e}, "
                                              f"min matching mass {min_mass:.4f}, {elapsed:.2f}s")


def test_4_closed_form_vs_oracle(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, bitwise = 0.0, True
    for _ in range(30):
        J, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        tc = random_collection(rng, J=J, d=d, n_min=d + 2, n_max=10)
        alpha = SimplexWeights(rng.dirichlet(np.ones(J)))
        stats = [LinearTaskStats.from_task(t, None) for t in tc.sources]
        w = fit_weighted_linear(tc, None, alpha, eta=1e-4, ridge=0.0).w
        w_gd, _ = gradient_descent([s.A for s in stats], [s.b for s in stats], alpha.alpha, 1e-4)
        worst = max(worst, np.abs(w - w_gd).max())
        bitwise &= np.array_equal(fit_weighted_linear(tc, None, alpha, eta=0.0, mode="maml").w,
                                  fit_weighted_linear(tc, None, alpha, mode="erm").w)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and bitwise and elapsed < 10
    assert acceptance("4 closed form vs oracle", ok, f"max |w - w_gd| {worst:.1e}, eta=0 bitwise {bitwise}, "
                                                     f"{elapsed:.2f}s")


def test_5_meta_gradient_finite_differences(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        sizes, theta, X, y, w, alpha, eta = toy_problem(seed)
        assert num_params(sizes) <= 50
        _, g, _ = meta_gradient(sizes, theta, X, y, w, alpha, eta, "second")
        fd = central_difference(lambda t: maml_objective(sizes, t, X, y, w, alpha, eta), theta, h=1e-6)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30
    assert acceptance("5 meta-gradient check", ok, f"max rel err {worst:.1e}, {elapsed:.2f}s")


def _per_trial(rows, metric):
    out = {}
    for r in rows:
        out.setdefault(r["trial"], {})[r["method"]] = r[metric]
    return out


def test_6a_linear1d_trend(acceptance):
    t0 = time.perf_counter()
    res = run_experiment(ExperimentSpec("linear1d", methods=("maml", "alpha_maml", "erm", "alpha_erm"), trials=20))
    per = _per_trial(res.rows, "rmse_init")
    v_erm = sum(p["alpha_erm"] > p["erm"] for p in per.values())
    v_maml = sum(p["alpha_maml"] > p["maml"] for p in per.values())
    elapsed = time.perf_counter() - t0
    ok = v_erm <= 2 and v_maml <= 2 and elapsed < 120
    assert acceptance("6a linear1d trend", ok, f"violations alpha_erm>erm {v_erm}/20, "
                                               f"alpha_maml>maml {v_maml}/20, {elapsed:.1f}s")


@pytest.mark.slow
def test_6b_sine_trend(acceptance):
    t0 = time.perf_counter()
    spec = ExperimentSpec("sine", methods=("maml", "alpha_maml"), shots=(10,), trials=10,
                          train={"meta_iters": 2000})
    res = run_experiment(spec)
    per = {t: {m: v ** 2 for m, v in d.items()} for t, d in _per_trial(res.rows, "rmse_adapted").items()}
    wins = sum(p["alpha_maml"] < p["maml"] for p in per.values())
    means = {m: float(np.mean([p[m] for p in per.values()])) for m in ("maml", "alpha_maml")}
    elapsed = time.perf_counter() - t0
    ok = wins >= 7 and elapsed < 1800
    assert acceptance("6b sine trend", ok, f"alpha_maml wins {wins}/10, mean MSE maml {means['maml']:.3f} "
                                           f"alpha_maml {means['alpha_maml']:.3f}, {elapsed:.0f}s")


def test_7_bound_arithmetic(acceptance):
    t0 = time.perf_counter()
    gram = TaskGram(np.array([[0.09, 0.0], [0.0, 0.0]]), [1, 50])
    total = evaluate_theorem2_bound(gram, [1.0], 0.1, BoundConfig((0.0, 1.0), 0.2)).total
    rng = np.random.default_rng(7)
    worst = -np.inf
    for _ in range(200):
        g = build_task_gram(random_collection(rng, J=int(rng.integers(1, 6)), d=2), LossEmbedding("square", None))
        a = rng.dirichlet(np.ones(g.num_sources))
        worst = max(worst, evaluate_theorem2_bound(g, a, 0.0, BoundConfig()).ipm_term
                    - evaluate_corollary_bound(g, a, 0.0, BoundConfig()).ipm_term)
    elapsed = time.perf_counter() - t0
    ok = abs(total - 0.95523) <= 1e-5 and worst <= 1e-9 and elapsed < 5
    assert acceptance("7 bound arithmetic", ok, f"hand case {total:.6f}, max tight - weighted-sum {worst:.1e}, "
                                                f"{elapsed:.2f}s")


def test_8_rademacher_estimator(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(1, 13)), int(rng.integers(1, 4))
        psi, B = rng.normal(size=(n, d)), float(rng.uniform(0.5, 2.0))
        est = rademacher_from_features(psi, B, mc_draws=2000, seed=0)
        exact = rademacher_enumerate(psi, B)
        z = abs(est.value - exact) / est.std_error if est.std_error > 0 else (0.0 if est.value == exact else np.inf)
        worst = max(worst, z)
    elapsed = time.perf_counter() - t0
    ok = worst <= 3 and elapsed < 10
    assert acceptance("8 Rademacher estimator", ok, f"max |est - exact| / se {worst:.2f}, {elapsed:.2f}s")


def test_9_determinism(acceptance, tmp_path, capsys):
    codes = [main(["experiment", "--name", "linear1d", "--seed", "0", "--output", str(tmp_path / d)])
             for d in ("a", "b")]
    capsys.readouterr()
    names = ("results.json", "results.csv", "log.csv", "curves.csv")
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    ok = codes == [0, 0] and same
    assert acceptance("9 determinism", ok, f"exit codes {codes}, byte-identical {same}")
