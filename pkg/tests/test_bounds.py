import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from alphameta.bounds import (
    BoundConfig, bound_total, confidence_term, evaluate_corollary_bound, evaluate_theorem2_bound,
    rademacher_exact, rademacher_from_features, rademacher_linear,
)
from alphameta.features import BasisFn, LossEmbedding
from alphameta.kernel_distance import TaskGram, build_task_gram, kernel_distance, per_source_distances
from alphameta.tasks import Task, TaskCollection
from alphameta.weights import SimplexWeights

from conftest import random_collection
from oracles import rademacher_enumerate

SQUARE = LossEmbedding("square", None)


def hand_gram(gamma=0.3, n_target=50):
    # one source of size 1 with scalar embedding sum gamma, target embedding sum 0
    return TaskGram(np.array([[gamma ** 2, 0.0], [0.0, 0.0]]), [1, n_target])


def test_hand_case():
    cfg = BoundConfig(loss_range=(0.0, 1.0), epsilon=0.2)
    b = evaluate_theorem2_bound(hand_gram(), [1.0], 0.1, cfg)
    assert b.ipm_term == pytest.approx(0.3, abs=1e-12)
    assert b.rademacher_term == pytest.approx(0.2)
    assert b.confidence_term == pytest.approx(3 * math.sqrt(math.log(10) / 100))
    assert b.total == pytest.approx(0.95523, abs=1e-5)
    assert b.total == b.ipm_term + b.rademacher_term + b.confidence_term


@pytest.mark.parametrize("kw", [dict(epsilon=2.0), dict(epsilon=0.0), dict(loss_range=(1.0, 1.0)),
                                dict(loss_range=(2.0, 1.0)), dict(mc_draws=0)])
def test_invalid_config_rejected(kw):
    with pytest.raises(ValueError):
        BoundConfig(**kw)


def test_negative_terms_rejected():
    with pytest.raises(ValueError):
        bound_total(0.1, -0.1, BoundConfig(), 10)


def test_breakdown_serializes():
    d = evaluate_theorem2_bound(hand_gram(), [1.0], 0.1, BoundConfig(epsilon=0.2)).to_dict()
    assert set(d) == {"ipm_term", "rademacher_term", "confidence_term", "total", "meta"}
    assert d["meta"]["n_target"] == 50 and d["meta"]["loss_range"] == [0.0, 1.0]


def test_confidence_halves_with_quadrupled_samples():
    c1 = confidence_term((0.0, 2.0), 0.1, 40)
    assert confidence_term((0.0, 2.0), 0.1, 80) == pytest.approx(c1 / math.sqrt(2), rel=1e-15)
    assert confidence_term((0.0, 2.0), 0.1, 160) == pytest.approx(c1 / 2, rel=1e-15)


def test_rademacher_trivial_cases():
    assert rademacher_from_features([[1.0]], 1.0, mc_draws=50).value == 1.0
    assert rademacher_exact(np.ones((2, 1)), 1.0) == 0.5
    est = rademacher_from_features(np.ones((2, 1)), 1.0, mc_draws=20000, seed=1)
    assert abs(est.value - 0.5) <= 3 * est.std_error


@pytest.mark.parametrize("seed", range(20))
def test_rademacher_within_three_standard_errors_of_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(1, 13)), int(rng.integers(1, 4))
    psi = rng.normal(size=(n, d))
    B = float(rng.uniform(0.5, 2.0))
    exact = rademacher_enumerate(psi, B)
    assert rademacher_exact(psi, B) == pytest.approx(exact, rel=1e-12)
    est = rademacher_from_features(psi, B, mc_draws=2000, seed=0)
    assert abs(est.value - exact) <= 3 * est.std_error + 1e-12


def test_rademacher_linear_uses_the_basis(rng):
    t = Task(rng.normal(size=(9, 1)), rng.normal(size=9))
    basis = BasisFn("identity_with_bias", 1)
    a = rademacher_linear(t, basis, 1.0, mc_draws=300, seed=2)
    psi = np.hstack([t.features, np.ones((9, 1))])
    assert a.value == rademacher_from_features(psi, 1.0, 300, seed=2).value


@given(st.integers(0, 2 ** 32), st.floats(0.1, 10.0))
def test_rademacher_linear_in_norm_bound_and_order_free(seed, scale):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=(int(rng.integers(1, 9)), 2))
    base = rademacher_exact(psi, 1.0)
    assert rademacher_exact(psi, scale) == pytest.approx(scale * base, rel=1e-12)
    assert rademacher_exact(psi[rng.permutation(len(psi))], 1.0) == pytest.approx(base, rel=1e-12)
    e1 = rademacher_from_features(psi, 1.0, 100, seed=3).value
    assert rademacher_from_features(psi, scale, 100, seed=3).value == pytest.approx(scale * e1, rel=1e-12)


@given(st.integers(0, 2 ** 32))
def test_weighted_sum_form_is_looser(seed):
    rng = np.random.default_rng(seed)
    gram = build_task_gram(random_collection(rng, J=int(rng.integers(1, 6)), d=2), SQUARE)
    alpha = rng.dirichlet(np.ones(gram.num_sources))
    cfg = BoundConfig()
    thm = evaluate_theorem2_bound(gram, alpha, 0.1, cfg)
    cor = evaluate_corollary_bound(gram, alpha, 0.1, cfg)
    assert cor.ipm_term >= thm.ipm_term - 1e-9
    assert cor.total >= thm.total - 1e-9


def test_weighted_sum_on_a_vertex_is_the_source_distance(rng):
    gram = build_task_gram(random_collection(rng, J=4, d=2), SQUARE)
    dist = per_source_distances(gram)
    for j in range(4):
        e = np.eye(4)[j]
        assert evaluate_corollary_bound(gram, e, 0.0, BoundConfig()).ipm_term == pytest.approx(dist[j], rel=1e-12)
        assert kernel_distance(gram, e) == pytest.approx(dist[j], rel=1e-12)


def test_identical_sources_make_both_terms_equal(rng):
    s = Task(rng.normal(size=(5, 2)), rng.normal(size=5))
    t = Task(rng.normal(size=(4, 2)), rng.normal(size=4))
    gram = build_task_gram(TaskCollection((s, s, s), t), SQUARE)
    u = SimplexWeights(np.full(3, 1 / 3))
    a = evaluate_theorem2_bound(gram, u, 0.0, BoundConfig()).ipm_term
    b = evaluate_corollary_bound(gram, u, 0.0, BoundConfig()).ipm_term
    assert a == pytest.approx(b, rel=1e-10)
