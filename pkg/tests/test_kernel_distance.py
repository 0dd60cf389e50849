import numpy as np
import pytest
from hypothesis import given, strategies as st

from alphameta.features import BasisFn, LossEmbedding
from alphameta.kernel_distance import (
    GramConsistencyError,
    TaskGram,
    as_alpha,
    build_task_gram,
    kernel_distance,
    mixture_vector,
    per_source_distances,
    squared_distance,
)
from alphameta.tasks import Task, TaskCollection

from conftest import random_collection
from oracles import brute_gram, brute_mmd2, pair_sum

SQ = LossEmbedding("square")


def test_duplicate_single_point_tasks():
    t = Task([[0.5, -1.0]], [2.0])
    g = build_task_gram(TaskCollection((t,), t), SQ)
    kzz = pair_sum(SQ, (t.features, t.labels), (t.features, t.labels))
    assert np.allclose(g.K, kzz)
    assert kernel_distance(g, [1.0]) == 0.0


@given(st.integers(0, 2 ** 32))
def test_gram_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    tc = random_collection(rng, J=2, d=2, n_max=5)
    K = build_task_gram(tc, SQ).K
    ref = brute_gram(SQ, tc.all_tasks())
    assert np.allclose(K, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


@given(st.integers(0, 2 ** 32))
def test_distance_matches_naive_expansion(seed):
    rng = np.random.default_rng(seed)
    tc = random_collection(rng, J=3, d=2, n_max=5)
    gram = build_task_gram(tc, SQ)
    for j in range(3):
        ref = brute_mmd2(SQ, tc.sources, tc.target, np.eye(3)[j])
        assert kernel_distance(gram, np.eye(3)[j]) ** 2 == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_copy_of_target_has_zero_distance(rng):
    tc = random_collection(rng, J=3)
    tc = TaskCollection((tc.sources[0], tc.target, tc.sources[2]), tc.target)
    gram = build_task_gram(tc, SQ)
    d = per_source_distances(gram)
    assert d[1] < 1e-8
    assert np.all(d >= 0)


def test_per_source_distance_ordering_matches_brute_force(rng):
    tc = random_collection(rng, J=3, n_max=5)
    d = per_source_distances(build_task_gram(tc, SQ))
    ref = [brute_mmd2(SQ, tc.sources, tc.target, np.eye(3)[j]) for j in range(3)]
    assert list(np.argsort(d)) == list(np.argsort(ref))


def test_point_order_does_not_matter(rng):
    tc = random_collection(rng, J=2)
    s = tc.sources[0]
    perm = rng.permutation(s.size)
    shuffled = TaskCollection((Task(s.features[perm], s.labels[perm]), tc.sources[1]), tc.target)
    a = per_source_distances(build_task_gram(tc, SQ))
    b = per_source_distances(build_task_gram(shuffled, SQ))
    assert np.allclose(a, b, rtol=1e-12)


@given(st.integers(0, 2 ** 32))
def test_mixture_bounded_by_weighted_sum(seed):
    rng = np.random.default_rng(seed)
    tc = random_collection(rng, J=4)
    gram = build_task_gram(tc, SQ)
    alpha = rng.dirichlet(np.ones(4))
    assert kernel_distance(gram, alpha) <= alpha @ per_source_distances(gram) + 1e-9


@given(st.integers(0, 2 ** 32), st.floats(0.01, 100))
def test_scale_covariance(seed, c):
    rng = np.random.default_rng(seed)
    gram = build_task_gram(random_collection(rng, J=3), SQ)
    alpha = rng.dirichlet(np.ones(3))
    assert kernel_distance(gram.scaled(c), alpha) == pytest.approx(np.sqrt(c) * kernel_distance(gram, alpha),
                                                                   rel=1e-9)


def test_zero_distance_for_matching_mixture():
    # target = union of two half-size sources, so the uniform mixture matches it exactly
    a = Task([[0.0], [1.0]], [0.0, 1.0])
    b = Task([[2.0], [3.0]], [1.0, -1.0])
    t = Task([[0.0], [1.0], [2.0], [3.0]], [0.0, 1.0, 1.0, -1.0])
    gram = build_task_gram(TaskCollection((a, b), t), SQ)
    assert kernel_distance(gram, [0.5, 0.5]) < 1e-7
    assert kernel_distance(gram, [0.9, 0.1]) > 1e-2


def test_hinge_gram_uses_basis_and_checks_constraints():
    basis = BasisFn("identity_with_bias", 1, normalize=True)
    tc = TaskCollection((Task([[0.2], [3.0]], [1, -1]),), Task([[0.5]], [1]))
    build_task_gram(tc, LossEmbedding("hinge", basis))
    bad = TaskCollection((Task([[0.2]], [2.0], id="loud"),), Task([[0.5]], [1]))
    with pytest.raises(ValueError, match="task 'loud', row 0"):
        build_task_gram(bad, LossEmbedding("hinge", basis))


def test_threads_are_bitwise_identical(rng):
    tc = random_collection(rng, J=6, n_max=20)
    assert np.array_equal(build_task_gram(tc, SQ).K, build_task_gram(tc, SQ, workers=4).K)


def test_gram_validation():
    with pytest.raises(GramConsistencyError):
        TaskGram(np.array([[1.0, 2.0], [0.0, 1.0]]), [1, 1])
    with pytest.raises(ValueError):
        TaskGram(np.eye(2), [0, 1])
    g = TaskGram(np.eye(3), [1, 2, 3])
    assert g.order == ["source_0", "source_1", "target"]
    assert TaskGram.from_dict(g.to_dict()).K.tolist() == g.K.tolist()


def test_alpha_validation():
    with pytest.raises(ValueError, match="length"):
        as_alpha([1.0], 2)
    with pytest.raises(ValueError, match="simplex"):
        as_alpha([0.7, 0.7], 2)
    assert np.allclose(mixture_vector([0.5, 0.5], [2, 4, 5]), [0.25, 0.125, -0.2])


def test_indefinite_gram_raises():
    K = np.array([[1.0, 0.0], [0.0, -2.0]])
    with pytest.raises(GramConsistencyError):
        squared_distance(TaskGram(K, [1, 1]), [1.0])
