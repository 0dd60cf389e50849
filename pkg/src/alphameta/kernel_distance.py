"""Task-level gram matrix and the empirical kernel distance (V-statistic MMD).

Tasks are stored sources first, target last. With summed embeddings
Phi_j = sum_i phi(z_i^(j)) the gram entry K[j, j'] = Phi_j . Phi_j' equals the
double sum of the kernel over all point pairs, and for the mixture vector

    v_alpha = [alpha_1/N_1, ..., alpha_J/N_J, -1/N_T]

the squared distance is v_alpha^T K v_alpha.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .features import LossEmbedding, embedding_sum
from .tasks import TaskCollection

SIMPLEX_TOL = 1e-9


class GramConsistencyError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class TaskGram:
    K: np.ndarray
    sizes: np.ndarray
    ids: tuple[str, ...] = ()
    kernel_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        sizes = np.asarray(self.sizes, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] < 2:
            raise ValueError(f"gram must be square with at least 2 tasks, got {K.shape}")
        if sizes.shape != (K.shape[0],):
            raise ValueError("one size per task required")
        if np.any(sizes < 1):
            raise ValueError("task sizes must be >= 1")
        scale = max(np.abs(K).max(), np.finfo(float).tiny)
        if np.abs(K - K.T).max() > 1e-10 * scale:
            raise GramConsistencyError("gram matrix is not symmetric")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "sizes", sizes)
        ids = tuple(self.ids) or tuple([f"source_{j}" for j in range(K.shape[0] - 1)] + ["target"])
        object.__setattr__(self, "ids", ids)

    @property
    def num_sources(self) -> int:
        return self.K.shape[0] - 1

    @property
    def order(self) -> list[str]:
        return list(self.ids)

    def quadratic(self) -> tuple[np.ndarray, np.ndarray, float]:
        """(Q, q, c) with v_alpha^T K v_alpha = alpha^T Q alpha - 2 q^T alpha + c."""
        J = self.num_sources
        inv = 1.0 / self.sizes
        Q = self.K[:J, :J] * np.outer(inv[:J], inv[:J])
        q = self.K[:J, J] * inv[:J] * inv[J]
        c = self.K[J, J] * inv[J] ** 2
        return Q, q, float(c)

    def scaled(self, factor: float) -> "TaskGram":
        return TaskGram(self.K * factor, self.sizes, self.ids, dict(self.kernel_meta))

    def to_dict(self) -> dict:
        return {"K": self.K.tolist(), "sizes": self.sizes.astype(int).tolist(),
                "order": list(self.ids), "kernel_meta": self.kernel_meta}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskGram":
        return cls(np.asarray(d["K"]), np.asarray(d["sizes"]), tuple(d["order"]), d.get("kernel_meta", {}))


def gram_from_sums(Phi: np.ndarray, sizes, ids=(), kernel_meta: dict | None = None) -> TaskGram:
    K = Phi @ Phi.T
    K = 0.5 * (K + K.T)
    return TaskGram(K, np.asarray(sizes), tuple(ids), kernel_meta or {})


def embedding_sums(tasks: TaskCollection, emb: LossEmbedding, workers: int = 1) -> np.ndarray:
    """Rows Phi_1..Phi_J, Phi_T. Per-task sums are independent, so any worker count is bitwise identical."""
    all_tasks = tasks.all_tasks()

    def one(t):
        return embedding_sum(emb.loss, emb.features(t.features), t.labels, where=f"task {t.id!r}, ")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, all_tasks))
    else:
        rows = [one(t) for t in all_tasks]
    return np.vstack(rows)


def build_task_gram(tasks: TaskCollection, emb: LossEmbedding, workers: int = 1) -> TaskGram:
    Phi = embedding_sums(tasks, emb, workers)
    sizes = [t.size for t in tasks.all_tasks()]
    meta = emb.to_dict()
    return gram_from_sums(Phi, sizes, [*tasks.source_ids, tasks.target.id], meta)


def as_alpha(alpha, J: int) -> np.ndarray:
    a = np.asarray(getattr(alpha, "alpha", alpha), dtype=float).reshape(-1)
    if a.shape[0] != J:
        raise ValueError(f"alpha has length {a.shape[0]}, gram has {J} sources")
    if np.any(a < -SIMPLEX_TOL) or abs(a.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError("alpha is not on the probability simplex")
    return a


def mixture_vector(alpha, sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    a = as_alpha(alpha, sizes.shape[0] - 1)
    return np.concatenate([a / sizes[:-1], [-1.0 / sizes[-1]]])


def squared_distance(gram: TaskGram, alpha) -> float:
    """v^T K v, snapped to zero at roundoff level.

    With envelope E = (sum_j |v_j| sqrt(K_jj))^2, values with |v^T K v| below
    the rounding error of the quadratic form, 4 (J + 1) eps E, become 0.
    Anything more negative than -1e-8 E signals a non-PSD gram and raises.
    """
    v = mixture_vector(alpha, gram.sizes)
    val = float(v @ gram.K @ v)
    envelope = float(np.abs(v) @ np.sqrt(np.clip(np.diag(gram.K), 0, None))) ** 2
    if abs(val) <= 4 * v.shape[0] * np.finfo(float).eps * envelope:
        return 0.0
    if val < 0:
        if val < -1e-8 * max(envelope, np.finfo(float).tiny):
            raise GramConsistencyError(f"quadratic form is {val:.3e}; gram is not PSD")
        val = 0.0
    return val


def kernel_distance(gram: TaskGram, alpha) -> float:
    return float(np.sqrt(squared_distance(gram, alpha)))


def per_source_distances(gram: TaskGram) -> np.ndarray:
    J = gram.num_sources
    return np.array([kernel_distance(gram, np.eye(J)[j]) for j in range(J)])
