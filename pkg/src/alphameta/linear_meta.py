"""Closed-form alpha-weighted ERM and MAML for linear basis regression.

Per source j with basis features X_j: A_j = X_j^T X_j, b_j = X_j^T y_j and the
one-step adaptation U_j(w) = w - eta (A_j w - b_j). The meta-objective

    F(w) = sum_j alpha_j (1/2 U_j^T A_j U_j - U_j^T b_j)

has gradient A~ w - b~ with A~ = sum_j alpha_j (I - eta A_j)^T A_j (I - eta A_j)
and b~ = sum_j alpha_j (I - eta A_j)^T b_j. eta = 0 is weighted ERM.
These use unnormalised per-task sums; adaptation and RMSE use per-sample means.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .features import BasisFn, apply_basis
from .tasks import Task, TaskCollection
from .weights import SimplexWeights

DEFAULT_ETA = 1e-4
COND_LIMIT = 1e14


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass
class LinearTaskStats:
    A: np.ndarray
    b: np.ndarray
    n: int

    @classmethod
    def from_task(cls, task: Task, basis: BasisFn | None) -> "LinearTaskStats":
        X = design(task.features, basis)
        return cls(X.T @ X, X.T @ task.labels, task.size)


@dataclass
class LinearMetaModel:
    w: np.ndarray
    eta: float = 0.0
    alpha: SimplexWeights | None = None
    mode: str = "erm"
    info: dict = field(default_factory=dict)

    def predict(self, X, basis: BasisFn | None) -> np.ndarray:
        return design(X, basis) @ self.w

    def to_dict(self, basis: BasisFn | None = None) -> dict:
        return {
            "w": self.w.tolist(), "eta": self.eta, "mode": self.mode,
            "alpha": None if self.alpha is None else self.alpha.to_dict(),
            "basis_meta": None if basis is None else basis.to_dict(),
            **({"info": self.info} if self.info else {}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearMetaModel":
        alpha = None if d.get("alpha") is None else SimplexWeights.from_dict(d["alpha"])
        return cls(np.asarray(d["w"], float), d.get("eta", 0.0), alpha, d.get("mode", "erm"))


def design(X, basis: BasisFn | None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X if basis is None else np.atleast_2d(apply_basis(basis, X))


def meta_system(stats: list[LinearTaskStats], alpha: np.ndarray, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """(A~, b~) with grad F(w) = A~ w - b~.

    Differentiating U_j(w) = M_j w + eta b_j (M_j = I - eta A_j) through
    1/2 U^T A U - U^T b gives b~ = sum_j alpha_j M_j^T M_j b_j.
    """
    d = stats[0].b.shape[0]
    A_t = np.zeros((d, d))
    b_t = np.zeros(d)
    for a_j, s in zip(alpha, stats):
        if a_j == 0.0:
            continue
        if eta == 0.0:
            A_t += a_j * s.A
            b_t += a_j * s.b
        else:
            M = np.eye(d) - eta * s.A
            A_t += a_j * (M.T @ s.A @ M)
            b_t += a_j * (M.T @ (M @ s.b))
    return 0.5 * (A_t + A_t.T), b_t


def fit_weighted_linear(
    tasks: TaskCollection,
    basis: BasisFn | None,
    alpha: SimplexWeights,
    eta: float = DEFAULT_ETA,
    mode: str = "maml",
    ridge: float | None = None,
) -> LinearMetaModel:
    """Solve (A~ + ridge I) w = b~.

    ``mode="erm"`` ignores ``eta``. ``ridge=None`` picks 1e-8 trace(A~)/d.
    """
    if mode not in ("erm", "maml"):
        raise ValueError(f"mode must be 'erm' or 'maml', got {mode!r}")
    if ridge is not None and ridge < 0:
        raise ValueError("ridge must be non-negative")
    a = np.asarray(alpha.alpha, dtype=float)
    if a.shape[0] != tasks.num_sources:
        raise ValueError("one weight per source task required")
    eff_eta = 0.0 if mode == "erm" else float(eta)
    stats = [LinearTaskStats.from_task(t, basis) for t in tasks.sources]
    A_t, b_t = meta_system(stats, a, eff_eta)
    d = b_t.shape[0]
    if ridge is None:
        ridge = 1e-8 * float(np.trace(A_t)) / d
    lhs = A_t + ridge * np.eye(d)
    eig = np.linalg.eigvalsh(lhs)
    cond = float(eig.max() / eig.min()) if eig.min() > 0 else float("inf")
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystemError(
            f"meta-system is singular (condition ~{cond:.3g}); use ridge > 0"
        )
    w = scipy.linalg.solve(lhs, b_t, assume_a="sym")
    return LinearMetaModel(w, eff_eta, alpha, mode, {"ridge": ridge, "condition": cond})


def fit_target_only(task: Task, basis: BasisFn | None, ridge: float | None = None) -> LinearMetaModel:
    """Least squares on the target alone (the no-meta-learning baseline)."""
    X = design(task.features, basis)
    A = X.T @ X
    d = A.shape[0]
    if ridge is None:
        ridge = 1e-8 * float(np.trace(A)) / d + 1e-12
    w = scipy.linalg.solve(A + ridge * np.eye(d), X.T @ task.labels, assume_a="sym")
    return LinearMetaModel(w, 0.0, None, "target_only", {"ridge": ridge})


def adapt_linear(model: LinearMetaModel, target: Task, basis: BasisFn | None, steps: int, lr: float) -> LinearMetaModel:
    """``steps`` full-batch gradient steps on (1/N) * 1/2 ||X w - y||^2."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0 or lr == 0:
        return model
    X = design(target.features, basis)
    y = target.labels
    n = X.shape[0]
    w = model.w.copy()
    for _ in range(steps):
        w = w - lr * (X.T @ (X @ w - y)) / n
    return LinearMetaModel(w, model.eta, model.alpha, model.mode, dict(model.info))


def adaptation_curve(model: LinearMetaModel, target: Task, evaluation: Task, basis: BasisFn | None,
                     steps: int, lr: float) -> np.ndarray:
    """Eval RMSE after 0..steps adaptation steps."""
    X = design(target.features, basis)
    Xe = design(evaluation.features, basis)
    n = X.shape[0]
    w = model.w.copy()
    out = [np.sqrt(np.mean((Xe @ w - evaluation.labels) ** 2))]
    for _ in range(steps):
        w = w - lr * (X.T @ (X @ w - target.labels)) / n
        out.append(np.sqrt(np.mean((Xe @ w - evaluation.labels) ** 2)))
    return np.asarray(out)


def rmse(model: LinearMetaModel, task: Task, basis: BasisFn | None) -> float:
    r = model.predict(task.features, basis) - task.labels
    return float(np.sqrt(np.mean(r * r)))
