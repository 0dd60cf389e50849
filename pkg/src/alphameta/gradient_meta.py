"""Gradient-based alpha-MAML for the sine-regression network.

Each meta-iteration samples a batch of source tasks, embeds the batch and the
target through the current network's last hidden layer (z -> (h(x), y) under
the square-loss embedding), picks batch-local weights from the resulting task
gram, and takes one outer step on

    sum_j alpha_j L_j(theta - inner_lr * grad L_j(theta)).
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .features import SQRT2
from .kernel_distance import TaskGram
from .mlp import DEFAULT_SIZES, MlpParams, forward_cache, hidden, hvp, init_mlp, loss_and_grad, predict
from .rng import make_rng
from .tasks import Task, TaskCollection, stack_tasks
from .weights import SimplexWeights, project_simplex, solve_simplex_qp

WEIGHT_MODES = ("qp", "threshold", "uniform")


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, last_finite_loss: float):
        super().__init__(f"loss became non-finite at iteration {iteration} "
                         f"(last finite loss {last_finite_loss:.6g})")
        self.iteration = iteration
        self.last_finite_loss = last_finite_loss


@dataclass
class TrainConfig:
    inner_lr: float = 0.01
    outer_lr: float = 0.001
    meta_iters: int = 10000
    batch_tasks: int = 100
    inner_steps: int = 1
    order: str = "second"
    seed: int = 0
    hidden: tuple[int, ...] = (40, 40)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_norm: float | None = 10.0
    log_every: int = 50

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.inner_lr < 0 or self.outer_lr <= 0:
            raise ValueError("learning rates must be positive (inner may be 0)")
        if self.meta_iters < 0 or self.batch_tasks < 1 or self.inner_steps < 1:
            raise ValueError("meta_iters >= 0, batch_tasks >= 1 and inner_steps >= 1 required")
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be 'first' or 'second', got {self.order!r}")

    def sizes(self, d_in: int) -> tuple[int, ...]:
        return (d_in, *self.hidden, 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["adam_betas"] = list(self.adam_betas)
        return d


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m, self.v = np.zeros_like(g), np.zeros_like(g)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def meta_gradient(sizes, theta, X, y, w, alpha, inner_lr: float, order: str = "second",
                  inner_steps: int = 1, cache=None) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted post-adaptation loss, its gradient in ``theta`` and per-task losses.

    ``order="second"`` differentiates through the inner step exactly:
    (I - inner_lr H_j) grad L_j(theta'_j). ``"first"`` drops the Hessian term.
    ``cache`` is an optional ``forward_cache`` of (theta, X).
    """
    if inner_steps > 1 and order == "second":
        warnings.warn("second-order meta-gradient only supports one inner step; using first order",
                      stacklevel=2)
        order = "first"
    if cache is None:
        cache = forward_cache(sizes, theta, X)
    adapted = theta
    if inner_lr != 0.0:
        for k in range(inner_steps):
            _, g_in = loss_and_grad(sizes, adapted, X, y, w, cache if k == 0 else None)
            adapted = adapted - inner_lr * g_in
    losses, g_out = loss_and_grad(sizes, adapted, X, y, w, None if inner_lr != 0.0 else cache)
    if order == "second" and inner_lr != 0.0:
        g_out -= inner_lr * hvp(sizes, theta, X, y, w, g_out, cache)
    alpha = np.asarray(alpha, dtype=float)
    return float(alpha @ losses), alpha @ g_out, losses


def batch_embedding_sums(sizes, theta, X, y, w, H=None) -> np.ndarray:
    """Summed square-loss embeddings of (h(x), y) for each task in a padded batch.

    ``H`` may pass in precomputed last-hidden-layer activations.
    """
    if H is None:
        H = hidden(sizes, theta, X)
    m = (w > 0).astype(float)
    Hm = H * m[..., None]
    outer = np.swapaxes(Hm, -1, -2) @ H
    T, h = H.shape[0], H.shape[-1]
    return np.concatenate([
        outer.reshape(T, h * h),
        SQRT2 * np.einsum("tnh,tn->th", Hm, y),
        (m * y * y).sum(axis=1, keepdims=True),
    ], axis=1)


def batch_gram(sizes, theta, X, y, w, Xt, yt, wt, H=None) -> TaskGram:
    Phi = np.vstack([batch_embedding_sums(sizes, theta, X, y, w, H),
                     batch_embedding_sums(sizes, theta, Xt, yt, wt)])
    counts = np.concatenate([(w > 0).sum(axis=1), (wt > 0).sum(axis=1)])
    K = Phi @ Phi.T
    return TaskGram(0.5 * (K + K.T), counts)


def _gamma(Q, q, c, a) -> float:
    return float(np.sqrt(max(0.0, a @ Q @ a - 2 * q @ a + c)))


def batch_weights(gram: TaskGram, mode: str) -> tuple[np.ndarray, float]:
    """Weights over the batch and the kernel distance they achieve."""
    Q, q, c = gram.quadratic()
    J = q.shape[0]
    if mode == "uniform":
        a = np.full(J, 1.0 / J)
    elif mode == "threshold":
        a = np.zeros(J)
        a[np.argmin(np.diag(Q) - 2 * q)] = 1.0
    elif mode == "qp":
        a, _ = solve_simplex_qp(Q, q, c, max_iters=2000)
    else:
        raise ValueError(f"unknown weight mode {mode!r}")
    return a, _gamma(Q, q, c, a)


def _stacked(tasks: TaskCollection):
    X, y, w = stack_tasks(tasks.sources)
    Xt, yt, wt = stack_tasks([tasks.target])
    return X, y, w, Xt, yt, wt


def _batch_indices(rng, J: int, size: int) -> np.ndarray:
    if size >= J:
        return np.arange(J)
    return np.sort(rng.choice(J, size=size, replace=False))


def _clip(g: np.ndarray, clip_norm: float | None) -> np.ndarray:
    if clip_norm is None:
        return g
    n = float(np.linalg.norm(g))
    return g * (clip_norm / n) if n > clip_norm else g


def _entropy(a: np.ndarray) -> float:
    p = a[a > 0]
    return float(-(p * np.log(p)).sum())


def train_alpha_maml(
    tasks: TaskCollection,
    cfg: TrainConfig,
    weight_mode: str = "qp",
    init: MlpParams | None = None,
    log: list | None = None,
) -> MlpParams:
    """Meta-train the network; optional ``log`` receives dict rows
    (iter, weighted_loss, gamma_k, alpha_entropy) every ``cfg.log_every`` iterations."""
    if weight_mode not in WEIGHT_MODES:
        raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
    X, y, w, Xt, yt, wt = _stacked(tasks)
    sizes = cfg.sizes(tasks.dim)
    params = init.copy() if init is not None else init_mlp(sizes, cfg.seed)
    theta = params.flat.copy()
    opt = Adam(cfg.outer_lr, cfg.adam_betas, cfg.adam_eps)
    rng = make_rng(cfg.seed, "batches")
    J = tasks.num_sources
    last = float("nan")
    for it in range(1, cfg.meta_iters + 1):
        idx = _batch_indices(rng, J, cfg.batch_tasks)
        Xb, yb, wb = X[idx], y[idx], w[idx]
        want_log = log is not None and (it % cfg.log_every == 0 or it == 1)
        gamma = float("nan")
        cache = forward_cache(sizes, theta, Xb)
        if weight_mode == "uniform" and not want_log:
            a = np.full(idx.shape[0], 1.0 / idx.shape[0])
        else:
            gram = batch_gram(sizes, theta, Xb, yb, wb, Xt, yt, wt, H=cache[1][-2])
            if weight_mode == "uniform":
                a = np.full(idx.shape[0], 1.0 / idx.shape[0])
                Q, q, c = gram.quadratic()
                gamma = _gamma(Q, q, c, a)
            else:
                a, gamma = batch_weights(gram, weight_mode)
        loss, g, _ = meta_gradient(sizes, theta, Xb, yb, wb, a, cfg.inner_lr, cfg.order, cfg.inner_steps,
                                   cache)
        if not (np.isfinite(loss) and np.all(np.isfinite(g))):
            raise TrainingDivergedError(it, last)
        last = loss
        theta = opt.step(theta, _clip(g, cfg.clip_norm))
        if want_log:
            log.append({"iter": it, "weighted_loss": loss, "gamma_k": gamma, "alpha_entropy": _entropy(a)})
    return MlpParams(sizes, theta, cfg.seed)


def train_direct_bound(
    tasks: TaskCollection,
    cfg: TrainConfig,
    loss_weight: float = 1.0,
    gamma_weight: float = 1.0,
    alpha_lr: float = 1.0,
    freeze_alpha: bool = False,
    init: MlpParams | None = None,
    log: list | None = None,
) -> tuple[MlpParams, SimplexWeights]:
    """Jointly minimise the alpha-weighted post-adaptation loss plus the kernel distance.

    alpha lives on the simplex over all J sources. Each iteration the batch's
    mean embeddings are refreshed under the current network (other sources keep
    their last embedding), the network takes an Adam step on the batch loss
    with weights alpha_B / sum(alpha_B), and alpha takes a projected gradient
    step. The distance part of that step is scaled so that, on its own, it is
    a 1/L step on the squared distance; ``alpha_lr`` multiplies it. Sources not
    in the batch contribute their last observed loss to the alpha gradient.
    """
    X, y, w, Xt, yt, wt = _stacked(tasks)
    sizes = cfg.sizes(tasks.dim)
    params = init.copy() if init is not None else init_mlp(sizes, cfg.seed)
    theta = params.flat.copy()
    opt = Adam(cfg.outer_lr, cfg.adam_betas, cfg.adam_eps)
    rng = make_rng(cfg.seed, "batches")
    J = tasks.num_sources
    counts = (w > 0).sum(axis=1).astype(float)
    n_t = float((wt > 0).sum())
    alpha = np.full(J, 1.0 / J)
    means = batch_embedding_sums(sizes, theta, X, y, w) / counts[:, None]
    loss_est = np.full(J, np.nan)
    last = float("nan")
    for it in range(1, cfg.meta_iters + 1):
        idx = _batch_indices(rng, J, cfg.batch_tasks)
        Xb, yb, wb = X[idx], y[idx], w[idx]
        means[idx] = batch_embedding_sums(sizes, theta, Xb, yb, wb) / counts[idx, None]
        m_t = batch_embedding_sums(sizes, theta, Xt, yt, wt)[0] / n_t

        mass = alpha[idx].sum()
        loss = float("nan")
        if loss_weight > 0 and mass > 0:
            a_b = alpha[idx] / mass
            loss, g, per_task = meta_gradient(sizes, theta, Xb, yb, wb, a_b, cfg.inner_lr, cfg.order,
                                              cfg.inner_steps)
            if not (np.isfinite(loss) and np.all(np.isfinite(g))):
                raise TrainingDivergedError(it, last)
            last = loss
            loss_est[idx] = per_task
            theta = opt.step(theta, _clip(loss_weight * g, cfg.clip_norm))

        resid = means.T @ alpha - m_t
        gamma = float(np.linalg.norm(resid))
        if not freeze_alpha:
            lip = 2.0 * float(np.sum(means * means))
            grad = np.zeros(J)
            if gamma_weight > 0 and gamma > 0:
                grad += gamma_weight * (means @ resid) / gamma
                step = alpha_lr * 2.0 * gamma / (gamma_weight * lip)
            else:
                step = alpha_lr / max(lip, np.finfo(float).tiny)
            if loss_weight > 0:
                seen = np.isfinite(loss_est)
                fill = float(loss_est[seen].mean()) if seen.any() else 0.0
                grad += loss_weight * np.where(seen, loss_est, fill)
            alpha = project_simplex(alpha - step * grad)
        if log is not None and (it % cfg.log_every == 0 or it == 1):
            log.append({"iter": it, "weighted_loss": loss, "gamma_k": gamma, "alpha_entropy": _entropy(alpha)})
    objective = float(np.sum((means.T @ alpha - m_t) ** 2))
    return MlpParams(sizes, theta, cfg.seed), SimplexWeights(alpha, "direct_bound", objective,
                                                            ids=tuple(tasks.source_ids))


def adapt_mlp(params: MlpParams, target: Task, steps: int, lr: float) -> MlpParams:
    """Full-batch gradient descent on the target MSE."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return params
    X, y, w = stack_tasks([target])
    theta = params.flat.copy()
    for _ in range(steps):
        _, g = loss_and_grad(params.sizes, theta, X[0], y[0], w[0])
        theta = theta - lr * g
    return params.copy(theta)


def adaptation_curve(params: MlpParams, target: Task, evaluation: Task, steps: int, lr: float) -> np.ndarray:
    """Eval MSE after 0..steps adaptation steps on ``target``."""
    X, y, w = stack_tasks([target])
    theta = params.flat.copy()
    out = [mse(params.copy(theta), evaluation)]
    for _ in range(steps):
        _, g = loss_and_grad(params.sizes, theta, X[0], y[0], w[0])
        theta = theta - lr * g
        out.append(mse(params.copy(theta), evaluation))
    return np.asarray(out)


def mse(params: MlpParams, evaluation: Task) -> float:
    r = predict(params.sizes, params.flat, evaluation.features) - evaluation.labels
    return float(np.mean(r * r))
