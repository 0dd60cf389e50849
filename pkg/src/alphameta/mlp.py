"""A small fully connected ReLU regressor with hand-written reverse mode.

Parameters live in one flat vector laid out as W_0, b_0, W_1, b_1, ... with
W_l of shape (sizes[l], sizes[l+1]) stored row-major. Every routine accepts
either a shared parameter vector (P,) or per-task vectors (T, P), and task
batches X (T, n, d_in), y (T, n) with row weights w (T, n).

The per-task loss is sum_i w_i (f(x_i) - y_i)^2, i.e. the MSE when w_i = 1/N.
``hvp`` is the exact Hessian-vector product (Pearlmutter's R-operator run over
the backward pass); ReLU has zero curvature away from its kink, so only the
linear parts contribute second-order terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import make_rng

DEFAULT_SIZES = (1, 40, 40, 1)


def num_params(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(eq=False)
class MlpParams:
    sizes: tuple[int, ...]
    flat: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.flat = np.asarray(self.flat, dtype=float)
        if self.flat.shape != (num_params(self.sizes),):
            raise ValueError(f"expected {num_params(self.sizes)} parameters, got {self.flat.shape}")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("non-finite network parameters")

    def copy(self, flat: np.ndarray | None = None) -> "MlpParams":
        return MlpParams(self.sizes, self.flat.copy() if flat is None else flat, self.seed)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unpack(self.sizes, self.flat)

    def to_dict(self) -> dict:
        return {
            "architecture": "mlp-relu",
            "sizes": list(self.sizes),
            "seed": self.seed,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        parts = []
        for layer in d["layers"]:
            parts += [np.asarray(layer["W"], float).reshape(-1), np.asarray(layer["b"], float).reshape(-1)]
        return cls(tuple(d["sizes"]), np.concatenate(parts), d.get("seed", 0))


def init_mlp(sizes=DEFAULT_SIZES, seed: int = 0) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = make_rng(seed, "mlp-init")
    parts = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(a)
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(rng.uniform(-bound, bound, size=b))
    return MlpParams(tuple(sizes), np.concatenate(parts), seed)


def unpack(sizes, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    lead = theta.shape[:-1]
    out, k = [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        W = theta[..., k:k + a * b].reshape(*lead, a, b)
        k += a * b
        out.append((W, theta[..., k:k + b]))
        k += b
    return out


def _pack(grads: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    lead = grads[0][1].shape[:-1]
    return np.concatenate([p.reshape(*lead, -1) for gW, gb in grads for p in (gW, gb)], axis=-1)


def _bias(b: np.ndarray) -> np.ndarray:
    # (P,)-style bias broadcasts over rows; (T, h) needs a row axis
    return b[..., None, :] if b.ndim > 1 else b


def _forward(sizes, theta, X):
    layers = unpack(sizes, theta)
    acts, masks = [X], []
    a = X
    for l, (W, b) in enumerate(layers):
        z = a @ W
        z += _bias(b)
        if l < len(layers) - 1:
            m = z > 0
            z *= m
            masks.append(m)
        a = z
        acts.append(a)
    return layers, acts, masks


def predict(sizes, theta, X) -> np.ndarray:
    return _forward(sizes, theta, X)[1][-1][..., 0]


def hidden(sizes, theta, X) -> np.ndarray:
    """Activations of the last hidden layer."""
    return _forward(sizes, theta, X)[1][-2]


def hidden_features(params: MlpParams, X) -> np.ndarray:
    return hidden(params.sizes, params.flat, np.atleast_2d(np.asarray(X, float)))


def _sum_rows(g: np.ndarray) -> np.ndarray:
    return g.sum(axis=-2)


def _backward(layers, acts, masks, g_top):
    grads = [None] * len(layers)
    g = g_top
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        grads[l] = (np.swapaxes(acts[l], -1, -2) @ g, _sum_rows(g))
        if l > 0:
            g = g @ np.swapaxes(W, -1, -2)
            g *= masks[l - 1]
    return grads


def forward_cache(sizes, theta, X):
    """Forward pass state reusable by ``loss_and_grad`` and ``hvp`` at the same point."""
    return _forward(sizes, theta, X)


def loss_and_grad(sizes, theta, X, y, w, cache=None):
    """Per-task weighted squared error and its gradient."""
    layers, acts, masks = cache or _forward(sizes, theta, X)
    r = acts[-1][..., 0] - y
    loss = (w * r * r).sum(axis=-1)
    grads = _backward(layers, acts, masks, (2.0 * w * r)[..., None])
    return loss, _pack(grads)


def hvp(sizes, theta, X, y, w, V, cache=None) -> np.ndarray:
    """Per-task Hessian of the weighted loss at ``theta`` applied to ``V`` (T, P)."""
    layers, acts, masks = cache or _forward(sizes, theta, X)
    dirs = unpack(sizes, V)
    L = len(layers)
    # R-forward
    r_acts = [None]
    for l, ((W, _), (VW, Vb)) in enumerate(zip(layers, dirs)):
        rz = acts[l] @ VW
        rz += _bias(Vb)
        if l > 0:
            rz += r_acts[l] @ W
        if l < L - 1:
            rz *= masks[l]
        r_acts.append(rz)
    # backward pass and its R-derivative
    r = acts[-1][..., 0] - y
    g = (2.0 * w * r)[..., None]
    rg = (2.0 * w * r_acts[-1][..., 0])[..., None]
    out = [None] * L
    for l in range(L - 1, -1, -1):
        W, _ = layers[l]
        VW, _ = dirs[l]
        gW = np.swapaxes(acts[l], -1, -2) @ rg
        if l > 0:
            gW += np.swapaxes(r_acts[l], -1, -2) @ g
        out[l] = (gW, _sum_rows(rg))
        if l > 0:
            rg_new = rg @ np.swapaxes(W, -1, -2)
            rg_new += g @ np.swapaxes(VW, -1, -2)
            rg_new *= masks[l - 1]
            g = g @ np.swapaxes(W, -1, -2)
            g *= masks[l - 1]
            rg = rg_new
    return _pack(out)


def mse(params: MlpParams, X, y) -> float:
    r = predict(params.sizes, params.flat, np.atleast_2d(np.asarray(X, float))) - np.asarray(y, float)
    return float(np.mean(r * r))
