"""Basis functions and the loss embeddings that turn a loss class into a kernel.

A point is z = (x, y). A basis psi maps x to R^d. The square-loss embedding

    phi(psi, y) = (vec(psi psi^T), sqrt(2) y psi, y^2)          in R^{d^2+d+1}

and the hinge-loss embedding

    phi(psi, y) = (y psi, 1)                                    in R^{d+1}

are explicit, so k(z, z') = <phi(z), phi(z')> and every kernel sum we need
reduces to inner products of summed embeddings. ``vec`` is row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial.distance import pdist

from .rng import make_rng

if TYPE_CHECKING:
    from .mlp import MlpParams

SQRT2 = np.sqrt(2.0)
BASIS_KINDS = ("identity_with_bias", "random_fourier", "mlp_hidden")
LOSSES = ("square", "hinge")


class EmbeddingError(ValueError):
    pass


@dataclass(eq=False)
class BasisFn:
    """psi: R^input_dim -> R^output_dim.

    ``random_fourier`` draws its frequencies Omega ~ N(0, sigma^-2 I) and
    offsets b ~ U(0, 2 pi) from ``seed`` unless ``omega``/``offsets`` are
    given explicitly. ``normalize`` rescales outputs to norm at most one,
    as the hinge embedding requires.
    """

    kind: str
    input_dim: int
    output_dim: int | None = None
    sigma: float = 1.0
    seed: int = 0
    normalize: bool = False
    omega: np.ndarray | None = None
    offsets: np.ndarray | None = None
    mlp: "MlpParams | None" = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise EmbeddingError(f"unknown basis kind {self.kind!r}")
        if self.kind == "identity_with_bias":
            self.output_dim = self.input_dim + 1
        elif self.kind == "random_fourier":
            if self.sigma <= 0:
                raise EmbeddingError("RFF bandwidth must be positive")
            if self.omega is not None:
                self.omega = np.asarray(self.omega, dtype=float).reshape(-1, self.input_dim)
                self.output_dim = self.omega.shape[0]
            if self.output_dim is None or self.output_dim < 1:
                raise EmbeddingError("random_fourier needs output_dim >= 1")
        else:
            if self.mlp is None:
                raise EmbeddingError("mlp_hidden basis needs mlp parameters")
            self.output_dim = self.mlp.sizes[-2]

    @cached_property
    def _rff(self) -> tuple[np.ndarray, np.ndarray]:
        if self.omega is not None:
            omega = self.omega
            off = np.zeros(omega.shape[0]) if self.offsets is None else np.asarray(self.offsets, float)
            return omega, off
        rng = make_rng(self.seed, "rff")
        omega = rng.normal(0.0, 1.0 / self.sigma, size=(self.output_dim, self.input_dim))
        off = rng.uniform(0.0, 2 * np.pi, size=self.output_dim)
        if self.offsets is not None:
            off = np.asarray(self.offsets, float)
        return omega, off

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "input_dim": self.input_dim, "output_dim": self.output_dim,
             "sigma": self.sigma, "seed": self.seed, "normalize": self.normalize}
        if self.omega is not None:
            d["omega"] = self.omega.tolist()
        if self.offsets is not None:
            d["offsets"] = np.asarray(self.offsets).tolist()
        if self.mlp is not None:
            d["mlp"] = self.mlp.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BasisFn":
        d = dict(d)
        if "mlp" in d:
            from .mlp import MlpParams
            d["mlp"] = MlpParams.from_dict(d["mlp"])
        return cls(**d)


def apply_basis(basis: BasisFn, x) -> np.ndarray:
    """psi(x) for one input vector or for the rows of a matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != basis.input_dim:
        raise EmbeddingError(f"basis expects input dim {basis.input_dim}, got {X.shape[1]}")
    if basis.kind == "identity_with_bias":
        out = np.hstack([X, np.ones((X.shape[0], 1))])
    elif basis.kind == "random_fourier":
        omega, off = basis._rff
        out = np.sqrt(2.0 / basis.output_dim) * np.cos(X @ omega.T + off)
    else:
        from .mlp import hidden_features
        out = hidden_features(basis.mlp, X)
    if basis.normalize:
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        out = out / np.maximum(1.0, norms)
    return out[0] if single else out


def median_bandwidth(X, max_points: int = 2000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance, on a seeded subsample of at most ``max_points`` rows."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] > max_points:
        idx = make_rng(seed, "bandwidth").choice(X.shape[0], max_points, replace=False)
        X = X[np.sort(idx)]
    if X.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(X)))
    return med if med > 0 else 1.0


@dataclass(eq=False)
class LossEmbedding:
    loss: str
    basis: BasisFn | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise EmbeddingError(f"unknown loss {self.loss!r}")

    @property
    def dim(self) -> int:
        d = self.basis.output_dim
        return d * d + d + 1 if self.loss == "square" else d + 1

    def features(self, X) -> np.ndarray:
        """psi applied to raw inputs; identity when no basis is attached."""
        if self.basis is None:
            return np.atleast_2d(np.asarray(X, dtype=float))
        return np.atleast_2d(apply_basis(self.basis, X))

    def to_dict(self) -> dict:
        return {"loss": self.loss, "basis": None if self.basis is None else self.basis.to_dict()}


def check_hinge(psi: np.ndarray, y: np.ndarray, where: str = "") -> None:
    norms = np.linalg.norm(psi, axis=1)
    tol = 1e-12
    bad = np.flatnonzero(norms > 1.0 + tol)
    if bad.size:
        raise EmbeddingError(f"{where}row {bad[0]}: ||psi(x)||_2 = {norms[bad[0]]:.6g} exceeds 1")
    bad = np.flatnonzero(np.abs(y) > 1.0 + tol)
    if bad.size:
        raise EmbeddingError(f"{where}row {bad[0]}: |y| = {abs(y[bad[0]]):.6g} exceeds 1")


def phi_square(psi, y) -> np.ndarray:
    """Square-loss embedding of rows of ``psi`` (N x d) with labels ``y`` (N,)."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n, d = psi.shape
    outer = (psi[:, :, None] * psi[:, None, :]).reshape(n, d * d)
    return np.hstack([outer, SQRT2 * y[:, None] * psi, (y * y)[:, None]])


def phi_hinge(psi, y, check: bool = True) -> np.ndarray:
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if check:
        check_hinge(psi, y)
    return np.hstack([y[:, None] * psi, np.ones((psi.shape[0], 1))])


def embed_psi(loss: str, psi, y) -> np.ndarray:
    return phi_square(psi, y) if loss == "square" else phi_hinge(psi, y)


def embed_square(emb: LossEmbedding, x, y) -> np.ndarray:
    if emb.loss != "square":
        raise EmbeddingError("embed_square needs a square-loss embedding")
    return phi_square(emb.features(x), y)[0]


def embed_hinge(emb: LossEmbedding, x, y) -> np.ndarray:
    if emb.loss != "hinge":
        raise EmbeddingError("embed_hinge needs a hinge-loss embedding")
    return phi_hinge(emb.features(x), y)[0]


def embed(emb: LossEmbedding, X, y) -> np.ndarray:
    """phi for every row; shape (N, emb.dim)."""
    return embed_psi(emb.loss, emb.features(X), y)


def loss_kernel(emb: LossEmbedding, z, z2) -> float:
    (x, y), (x2, y2) = z, z2
    return float(embed(emb, x, y)[0] @ embed(emb, x2, y2)[0])


def embedding_sum(loss: str, psi: np.ndarray, y: np.ndarray, where: str = "") -> np.ndarray:
    """sum_i phi(psi_i, y_i) without materialising the N x dim embedding."""
    psi = np.atleast_2d(psi)
    if loss == "square":
        return np.concatenate([(psi.T @ psi).reshape(-1), SQRT2 * (psi.T @ y), [y @ y]])
    check_hinge(psi, y, where)
    return np.concatenate([psi.T @ y, [float(psi.shape[0])]])
