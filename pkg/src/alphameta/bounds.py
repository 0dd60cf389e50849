"""Empirical Rademacher estimates and numeric generalization-bound evaluation.

The bound on the target risk of a predictor trained on the alpha-weighted
source mixture is

    total = ipm + 2 R + 3 sqrt((b - a)^2 ln(2 / eps) / (2 N_T))

where ipm is either the kernel distance between the mixture and the target
(tight form) or the alpha-weighted sum of per-source distances (loose form).
R is the empirical Rademacher complexity of the predictor class; the
implemented instance is the norm-bounded linear class over a basis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .features import BasisFn, apply_basis
from .kernel_distance import TaskGram, as_alpha, kernel_distance, per_source_distances
from .rng import make_rng
from .tasks import Task


@dataclass(frozen=True)
class BoundConfig:
    loss_range: tuple[float, float] = (0.0, 1.0)
    epsilon: float = 0.05
    mc_draws: int = 1000

    def __post_init__(self):
        a, b = (float(v) for v in self.loss_range)
        object.__setattr__(self, "loss_range", (a, b))
        if not a < b:
            raise ValueError(f"loss_range needs a < b, got [{a}, {b}]")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.mc_draws < 1:
            raise ValueError("mc_draws must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_range"] = list(self.loss_range)
        return d


@dataclass(frozen=True)
class BoundBreakdown:
    ipm_term: float
    rademacher_term: float
    confidence_term: float
    total: float
    meta: dict | None = None

    def to_dict(self) -> dict:
        d = {"ipm_term": self.ipm_term, "rademacher_term": self.rademacher_term,
             "confidence_term": self.confidence_term, "total": self.total}
        if self.meta:
            d["meta"] = self.meta
        return d


@dataclass(frozen=True)
class RademacherEstimate:
    value: float
    std_error: float
    draws: int

    def __float__(self) -> float:
        return self.value


def _sup_linear(psi: np.ndarray, sigma: np.ndarray, norm_bound: float) -> np.ndarray:
    # sup over ||w|| <= B of (1/N) sum_i sigma_i w^T psi_i, one value per row of sigma
    return norm_bound * np.linalg.norm(sigma @ psi, axis=1) / psi.shape[0]


def rademacher_from_features(psi, norm_bound: float, mc_draws: int = 1000, seed: int = 0,
                             chunk: int = 4096) -> RademacherEstimate:
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    if psi.shape[0] < 1:
        raise ValueError("need at least one point")
    if norm_bound <= 0 or mc_draws < 1:
        raise ValueError("norm_bound > 0 and mc_draws >= 1 required")
    rng = make_rng(seed, "rademacher")
    vals = []
    left = mc_draws
    while left > 0:
        m = min(chunk, left)
        sigma = rng.integers(0, 2, size=(m, psi.shape[0])) * 2.0 - 1.0
        vals.append(_sup_linear(psi, sigma, 1.0))
        left -= m
    v = np.concatenate(vals)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return RademacherEstimate(norm_bound * float(v.mean()), norm_bound * se, mc_draws)


def rademacher_linear(target: Task, basis: BasisFn | None, norm_bound: float,
                      mc_draws: int = 1000, seed: int = 0) -> RademacherEstimate:
    """Monte-Carlo empirical Rademacher complexity of {x -> w^T psi(x): ||w|| <= B} on the target inputs."""
    X = target.features
    psi = X if basis is None else apply_basis(basis, X)
    return rademacher_from_features(psi, norm_bound, mc_draws, seed)


def rademacher_exact(psi, norm_bound: float) -> float:
    """Enumerate all 2^N sign vectors (small N only)."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    n = psi.shape[0]
    if n > 20:
        raise ValueError("exhaustive enumeration is limited to N <= 20")
    codes = np.arange(2 ** n)[:, None] >> np.arange(n) & 1
    sigma = codes * 2.0 - 1.0
    return float(_sup_linear(psi, sigma, norm_bound).mean())


def confidence_term(loss_range, epsilon: float, n_target: float) -> float:
    a, b = loss_range
    return 3.0 * float(np.sqrt((b - a) ** 2 * np.log(2.0 / epsilon) / (2.0 * n_target)))


def bound_total(ipm: float, rademacher: float, cfg: BoundConfig, n_target: float) -> BoundBreakdown:
    if ipm < 0 or rademacher < 0:
        raise ValueError("ipm and rademacher terms must be non-negative")
    conf = confidence_term(cfg.loss_range, cfg.epsilon, n_target)
    rad = 2.0 * float(rademacher)
    return BoundBreakdown(float(ipm), rad, conf, float(ipm) + rad + conf,
                          {"n_target": float(n_target), **cfg.to_dict()})


def evaluate_theorem2_bound(gram: TaskGram, alpha, rademacher: float, cfg: BoundConfig) -> BoundBreakdown:
    """Bound with the kernel distance between the alpha-mixture and the target."""
    return bound_total(kernel_distance(gram, alpha), float(rademacher), cfg, gram.sizes[-1])


def evaluate_corollary_bound(gram: TaskGram, alpha, rademacher: float, cfg: BoundConfig) -> BoundBreakdown:
    """Looser bound with sum_j alpha_j * distance(source_j, target)."""
    a = as_alpha(alpha, gram.num_sources)
    ipm = float(a @ per_source_distances(gram))
    return bound_total(ipm, float(rademacher), cfg, gram.sizes[-1])
