"""Source weights on the probability simplex.

``solve_alpha_qp`` minimises f(alpha) = v_alpha^T K v_alpha, a convex quadratic
over the simplex, with accelerated projected gradient (or Frank-Wolfe) and a
final exact solve on the identified support. ``solve_alpha_threshold`` puts all
mass on the closest single source.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernel_distance import TaskGram, kernel_distance, per_source_distances

SUPPORT_TOL = 1e-10


@dataclass
class SimplexWeights:
    alpha: np.ndarray
    method: str = "manual"
    objective_value: float = float("nan")
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        if np.any(self.alpha < 0) or abs(self.alpha.sum() - 1.0) > 1e-9:
            raise ValueError(f"alpha {self.alpha} is not on the simplex")

    def __len__(self) -> int:
        return self.alpha.shape[0]

    def entropy(self) -> float:
        a = self.alpha[self.alpha > 0]
        return float(-(a * np.log(a)).sum())

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "method": self.method,
                "objective_value": self.objective_value}

    @classmethod
    def from_dict(cls, d: dict) -> "SimplexWeights":
        return cls(np.asarray(d["alpha"]), d.get("method", "manual"), d.get("objective_value", float("nan")))

    def ranked(self) -> list[tuple[str, float]]:
        ids = self.ids or tuple(f"source_{j}" for j in range(len(self)))
        order = sorted(range(len(self)), key=lambda j: (-self.alpha[j], j))
        return [(ids[j], float(self.alpha[j])) for j in order]


@dataclass
class QpReport:
    iterations: int = 0
    kkt_residual: float = 0.0
    duality_gap_proxy: float = 0.0
    converged: bool = True
    notes: list[str] = field(default_factory=list)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {a >= 0, sum a = 1} by sorting."""
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, n + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def uniform_weights(J: int) -> SimplexWeights:
    if J < 1:
        raise ValueError("need at least one source")
    return SimplexWeights(np.full(J, 1.0 / J), "uniform")


def _f(Q, q, c, a):
    return float(a @ Q @ a - 2.0 * q @ a + c)


def _grad(Q, q, a):
    return 2.0 * (Q @ a - q)


def kkt_residual(Q: np.ndarray, q: np.ndarray, alpha: np.ndarray, support_tol: float = SUPPORT_TOL) -> float:
    """max violation of: grad_j = lam on the support, grad_j >= lam everywhere."""
    g = _grad(Q, q, alpha)
    S = alpha > support_tol
    if not S.any():
        return float("inf")
    lam = 0.5 * (g[S].max() + g[S].min())
    return float(max(0.5 * (g[S].max() - g[S].min()), lam - g.min(), 0.0))


def _is_flat(Q, q, c, scale) -> bool:
    J = Q.shape[0]
    verts = np.diag(Q) - 2.0 * q + c
    u = np.full(J, 1.0 / J)
    if verts.max() - verts.min() > 1e-12 * (1.0 + abs(_f(Q, q, c, u))):
        return False
    # vertex values can tie on a non-constant objective, so also require a
    # vanishing quadratic along the simplex
    P = np.eye(J) - 1.0 / J
    return float(np.abs(P @ Q @ P).max()) <= 1e-12 * scale


def _solve_on_support(Q, q, S):
    m = S.shape[0]
    M = np.zeros((m + 1, m + 1))
    M[:m, :m] = 2.0 * Q[np.ix_(S, S)]
    M[:m, m] = -1.0
    M[m, :m] = 1.0
    rhs = np.concatenate([2.0 * q[S], [1.0]])
    try:
        sol = np.linalg.solve(M, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return sol[:m]


def _polish(Q, q, a, rounds: int | None = None):
    """Active-set refinement started from the support of ``a``.

    Solves the equality-constrained problem on the working support, drops the
    negative coordinates or adds the most KKT-violating one, and repeats.
    """
    J = a.shape[0]
    S = np.flatnonzero(a > SUPPORT_TOL * max(1.0, a.max()))
    if S.size == 0:
        return None
    for _ in range(rounds or 2 * J + 2):
        x = _solve_on_support(Q, q, S)
        neg = x < -1e-13
        if neg.any():
            S = S[~neg]
            if S.size == 0:
                return None
            continue
        out = np.zeros(J)
        out[S] = np.clip(x, 0.0, None)
        out /= out.sum()
        g = _grad(Q, q, out)
        lam = g[S].mean()
        outside = np.setdiff1d(np.arange(J), S)
        if outside.size == 0 or g[outside].min() >= lam - 1e-14:
            return out
        S = np.sort(np.append(S, outside[np.argmin(g[outside])]))
    return None


def solve_simplex_qp(
    Q: np.ndarray,
    q: np.ndarray,
    c: float = 0.0,
    tol: float = 1e-10,
    kkt_tol: float = 1e-8,
    max_iters: int = 10000,
    method: str = "pg",
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, QpReport]:
    """min a^T Q a - 2 q^T a + c over the simplex.

    The problem is rescaled by max(diag Q) before solving (argmin unchanged);
    the reported KKT residual and gap refer to the rescaled problem.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    J = q.shape[0]
    if J == 1:
        return np.ones(1), QpReport()
    scale = float(max(np.diag(Q).max(), np.abs(q).max(), np.finfo(float).tiny))
    Q, q, c = Q / scale, q / scale, c / scale
    if _is_flat(Q, q, c, 1.0):
        return np.full(J, 1.0 / J), QpReport(notes=["flat objective; uniform weights"])

    lip = 2.0 * float(np.abs(Q).sum(axis=1).max())
    step = 1.0 / lip
    a = np.full(J, 1.0 / J) if x0 is None else project_simplex(x0)
    fa = _f(Q, q, c, a)
    y, t = a.copy(), 1.0
    report = QpReport(converged=False)
    it = 0
    for it in range(1, max_iters + 1):
        if method == "fw":
            g = _grad(Q, q, a)
            s = np.zeros(J)
            s[np.argmin(g)] = 1.0
            d = s - a
            curv = 2.0 * float(d @ Q @ d)
            gamma = 1.0 if curv <= 0 else min(1.0, max(0.0, -float(g @ d) / curv))
            a_new = a + gamma * d
        else:
            a_new = project_simplex(y - step * _grad(Q, q, y))
        f_new = _f(Q, q, c, a_new)
        if method != "fw" and f_new > fa:
            if t > 1.0:
                # adaptive restart of the momentum
                y, t = a.copy(), 1.0
                continue
            a_new, f_new = a, fa  # roundoff at the optimum
        decrease = fa - f_new
        if method != "fw":
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = a_new + ((t - 1.0) / t_new) * (a_new - a)
            t = t_new
        a, fa = a_new, f_new
        if it % 25 == 0 or decrease <= tol:
            res = kkt_residual(Q, q, a)
            p = _polish(Q, q, a)
            if p is not None:
                fp, rp = _f(Q, q, c, p), kkt_residual(Q, q, p)
                if fp <= fa + 1e-15 * (1.0 + abs(fa)) and rp < res:
                    a, fa, res = p, fp, rp
                    y, t = a.copy(), 1.0
            if res <= kkt_tol:
                report.converged = True
                break
    report.iterations = it
    report.kkt_residual = kkt_residual(Q, q, a)
    g = _grad(Q, q, a)
    report.duality_gap_proxy = float(g @ a - g.min())
    report.converged = report.kkt_residual <= kkt_tol
    return a, report


def solve_alpha_qp(
    gram: TaskGram,
    tol: float = 1e-10,
    kkt_tol: float = 1e-8,
    max_iters: int = 10000,
    method: str = "pg",
) -> tuple[SimplexWeights, QpReport]:
    Q, q, c = gram.quadratic()
    a, report = solve_simplex_qp(Q, q, c, tol=tol, kkt_tol=kkt_tol, max_iters=max_iters, method=method)
    w = SimplexWeights(a, "qp", ids=gram.ids[:-1])
    w.objective_value = kernel_distance(gram, w) ** 2
    return w, report


def solve_alpha_threshold(gram: TaskGram) -> SimplexWeights:
    """All weight on the source closest to the target; ties go to the lowest index."""
    dist = per_source_distances(gram)
    j = int(np.argmin(dist))
    a = np.zeros(gram.num_sources)
    a[j] = 1.0
    return SimplexWeights(a, "threshold", float(dist[j] ** 2), ids=gram.ids[:-1])


def solve_weights(gram: TaskGram, method: str, **kw) -> SimplexWeights:
    if method == "qp":
        return solve_alpha_qp(gram, **kw)[0]
    if method == "threshold":
        return solve_alpha_threshold(gram)
    if method == "uniform":
        w = uniform_weights(gram.num_sources)
        w.ids = gram.ids[:-1]
        w.objective_value = kernel_distance(gram, w) ** 2
        return w
    raise ValueError(f"unknown weight method {method!r}")
