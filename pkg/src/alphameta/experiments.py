"""Experiment runner for the four task families.

Each trial draws its data and training seeds from ``derive_seed(spec.seed,
"trial", t, ...)``, so trials are independent and a rerun of the same spec
writes byte-identical files. All methods inside a trial share the data and
the network initialisation, which makes per-trial comparisons paired.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import BasisFn, LossEmbedding, median_bandwidth
from .gradient_meta import TrainConfig, adaptation_curve as mlp_curve, train_alpha_maml, train_direct_bound
from .kernel_distance import build_task_gram, kernel_distance
from .linear_meta import DEFAULT_ETA, adaptation_curve as linear_curve, design, fit_target_only, fit_weighted_linear
from .mlp import init_mlp
from .rng import derive_seed, make_rng
from .tasks import SyntheticSpec, Task, TaskCollection, generate_linear1d, generate_sine, load_csv_tasks, load_wide_series
from .weights import solve_weights

FAMILIES = ("linear1d", "sine", "csv_regression", "sales_rff")
METHODS = ("maml", "alpha_maml", "threshold_maml", "erm", "alpha_erm", "threshold_erm", "target_only", "direct_bound")
DEFAULT_METHODS = {
    "linear1d": ("maml", "alpha_maml", "threshold_maml", "erm", "alpha_erm", "threshold_erm", "target_only"),
    "sine": ("maml", "alpha_maml", "threshold_maml", "erm", "alpha_erm", "threshold_erm"),
    "csv_regression": ("maml", "alpha_maml", "erm", "alpha_erm", "target_only"),
    "sales_rff": ("maml", "alpha_maml", "threshold_maml", "erm", "alpha_erm", "threshold_erm", "target_only"),
}
WEIGHTING = {
    "maml": "uniform", "erm": "uniform",
    "alpha_maml": "qp", "alpha_erm": "qp",
    "threshold_maml": "threshold", "threshold_erm": "threshold",
}
DEFAULT_SOURCES = {"linear1d": 9, "sine": 1000, "sales_rff": 300}
DEFAULT_SHOTS = {"linear1d": (20,), "sine": (10,), "csv_regression": (20,), "sales_rff": (10,)}
RESULT_COLUMNS = ("trial", "method", "shots", "rmse_init", "rmse_adapted", "steps", "alpha_json")
LOG_COLUMNS = ("trial", "method", "shots", "iter", "weighted_loss", "gamma_k", "alpha_entropy")
CURVE_COLUMNS = ("trial", "method", "shots", "step", "mse")


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    """What to run. ``data`` carries family inputs (CSV paths, synthetic
    overrides), ``train`` overrides TrainConfig fields for the sine family and
    ``direct_bound`` holds the direct-bound optimizer's knobs."""

    name: str
    methods: tuple[str, ...] = ()
    shots: tuple[int, ...] = ()
    trials: int = 1
    seed: int = 0
    output_dir: str | None = None
    adapt_steps: int = 10
    adapt_lr: float = 0.01
    eta: float = DEFAULT_ETA
    num_sources: int | None = None
    eval_size: int = 100
    train: dict = field(default_factory=dict)
    direct_bound: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {FAMILIES}")
        if isinstance(self.shots, int):
            self.shots = (self.shots,)
        self.shots = tuple(int(s) for s in self.shots) or DEFAULT_SHOTS[self.name]
        self.methods = tuple(self.methods) or DEFAULT_METHODS[self.name]
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if "direct_bound" in self.methods and self.name != "sine":
            raise ValueError("direct_bound is only available for the sine family")
        if self.trials < 1 or not self.shots or min(self.shots) < 1:
            raise ValueError("trials >= 1 and positive shots required")
        if self.adapt_steps < 0:
            raise ValueError("adapt_steps must be >= 0")
        if self.num_sources is not None and self.num_sources < 1:
            raise ValueError("num_sources must be positive")

    def train_config(self, trial: int) -> TrainConfig:
        base = {**self.train, "seed": derive_seed(self.seed, "trial", trial, "train")}
        return TrainConfig(**base)

    def to_dict(self) -> dict:
        """Resolved configuration. ``output_dir`` is left out: it does not
        affect results, and leaving it out keeps reruns elsewhere byte-identical."""
        d = asdict(self)
        d.pop("output_dir")
        d["methods"] = list(self.methods)
        d["shots"] = list(self.shots)
        if self.name == "sine":
            d["train"] = {k: v for k, v in TrainConfig(**self.train).to_dict().items() if k != "seed"}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        for k in ("methods", "shots"):
            if k in d and isinstance(d[k], list):
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[dict]
    log: list[dict]
    curves: list[dict]

    @property
    def aggregate(self) -> list[dict]:
        return aggregate(self.rows)

    def table(self, metric: str = "rmse_adapted") -> str:
        return format_table(self.aggregate, self.spec.shots, metric)


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and sample std of the RMSE columns per (method, shots)."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["method"], r["shots"]), []).append(r)
    out = []
    for (method, shots), rs in groups.items():
        entry = {"method": method, "shots": shots, "n": len(rs)}
        for col in ("rmse_init", "rmse_adapted"):
            v = np.array([r[col] for r in rs], dtype=float)
            entry[f"{col}_mean"] = float(v.mean())
            entry[f"{col}_std"] = float(v.std(ddof=1)) if v.size > 1 else 0.0
        out.append(entry)
    return out


def format_table(agg: list[dict], shots, metric: str = "rmse_adapted") -> str:
    cells = {(a["method"], a["shots"]): f"{a[metric + '_mean']:.3f} ± {a[metric + '_std']:.3f}" for a in agg}
    methods = list(dict.fromkeys(a["method"] for a in agg))
    head = ["method"] + [f"{s}-shot" for s in shots]
    lines = [head] + [[m] + [cells.get((m, s), "-") for s in shots] for m in methods]
    widths = [max(len(line[k]) for line in lines) for k in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in lines)


# --------------------------------------------------------------------------
# linear families

def _weighted_source_mse(tasks: TaskCollection, basis, model, alpha: np.ndarray) -> float:
    mses = [float(np.mean((design(t.features, basis) @ model.w - t.labels) ** 2)) for t in tasks.sources]
    return float(np.asarray(alpha) @ np.asarray(mses))


def _run_linear(spec: ExperimentSpec, trial: int, shots: int, tasks: TaskCollection, evaluation: Task,
                basis: BasisFn, out: "_Collector") -> None:
    """All linear methods on one (sources, target-train, target-eval) split."""
    gram = build_task_gram(tasks, LossEmbedding("square", basis))
    weights = {}
    for method in spec.methods:
        if method == "target_only":
            model, alpha = fit_target_only(tasks.target, basis), None
        else:
            wmode = WEIGHTING[method]
            if wmode not in weights:
                weights[wmode] = solve_weights(gram, wmode)
            alpha = weights[wmode]
            mode = "maml" if method.endswith("maml") else "erm"
            model = fit_weighted_linear(tasks, basis, alpha, spec.eta, mode)
            out.log.append({
                "trial": trial, "method": method, "shots": shots, "iter": 0,
                "weighted_loss": _weighted_source_mse(tasks, basis, model, alpha.alpha),
                "gamma_k": kernel_distance(gram, alpha), "alpha_entropy": alpha.entropy(),
            })
        curve = linear_curve(model, tasks.target, evaluation, basis, spec.adapt_steps, spec.adapt_lr)
        out.add(trial, method, shots, curve ** 2, None if alpha is None else alpha.alpha, spec.adapt_steps)


def _linear1d_trial(spec: ExperimentSpec, trial: int, shots: int, out, cache) -> None:
    syn = SyntheticSpec(
        "linear1d", num_sources=spec.num_sources or DEFAULT_SOURCES["linear1d"], target_size=shots,
        eval_size=spec.eval_size, seed=derive_seed(spec.seed, "trial", trial, "data"), **spec.data,
    )
    tasks = generate_linear1d(syn)
    basis = BasisFn("identity_with_bias", input_dim=1)
    _run_linear(spec, trial, shots, tasks, tasks.target.eval_task(), basis, out)


def _csv_trial(spec: ExperimentSpec, trial: int, shots: int, out, cache) -> None:
    opts = dict(spec.data)
    standardize = opts.pop("standardize", True)
    if "full" not in cache:
        if "path" not in opts:
            raise ExperimentError("csv_regression needs data.path")
        cache["full"] = load_csv_tasks(**opts)
    full: TaskCollection = cache["full"]
    target = full.target
    if shots >= target.size:
        raise ExperimentError(f"target group has {target.size} rows; shots={shots} leaves none for testing")
    perm = make_rng(spec.seed, "trial", trial, "split").permutation(target.size)
    tr, te = np.sort(perm[:shots]), np.sort(perm[shots:])
    sources = list(full.sources)
    if spec.num_sources is not None:
        sources = sources[:spec.num_sources]
    if standardize:
        pooled = np.vstack([s.features for s in sources] + [target.features[tr]])
        mu = pooled.mean(axis=0)
        sd = pooled.std(axis=0)
        sd[sd == 0] = 1.0
    else:
        mu, sd = 0.0, 1.0

    def z(X):
        return (X - mu) / sd

    srcs = tuple(Task(z(s.features), s.labels, s.id) for s in sources)
    train = Task(z(target.features[tr]), target.labels[tr], target.id)
    evaluation = Task(z(target.features[te]), target.labels[te], target.id + "/eval")
    basis = BasisFn("identity_with_bias", input_dim=full.dim)
    _run_linear(spec, trial, shots, TaskCollection(srcs, train, full.meta), evaluation, basis, out)


def _sales_trial(spec: ExperimentSpec, trial: int, shots: int, out, cache) -> None:
    opts = dict(spec.data)
    if "series" not in cache:
        if "path" not in opts:
            raise ExperimentError("sales_rff needs data.path")
        cache["series"] = load_wide_series(opts["path"], opts.get("id_column", "Product_Code"),
                                           opts.get("value_prefix", "W"))
    ids, values = cache["series"]
    n_weeks = values.shape[1]
    test_start = int(opts.get("test_start", 10))
    if shots > test_start or test_start >= n_weeks:
        raise ExperimentError(f"need shots <= test_start < {n_weeks} weeks (shots={shots}, test_start={test_start})")
    if "targets" in opts:
        targets = [ids.index(str(t)) for t in opts["targets"]]
    else:
        k = min(int(opts.get("num_targets", 20)), len(ids))
        targets = sorted(make_rng(spec.seed, "targets").choice(len(ids), size=k, replace=False).tolist())
    if trial >= len(targets):
        raise ExperimentError(f"trial {trial} but only {len(targets)} target products")
    ti = targets[trial]
    J = spec.num_sources or DEFAULT_SOURCES["sales_rff"]
    src_rows = [i for i in range(len(ids)) if i != ti][:J]
    weeks = np.arange(n_weeks, dtype=float)[:, None]
    srcs = tuple(Task(weeks, values[i], ids[i]) for i in src_rows)
    train = Task(weeks[:shots], values[ti, :shots], ids[ti])
    evaluation = Task(weeks[test_start:], values[ti, test_start:], ids[ti] + "/eval")
    sigma = opts.get("sigma") or median_bandwidth(np.vstack([weeks, train.features]))
    basis = BasisFn("random_fourier", input_dim=1, output_dim=int(opts.get("rff_dim", 100)), sigma=float(sigma),
                    seed=derive_seed(spec.seed, "trial", trial, "rff"))
    _run_linear(spec, trial, shots, TaskCollection(srcs, train), evaluation, basis, out)


# --------------------------------------------------------------------------
# sine family

def _sine_trial(spec: ExperimentSpec, trial: int, shots: int, out, cache) -> None:
    syn = SyntheticSpec(
        "sine", num_sources=spec.num_sources or DEFAULT_SOURCES["sine"], target_size=shots,
        eval_size=spec.eval_size, seed=derive_seed(spec.seed, "trial", trial, "data"), **spec.data,
    )
    tasks = generate_sine(syn)
    evaluation = tasks.target.eval_task()
    cfg = spec.train_config(trial)
    for method in spec.methods:
        log: list[dict] = []
        alpha = None
        if method == "target_only":
            params = init_mlp(cfg.sizes(tasks.dim), cfg.seed)
        elif method == "direct_bound":
            opts = dict(spec.direct_bound)
            db_cfg = replace(cfg, batch_tasks=int(opts.pop("batch_tasks", 150)))
            params, w = train_direct_bound(tasks, db_cfg, log=log, **opts)
            alpha = w.alpha
        else:
            m_cfg = cfg if method.endswith("maml") else replace(cfg, inner_lr=0.0)
            params = train_alpha_maml(tasks, m_cfg, WEIGHTING[method], log=log)
        for row in log:
            out.log.append({"trial": trial, "method": method, "shots": shots, **row})
        curve = mlp_curve(params, tasks.target, evaluation, spec.adapt_steps, spec.adapt_lr)
        out.add(trial, method, shots, curve, alpha, spec.adapt_steps)


_RUNNERS = {
    "linear1d": _linear1d_trial,
    "sine": _sine_trial,
    "csv_regression": _csv_trial,
    "sales_rff": _sales_trial,
}


class _Collector:
    def __init__(self):
        self.rows, self.log, self.curves = [], [], []

    def add(self, trial, method, shots, mse_curve, alpha, steps):
        mse_curve = np.asarray(mse_curve, dtype=float)
        self.rows.append({
            "trial": trial, "method": method, "shots": shots,
            "rmse_init": float(np.sqrt(mse_curve[0])), "rmse_adapted": float(np.sqrt(mse_curve[-1])),
            "steps": steps, "alpha": None if alpha is None else [float(a) for a in alpha],
        })
        for k, v in enumerate(mse_curve):
            self.curves.append({"trial": trial, "method": method, "shots": shots, "step": k, "mse": float(v)})


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    runner = _RUNNERS[spec.name]
    out = _Collector()
    cache: dict = {}
    for trial in range(spec.trials):
        for shots in spec.shots:
            try:
                runner(spec, trial, shots, out, cache)
            except ExperimentError:
                raise
            except Exception as e:
                raise ExperimentError(f"{spec.name}, trial {trial}, {shots}-shot: {type(e).__name__}: {e}") from e
    result = ExperimentResult(spec, out.rows, out.log, out.curves)
    if spec.output_dir is not None:
        write_outputs(result, spec.output_dir)
    return result


# --------------------------------------------------------------------------
# output files

def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _config_line(config: dict) -> str:
    return "# config: " + json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))


def _csv_text(config: dict, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(_config_line(config) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([r.get(c, "") for c in columns])
    return buf.getvalue()


def read_config_line(path: str | Path) -> dict:
    """The configuration embedded in the first line of an output CSV."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("# config: "):
        raise ValueError(f"{path} has no embedded config line")
    return json.loads(first[len("# config: "):])


def write_outputs(result: ExperimentResult, output_dir: str | Path) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = result.spec.to_dict()
    rows = [{**{k: v for k, v in r.items() if k != "alpha"},
             "alpha_json": json.dumps(r["alpha"], separators=(",", ":"))} for r in result.rows]
    doc = {"config": config, "trials": result.rows, "aggregate": result.aggregate}
    (out / "results.json").write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "results.csv").write_text(_csv_text(config, RESULT_COLUMNS, rows), encoding="utf-8")
    (out / "log.csv").write_text(_csv_text(config, LOG_COLUMNS, result.log), encoding="utf-8")
    (out / "curves.csv").write_text(_csv_text(config, CURVE_COLUMNS, result.curves), encoding="utf-8")
    return out
