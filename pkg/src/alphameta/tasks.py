"""Task containers, CSV ingestion and the synthetic task families."""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import make_rng


class TaskDataError(ValueError):
    pass


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise TaskDataError(f"{name} must be 2-d, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Task:
    """One dataset: ``features`` (N x d), ``labels`` (N,) and an id.

    A held-out evaluation split may travel with the task in
    ``eval_features`` / ``eval_labels``; it never enters weight selection or
    meta-training.
    """

    features: np.ndarray
    labels: np.ndarray
    id: str = "task"
    eval_features: np.ndarray | None = None
    eval_labels: np.ndarray | None = None

    def __post_init__(self):
        X = _as_matrix(self.features, "features")
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        if X.shape[0] < 1:
            raise TaskDataError(f"task {self.id!r} is empty")
        if X.shape[0] != y.shape[0]:
            raise TaskDataError(
                f"task {self.id!r}: {X.shape[0]} feature rows but {y.shape[0]} labels"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise TaskDataError(f"task {self.id!r} has non-finite entries")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if (self.eval_features is None) != (self.eval_labels is None):
            raise TaskDataError(f"task {self.id!r}: eval features and labels must come together")
        if self.eval_features is not None:
            Xe = _as_matrix(self.eval_features, "eval_features")
            ye = np.asarray(self.eval_labels, dtype=float).reshape(-1)
            if Xe.shape[0] != ye.shape[0] or Xe.shape[1] != X.shape[1]:
                raise TaskDataError(f"task {self.id!r}: eval split shape mismatch")
            if not (np.all(np.isfinite(Xe)) and np.all(np.isfinite(ye))):
                raise TaskDataError(f"task {self.id!r} has non-finite eval entries")
            object.__setattr__(self, "eval_features", Xe)
            object.__setattr__(self, "eval_labels", ye)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_eval(self) -> bool:
        return self.eval_features is not None

    def eval_task(self) -> "Task":
        if not self.has_eval:
            raise TaskDataError(f"task {self.id!r} carries no eval split")
        return Task(self.eval_features, self.eval_labels, id=f"{self.id}:eval")

    def head(self, n: int) -> "Task":
        """First ``n`` rows as a new task; the remaining rows become its eval split."""
        if not 1 <= n < self.size:
            raise TaskDataError(f"cannot split {self.size} rows into {n} + rest")
        return Task(
            self.features[:n], self.labels[:n], id=self.id,
            eval_features=self.features[n:], eval_labels=self.labels[n:],
        )

    def to_dict(self) -> dict:
        d = {"id": self.id, "features": self.features.tolist(), "labels": self.labels.tolist()}
        if self.has_eval:
            d["eval"] = {"features": self.eval_features.tolist(), "labels": self.eval_labels.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        ev = d.get("eval")
        return cls(
            np.asarray(d["features"], dtype=float).reshape(len(d["labels"]), -1),
            d["labels"],
            id=str(d.get("id", "task")),
            eval_features=None if ev is None else np.asarray(ev["features"], dtype=float).reshape(len(ev["labels"]), -1),
            eval_labels=None if ev is None else ev["labels"],
        )


@dataclass(frozen=True, eq=False)
class TaskCollection:
    sources: tuple[Task, ...]
    target: Task
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sources = tuple(self.sources)
        if len(sources) < 1:
            raise TaskDataError("need at least one source task")
        d = self.target.dim
        for t in sources:
            if t.dim != d:
                raise TaskDataError(
                    f"feature dimension mismatch: source {t.id!r} has {t.dim}, target has {d}"
                )
        object.__setattr__(self, "sources", sources)

    @property
    def num_sources(self) -> int:
        return len(self.sources)

    @property
    def dim(self) -> int:
        return self.target.dim

    @property
    def source_ids(self) -> list[str]:
        return [t.id for t in self.sources]

    def all_tasks(self) -> list[Task]:
        return [*self.sources, self.target]

    def with_target(self, target: Task) -> "TaskCollection":
        return TaskCollection(self.sources, target, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "sources": [t.to_dict() for t in self.sources],
            "target": self.target.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskCollection":
        return cls(
            tuple(Task.from_dict(s) for s in d["sources"]),
            Task.from_dict(d["target"]),
            dict(d.get("meta", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TaskCollection":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# CSV ingestion

_INTERVAL = re.compile(r"^\s*([\[(])\s*([^,]+?)\s*,\s*([^,]+?)\s*([\])])\s*$")


@dataclass(frozen=True)
class GroupSpec:
    """Either a numeric interval such as ``"[19,29)"`` or a set of literal values."""

    label: str
    lo: float | None = None
    hi: float | None = None
    lo_closed: bool = True
    hi_closed: bool = False
    values: frozenset[str] | None = None

    @classmethod
    def parse(cls, spec: str | Sequence) -> "GroupSpec":
        if isinstance(spec, str):
            m = _INTERVAL.match(spec)
            if m:
                return cls(
                    label=spec.strip(),
                    lo=float(m.group(2)), hi=float(m.group(3)),
                    lo_closed=m.group(1) == "[", hi_closed=m.group(4) == "]",
                )
            return cls(label=spec, values=frozenset([spec.strip()]))
        vals = [str(v).strip() for v in spec]
        if not vals:
            raise TaskDataError("empty value set in group declaration")
        return cls(label="{" + ",".join(vals) + "}", values=frozenset(vals))

    def matches(self, raw: str) -> bool:
        raw = raw.strip()
        if self.values is not None:
            if raw in self.values:
                return True
            try:
                x = float(raw)
            except ValueError:
                return False
            return any(_float_or_none(v) == x for v in self.values)
        try:
            x = float(raw)
        except ValueError:
            return False
        above = x >= self.lo if self.lo_closed else x > self.lo
        below = x <= self.hi if self.hi_closed else x < self.hi
        return above and below


def _float_or_none(s: str) -> float | None:
    try:
        return float(s)
    except ValueError:
        return None


def load_csv_tasks(
    path: str | Path,
    group_column: str,
    source_groups: Sequence[str | Sequence],
    target_group: str | Sequence,
    label_column: str,
    feature_columns: Sequence[str] | None = None,
    unmatched: str = "error",
) -> TaskCollection:
    """Read a headered, comma-separated UTF-8 file and split its rows into tasks.

    One source task is made per entry of ``source_groups`` (in order); rows
    whose group value falls in ``target_group`` form the target. The group
    column never becomes a feature. ``feature_columns`` defaults to every
    column except the group and label columns. Rows matching no declared
    group raise unless ``unmatched="drop"``.
    """
    path = Path(path)
    if not path.exists():
        raise TaskDataError(f"no such file: {path}")
    if unmatched not in ("error", "drop"):
        raise TaskDataError(f"unmatched must be 'error' or 'drop', got {unmatched!r}")
    groups = [GroupSpec.parse(g) for g in source_groups]
    target_spec = GroupSpec.parse(target_group)
    declared = groups + [target_spec]

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TaskDataError(f"{path}: empty file") from None
        for col in [group_column, label_column, *(feature_columns or [])]:
            if col not in header:
                raise TaskDataError(f"{path}: missing column {col!r}")
        if feature_columns is None:
            feature_columns = [h for h in header if h not in (group_column, label_column)]
        if group_column in feature_columns:
            raise TaskDataError("the group column cannot also be a feature")
        gi = header.index(group_column)
        fi = [header.index(c) for c in feature_columns]
        li = header.index(label_column)

        rows: list[list[list[float]]] = [[] for _ in declared]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise TaskDataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            hits = [k for k, g in enumerate(declared) if g.matches(row[gi])]
            if len(hits) > 1:
                raise TaskDataError(
                    f"{path}: row {lineno} group value {row[gi]!r} matches several groups: "
                    + ", ".join(declared[k].label for k in hits)
                )
            if not hits:
                if unmatched == "drop":
                    continue
                raise TaskDataError(f"{path}: row {lineno} group value {row[gi]!r} matches no declared group")
            values = []
            for j in [*fi, li]:
                try:
                    values.append(float(row[j]))
                except ValueError:
                    raise TaskDataError(
                        f"{path}: row {lineno}, column {header[j]!r}: cannot parse {row[j]!r} as a number"
                    ) from None
            rows[hits[0]].append(values)

    tasks = []
    for g, r in zip(declared, rows):
        if not r:
            raise TaskDataError(f"empty group: {g.label} matches zero rows")
        arr = np.asarray(r, dtype=float)
        tasks.append(Task(arr[:, :-1], arr[:, -1], id=g.label))
    return TaskCollection(
        tuple(tasks[:-1]), tasks[-1],
        meta={"source": str(path), "group_column": group_column,
              "feature_columns": list(feature_columns), "label_column": label_column},
    )


def load_wide_series(
    path: str | Path,
    id_column: str,
    value_prefix: str = "W",
) -> tuple[list[str], np.ndarray]:
    """Read one series per row from a wide CSV (an id column plus ``W0, W1, ...``).

    Value columns are those named ``value_prefix`` followed by an integer,
    ordered by that integer. Returns (ids, values) with values of shape
    (rows, columns).
    """
    path = Path(path)
    if not path.exists():
        raise TaskDataError(f"no such file: {path}")
    pat = re.compile(rf"^{re.escape(value_prefix)}(\d+)$")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TaskDataError(f"{path}: empty file") from None
        if id_column not in header:
            raise TaskDataError(f"{path}: missing column {id_column!r}")
        cols = sorted(((int(m.group(1)), k) for k, h in enumerate(header) if (m := pat.match(h))))
        if not cols:
            raise TaskDataError(f"{path}: no columns named {value_prefix}<number>")
        ii = header.index(id_column)
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise TaskDataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            vals = []
            for _, k in cols:
                try:
                    vals.append(float(row[k]))
                except ValueError:
                    raise TaskDataError(
                        f"{path}: row {lineno}, column {header[k]!r}: cannot parse {row[k]!r} as a number"
                    ) from None
            ids.append(row[ii].strip())
            rows.append(vals)
    if not rows:
        raise TaskDataError(f"{path}: no data rows")
    return ids, np.asarray(rows, dtype=float)


# --------------------------------------------------------------------------
# Synthetic families

@dataclass
class SyntheticSpec:
    family: str
    num_sources: int = 9
    samples_per_source: int | None = None
    total_samples: int | None = None
    target_size: int = 20
    eval_size: int = 100
    seed: int = 0
    min_task_size: int = 2
    # linear1d
    mean_range: tuple[float, float] = (-5.0, 5.0)
    noise_std: float = 1.0
    slope_factor: float = 2.0
    target_mean: float | None = None
    # sine
    amplitude_shape: float = 1.0
    amplitude_scale: float = 2.0
    target_amplitude: float = 6.0
    phase_range: tuple[float, float] = (0.0, math.pi)
    x_range: tuple[float, float] = (-5.0, 5.0)
    amplitude_override: float | None = None

    def __post_init__(self):
        if self.family not in ("linear1d", "sine"):
            raise TaskDataError(f"unknown synthetic family {self.family!r}")
        for name in ("num_sources", "target_size", "eval_size", "min_task_size"):
            if getattr(self, name) < 1:
                raise TaskDataError(f"{name} must be positive")
        if self.samples_per_source is not None and self.samples_per_source < 1:
            raise TaskDataError("samples_per_source must be positive")
        if self.noise_std < 0 or self.amplitude_shape <= 0 or self.amplitude_scale <= 0:
            raise TaskDataError("noise_std must be >= 0 and amplitude shape/scale > 0")
        self.mean_range = tuple(float(v) for v in self.mean_range)
        self.phase_range = tuple(float(v) for v in self.phase_range)
        self.x_range = tuple(float(v) for v in self.x_range)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("mean_range", "phase_range", "x_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)


def multinomial_sizes(rng: np.random.Generator, num_tasks: int, total: int, minimum: int) -> np.ndarray:
    """Dirichlet(1,...,1) cell probabilities, then a multinomial draw of ``total``.

    Cells below ``minimum`` are topped up one sample at a time from the
    currently largest cell.
    """
    if total < num_tasks * minimum:
        raise TaskDataError(f"total {total} too small for {num_tasks} tasks of at least {minimum}")
    p = rng.dirichlet(np.ones(num_tasks))
    sizes = rng.multinomial(total, p)
    while sizes.min() < minimum:
        sizes[np.argmin(sizes)] += 1
        sizes[np.argmax(sizes)] -= 1
    return sizes


def _linear_task(rng, mu, n, spec: SyntheticSpec):
    x = rng.normal(mu, 1.0, size=n)
    y = spec.slope_factor * mu * x + rng.normal(0.0, 1.0, size=n) * spec.noise_std
    return x, y


def generate_linear1d(spec: SyntheticSpec) -> TaskCollection:
    """Sources with x ~ N(mu_j, 1) and y = 2 mu_j x + noise, mu_j ~ U(mean_range)."""
    if spec.family != "linear1d":
        raise TaskDataError("generate_linear1d needs family='linear1d'")
    J = spec.num_sources
    if spec.samples_per_source is not None:
        sizes = np.full(J, spec.samples_per_source)
    else:
        total = spec.total_samples if spec.total_samples is not None else 40 * J
        sizes = multinomial_sizes(make_rng(spec.seed, "sizes"), J, total, spec.min_task_size)
    mrng = make_rng(spec.seed, "means")
    mus = mrng.uniform(*spec.mean_range, size=J)
    sources = []
    for j in range(J):
        x, y = _linear_task(make_rng(spec.seed, "source", j), mus[j], int(sizes[j]), spec)
        sources.append(Task(x[:, None], y, id=f"source_{j}"))
    mu_t = spec.target_mean if spec.target_mean is not None else float(mrng.uniform(*spec.mean_range))
    trng = make_rng(spec.seed, "target")
    x, y = _linear_task(trng, mu_t, spec.target_size + spec.eval_size, spec)
    n = spec.target_size
    target = Task(x[:n, None], y[:n], id="target", eval_features=x[n:, None], eval_labels=y[n:])
    meta = {
        "seed": spec.seed, "spec": spec.to_dict(),
        "source_means": mus.tolist(), "target_mean": mu_t,
    }
    return TaskCollection(tuple(sources), target, meta)


def generate_sine(spec: SyntheticSpec) -> TaskCollection:
    """Sources y = A sin(x + phase) with A ~ gamma and phase ~ U(phase_range).

    The target has amplitude ``target_amplitude``; ``target_size`` training
    points plus ``eval_size`` held-out points.
    """
    if spec.family != "sine":
        raise TaskDataError("generate_sine needs family='sine'")
    J = spec.num_sources
    n_src = spec.samples_per_source if spec.samples_per_source is not None else 40
    prng = make_rng(spec.seed, "params")
    amps = prng.gamma(spec.amplitude_shape, spec.amplitude_scale, size=J)
    phases = prng.uniform(*spec.phase_range, size=J)
    if spec.amplitude_override is not None:
        amps = np.full(J, float(spec.amplitude_override))
    xrng = make_rng(spec.seed, "inputs")
    xs = xrng.uniform(*spec.x_range, size=(J, n_src))
    sources = [
        Task(xs[j][:, None], amps[j] * np.sin(xs[j] + phases[j]), id=f"source_{j}")
        for j in range(J)
    ]
    trng = make_rng(spec.seed, "target")
    t_amp = spec.target_amplitude if spec.amplitude_override is None else float(spec.amplitude_override)
    t_phase = float(trng.uniform(*spec.phase_range))
    x = trng.uniform(*spec.x_range, size=spec.target_size + spec.eval_size)
    y = t_amp * np.sin(x + t_phase)
    n = spec.target_size
    target = Task(x[:n, None], y[:n], id="target", eval_features=x[n:, None], eval_labels=y[n:])
    meta = {
        "seed": spec.seed, "spec": spec.to_dict(),
        "source_amplitudes": amps.tolist(), "source_phases": phases.tolist(),
        "target_amplitude": t_amp, "target_phase": t_phase,
    }
    return TaskCollection(tuple(sources), target, meta)


def generate(spec: SyntheticSpec) -> TaskCollection:
    return generate_linear1d(spec) if spec.family == "linear1d" else generate_sine(spec)


def stack_tasks(tasks: Sequence[Task], eval_split: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad tasks to a common length.

    Returns ``X`` (T, n, d), ``y`` (T, n) and per-row weights ``w`` (T, n)
    equal to 1/N_j on real rows and 0 on padding, so that ``(w * r**2).sum(1)``
    is each task's mean squared residual.
    """
    parts = [(t.eval_features, t.eval_labels) if eval_split else (t.features, t.labels) for t in tasks]
    n = max(p[1].shape[0] for p in parts)
    d = parts[0][0].shape[1]
    X = np.zeros((len(parts), n, d))
    y = np.zeros((len(parts), n))
    w = np.zeros((len(parts), n))
    for k, (Xk, yk) in enumerate(parts):
        m = yk.shape[0]
        X[k, :m] = Xk
        y[k, :m] = yk
        w[k, :m] = 1.0 / m
    return X, y, w
