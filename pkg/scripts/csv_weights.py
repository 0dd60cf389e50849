"""Source weights for a grouped CSV data set, e.g. the age-group splits.

Uses the data block of an experiment config (see configs/diabetes.json) and
prints the QP weights per source group using the first ``--shots`` target rows
of a seeded permutation, matching the experiment's split of trial 0.
"""

import argparse
import json

import numpy as np

from alphameta.features import BasisFn, LossEmbedding
from alphameta.kernel_distance import build_task_gram
from alphameta.rng import make_rng
from alphameta.tasks import Task, TaskCollection, load_csv_tasks
from alphameta.weights import solve_alpha_qp


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config")
    ap.add_argument("--path", help="override data.path")
    ap.add_argument("--shots", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = json.loads(open(args.config).read())
    data = dict(cfg["data"])
    if args.path:
        data["path"] = args.path
    full = load_csv_tasks(**data)
    shots = args.shots or cfg.get("shots", [20])[0]
    tr = np.sort(make_rng(args.seed, "trial", 0, "split").permutation(full.target.size)[:shots])
    pooled = np.vstack([s.features for s in full.sources] + [full.target.features[tr]])
    mu, sd = pooled.mean(0), pooled.std(0)
    sd[sd == 0] = 1.0
    srcs = tuple(Task((s.features - mu) / sd, s.labels, s.id) for s in full.sources)
    target = Task((full.target.features[tr] - mu) / sd, full.target.labels[tr], full.target.id)
    basis = BasisFn("identity_with_bias", input_dim=full.dim)
    alpha, report = solve_alpha_qp(build_task_gram(TaskCollection(srcs, target), LossEmbedding("square", basis)))
    print("source\talpha")
    for sid, a in zip(alpha.ids, alpha.alpha):
        print(f"{sid}\t{a:.4f}")
    print(f"# kernel distance^2 {alpha.objective_value:.6g}, KKT residual {report.kkt_residual:.1e}")


if __name__ == "__main__":
    main()
