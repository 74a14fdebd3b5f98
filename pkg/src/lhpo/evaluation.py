"""Metrics and report aggregation: normalized regret and average rank.

Normalized regret is the distance of the best evaluated loss from the task
optimum, rescaled by the task's response range; on pre-normalized tasks it is
simply the best observed loss. Rank compares methods within each
(task, seed, trial) cell with fractional (mean) ranks for ties, so the per
cell ranks always sum to M(M+1)/2 for M methods.

Reporting convention: trial ``k`` means the k-th planned evaluation, i.e.
trace row ``n_init + k - 1``; the seeded initial evaluations are shared by
all methods and participate through the best-so-far, not as reported trials.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from lhpo.errors import DegenerateTaskError, IncompleteDesignError
from lhpo.meta_dataset import TaskResponseTable


def normalized_regret(task: TaskResponseTable, evaluated_losses) -> float:
    """Distance of the best evaluated loss from the task optimum, in [0, 1]."""
    losses = list(evaluated_losses)
    if not losses:
        raise ValueError("normalized regret needs at least one evaluated loss")
    span = task.loss_max - task.loss_min
    if span <= 0.0:
        raise DegenerateTaskError(
            f"task {task.task_id!r} has a constant response surface (min == max)"
        )
    return (min(losses) - task.loss_min) / span


def average_rank(per_method_regrets: dict[str, float], tie_policy: str = "average") -> dict[str, float]:
    """Fractional ranking of methods by regret (1 = best); ties share ranks."""
    if tie_policy != "average":
        raise ValueError(f"unsupported tie policy {tie_policy!r}")
    if len(per_method_regrets) < 2:
        raise ValueError("ranking needs at least two methods")
    methods = sorted(per_method_regrets)
    values = np.array([per_method_regrets[m] for m in methods], dtype=np.float64)
    if not np.isfinite(values).all():
        raise ValueError("regrets must be finite")
    ranks = rankdata(values, method="average")
    return {m: float(r) for m, r in zip(methods, ranks)}


@dataclass(frozen=True)
class RegretCurve:
    """Per-trial mean and standard deviation of regret across (task, seed) cells."""

    method: str
    trials: np.ndarray  # (T,) 1-based planned-trial numbers
    mean: np.ndarray
    sd: np.ndarray

    def validate(self) -> None:
        if self.mean.min() < 0.0 or self.mean.max() > 1.0:
            raise ValueError(f"{self.method}: mean regret outside [0, 1]")
        if np.any(np.diff(self.mean) > 1e-12):
            raise ValueError(f"{self.method}: mean regret curve is not non-increasing")


@dataclass(frozen=True)
class RankTable:
    """methods x trials mean ranks with per-cell standard deviations."""

    methods: list[str]
    trials: np.ndarray
    mean: np.ndarray  # (M, T)
    sd: np.ndarray  # (M, T)

    def validate(self) -> None:
        m = len(self.methods)
        expected = (m + 1) / 2.0
        if np.abs(self.mean.mean(axis=0) - expected).max() > 1e-9:
            raise ValueError("mean ranks do not average to (M+1)/2")


def aggregate_report(traces, tasks=None, checkpoints=(15, 33, 50)):
    """Collect traces into per-method regret curves and the rank table.

    ``traces`` must cover every (method, task, seed) cell exactly once;
    missing cells raise ``IncompleteDesignError`` naming the holes.
    Returns ``(curves, rank_table)`` with curves keyed by method.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to aggregate")
    methods = sorted({t.policy for t in traces})
    if len(methods) < 2:
        raise ValueError("ranking needs at least two methods")
    task_ids = sorted(tasks) if tasks is not None else sorted({t.task_id for t in traces})
    seeds = sorted({t.seed for t in traces})

    n_init = {t.n_init for t in traces}
    lengths = {len(t.rows) for t in traces}
    if len(n_init) != 1 or len(lengths) != 1:
        raise ValueError("traces disagree on episode shape (n_init or length)")
    n_init = n_init.pop()
    n_planned = lengths.pop() - n_init
    for c in checkpoints:
        if not 1 <= c <= n_planned:
            raise ValueError(f"checkpoint trial {c} outside 1..{n_planned}")

    by_cell = {}
    for t in traces:
        key = (t.policy, t.task_id, t.seed)
        if key in by_cell:
            raise IncompleteDesignError(f"duplicate trace for cell {key}")
        by_cell[key] = t
    missing = [
        (m, task, seed)
        for m in methods
        for task in task_ids
        for seed in seeds
        if (m, task, seed) not in by_cell
    ]
    if missing:
        raise IncompleteDesignError(f"missing (method, task, seed) cells: {missing}")

    regret = np.empty((len(methods), len(task_ids), len(seeds), n_planned))
    for i, m in enumerate(methods):
        for j, task in enumerate(task_ids):
            for k, seed in enumerate(seeds):
                rows = by_cell[(m, task, seed)].rows
                regret[i, j, k] = [rows[n_init + q].regret for q in range(n_planned)]

    ranks = rankdata(regret, method="average", axis=0)
    trials = np.arange(1, n_planned + 1)
    curves = {}
    for i, m in enumerate(methods):
        curve = RegretCurve(
            m, trials, regret[i].mean(axis=(0, 1)), regret[i].std(axis=(0, 1))
        )
        curve.validate()
        curves[m] = curve
    rank_table = RankTable(
        methods, trials, ranks.mean(axis=(1, 2)), ranks.std(axis=(1, 2))
    )
    rank_table.validate()
    return curves, rank_table


def write_report(
    outdir, curves: dict[str, RegretCurve], rank_table: RankTable, checkpoints=(15, 33, 50)
) -> list[str]:
    """Emit curve CSVs per method plus checkpoint tables; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    for m in rank_table.methods:
        curve = curves[m]
        path = outdir / f"regret_curve_{m}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("trial,mean,sd\n")
            for t, mu, sd in zip(curve.trials, curve.mean, curve.sd):
                fh.write(f"{t},{mu!r},{sd!r}\n")
        written.append(str(path))

    i_by_method = {m: i for i, m in enumerate(rank_table.methods)}
    for m in rank_table.methods:
        path = outdir / f"rank_curve_{m}.csv"
        i = i_by_method[m]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("trial,mean,sd\n")
            for t, mu, sd in zip(rank_table.trials, rank_table.mean[i], rank_table.sd[i]):
                fh.write(f"{t},{mu!r},{sd!r}\n")
        written.append(str(path))

    cols = ",".join(str(c) for c in checkpoints)
    for name, table in (("regret", None), ("rank", rank_table.mean)):
        path = outdir / f"{name}_table.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"method,{cols}\n")
            for m in rank_table.methods:
                if name == "regret":
                    vals = [curves[m].mean[c - 1] for c in checkpoints]
                else:
                    vals = [rank_table.mean[i_by_method[m], c - 1] for c in checkpoints]
                fh.write(m + "," + ",".join(repr(float(v)) for v in vals) + "\n")
        written.append(str(path))
    return written
