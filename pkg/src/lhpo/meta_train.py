"""Meta-training of the ensemble on random-policy transition data.

Training examples are quadruples: a task, a random set of its already-scored
configurations (the state), one unscored configuration (the action), and that
configuration's true loss (the target). Each ensemble member is meta-trained
independently with first-order meta-learning: clone the weights, adapt them
with a few optimizer steps on one task's quadruples, and move the base
weights toward the average adapted weights. Validation NLL on held-out tasks
drives early stopping; the best checkpoint per member is kept.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from lhpo.ensemble import Ensemble, aggregate_arrays
from lhpo.meta_dataset import MetaDataset
from lhpo.seeding import stream
from lhpo.surrogate import (
    AdamState,
    MdpState,
    PreparedBatch,
    SurrogateParams,
    adam_step,
    nll_loss_and_grad,
    prepare_batch,
    prepared_mean_var,
    sgd_step,
)


@dataclass(frozen=True)
class Quadruple:
    """One training example drawn from a task's response table."""

    task_id: str
    state: MdpState
    action: int
    target: float


@dataclass(frozen=True)
class MetaTrainConfig:
    task_batch_size: int = 8
    minibatches_per_task: int = 64
    inner_steps: int = 5
    inner_lr: float = 1e-3
    outer_lr: float = 1.0
    t_min: int = 1
    t_max: int | None = None  # resolved to min(50, N - 1)
    max_outer_iters: int = 10000
    eval_every: int = 50
    patience: int = 20
    eval_quadruples: int = 256
    inner_optimizer: str = "adam"  # "adam" or "sgd"
    seed: int = 0

    def resolved_t_max(self, n_configs: int) -> int:
        return min(50, n_configs - 1) if self.t_max is None else self.t_max

    def validate(self, n_configs: int) -> None:
        if self.task_batch_size < 1:
            raise ValueError("task_batch_size must be at least 1")
        if self.minibatches_per_task < 1:
            raise ValueError("minibatches_per_task must be at least 1")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be at least 1")
        if self.t_min < 1:
            raise ValueError("t_min must be at least 1")
        t_max = self.resolved_t_max(n_configs)
        if t_max > n_configs - 1 or t_max < self.t_min:
            raise ValueError(f"t_max must lie in [{self.t_min}, {n_configs - 1}]")
        if self.max_outer_iters < 1 or self.eval_every < 1 or self.patience < 1:
            raise ValueError("iteration controls must be positive")
        if self.inner_optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown inner optimizer {self.inner_optimizer!r}")


def sample_quadruple(
    md: MetaDataset, task_id: str, t: int, rng: np.random.Generator
) -> Quadruple:
    """Uniform state of ``t`` distinct scored configs plus one unscored action."""
    task = md.task(task_id)
    n = md.grid.n_configs
    if not 1 <= t <= n - 1:
        raise ValueError(f"t must lie in [1, {n - 1}], got {t}")
    perm = rng.permutation(n)
    history = tuple((int(i), float(task.responses[i])) for i in perm[:t])
    action = int(perm[t])
    return Quadruple(task_id, MdpState(task_id, history), action, float(task.responses[action]))


def _sample_group(
    md: MetaDataset, task_id: str, t: int, count: int, rng: np.random.Generator
):
    """Vectorized quadruple sampling for one (task, t) cell, already prepared."""
    task = md.task(task_id)
    n = md.grid.n_configs
    if not 1 <= t <= n - 1:
        raise ValueError(f"t must lie in [1, {n - 1}], got {t}")
    keys = rng.random((count, n))
    sel = np.argpartition(keys, t, axis=1)[:, : t + 1]
    sub = np.take_along_axis(keys, sel, axis=1)
    ordered = np.take_along_axis(sel, np.argsort(sub, axis=1), axis=1)
    state_idx = ordered[:, :t]
    actions = ordered[:, t].astype(np.int64)
    order = np.argsort(state_idx, axis=1, kind="stable")
    state_idx = np.take_along_axis(state_idx, order, axis=1).astype(np.int64)
    losses = task.responses[state_idx]
    return state_idx, losses, actions, task.responses[actions]


def _draw_task_batch(
    md: MetaDataset, task_id: str, t: int, count: int, rng: np.random.Generator
) -> PreparedBatch:
    return PreparedBatch([_sample_group(md, task_id, t, count, rng)], count)


def _draw_eval_batch(
    md: MetaDataset,
    task_ids: list[str],
    t_min: int,
    t_max: int,
    count: int,
    rng: np.random.Generator,
) -> PreparedBatch:
    """Fresh evaluation batch: (task, t) drawn per quadruple, grouped for batching."""
    picks = rng.integers(0, len(task_ids), size=count)
    ts = rng.integers(t_min, t_max + 1, size=count)
    cells: dict[tuple[int, int], int] = {}
    for p, t in zip(picks, ts):
        cells[(int(p), int(t))] = cells.get((int(p), int(t)), 0) + 1
    groups = [
        _sample_group(md, task_ids[p], t, k, rng) for (p, t), k in cells.items()
    ]
    return PreparedBatch(groups, count)


def _nll_mse(mu: np.ndarray, var: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    r = target - mu
    nll = 0.5 * np.log(var) + r * r / (2.0 * var)
    return float(nll.mean()), float((r * r).mean())


def _member_valid_metrics(
    params: SurrogateParams, md: MetaDataset, cfg: MetaTrainConfig, rng: np.random.Generator
) -> tuple[float, float]:
    valid_ids = md.split_ids("valid")
    t_max = cfg.resolved_t_max(md.grid.n_configs)
    batch = _draw_eval_batch(md, valid_ids, cfg.t_min, t_max, cfg.eval_quadruples, rng)
    mu, var, target = prepared_mean_var(params, batch, md.grid)
    return _nll_mse(mu, var, target)


def _inner_adapt(
    params: SurrogateParams, batch: PreparedBatch, grid, cfg: MetaTrainConfig, context: str
) -> tuple[SurrogateParams, float]:
    """Clone-and-adapt: ``inner_steps`` optimizer steps on one task's batch."""
    adapted = params
    opt = AdamState.zeros(params.arch.n_params)
    first_loss = None
    for _ in range(cfg.inner_steps):
        loss, grad = nll_loss_and_grad(adapted, batch, grid)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite training loss ({loss}) at {context}")
        if first_loss is None:
            first_loss = loss
        if cfg.inner_optimizer == "adam":
            adapted, opt = adam_step(opt, adapted, grad, cfg.inner_lr)
        else:
            adapted = sgd_step(adapted, grad, cfg.inner_lr)
    return adapted, first_loss


def reptile_meta_train(
    ens: Ensemble, md: MetaDataset, cfg: MetaTrainConfig
) -> tuple[Ensemble, list[list[tuple]]]:
    """Meta-train every member; returns the best-validation ensemble and logs.

    Log rows are ``(outer_iter, train_nll, valid_nll, valid_mse, wall_ms)``,
    one row per validation evaluation (plus the iteration-0 baseline).
    """
    cfg.validate(md.grid.n_configs)
    train_ids = md.split_ids("train")
    if not train_ids:
        raise ValueError("train split is empty")
    if not md.split_ids("valid"):
        raise ValueError("valid split is empty")
    t_max = cfg.resolved_t_max(md.grid.n_configs)

    new_members = []
    logs: list[list[tuple]] = []
    for i, member in enumerate(ens.members):
        rng = stream(cfg.seed, "meta-train", i)
        started = time.perf_counter()
        params = member.copy()
        valid_nll, valid_mse = _member_valid_metrics(
            params, md, cfg, stream(cfg.seed, "valid-eval", i, 0)
        )
        rows = [(0, float("nan"), valid_nll, valid_mse, _ms_since(started))]
        best_theta = params.theta.copy()
        best_nll = valid_nll
        stall = 0
        window: list[float] = []

        for outer in range(1, cfg.max_outer_iters + 1):
            t = int(rng.integers(cfg.t_min, t_max + 1))
            picks = rng.integers(0, len(train_ids), size=cfg.task_batch_size)
            delta = np.zeros(params.arch.n_params)
            for p in picks:
                task_id = train_ids[int(p)]
                batch = _draw_task_batch(md, task_id, t, cfg.minibatches_per_task, rng)
                adapted, first_loss = _inner_adapt(
                    params, batch, md.grid, cfg, f"member {i}, outer {outer}, task {task_id}"
                )
                window.append(first_loss)
                delta += adapted.theta - params.theta
            params = SurrogateParams(
                params.arch, params.theta + cfg.outer_lr * delta / cfg.task_batch_size
            )

            if outer % cfg.eval_every == 0:
                valid_nll, valid_mse = _member_valid_metrics(
                    params, md, cfg, stream(cfg.seed, "valid-eval", i, outer)
                )
                rows.append(
                    (outer, float(np.mean(window)), valid_nll, valid_mse, _ms_since(started))
                )
                window = []
                if valid_nll < best_nll:
                    best_nll = valid_nll
                    best_theta = params.theta.copy()
                    stall = 0
                else:
                    stall += 1
                if stall >= cfg.patience:
                    break

        new_members.append(SurrogateParams(params.arch, best_theta))
        logs.append(rows)
    return Ensemble(new_members, list(ens.member_seeds)), logs


def _ms_since(start: float) -> float:
    return (time.perf_counter() - start) * 1e3


def evaluate_nll(
    ens: Ensemble, md: MetaDataset, split: str, n_quadruples: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Mean aggregated NLL and mean squared error on freshly sampled quadruples."""
    ids = md.split_ids(split)
    if not ids:
        raise ValueError(f"{split} split is empty")
    t_max = min(50, md.grid.n_configs - 1)
    batch = _draw_eval_batch(md, ids, 1, t_max, n_quadruples, rng)
    mus, variances = [], []
    target = None
    for m in ens.members:
        if hasattr(m, "prepared_mean_var"):  # seam for oracle stubs in tests
            mu, var, target = m.prepared_mean_var(batch, md.grid)
        else:
            mu, var, target = prepared_mean_var(m, batch, md.grid)
        mus.append(mu)
        variances.append(var)
    mu_star, var_star = aggregate_arrays(np.stack(mus), np.stack(variances))
    return _nll_mse(mu_star, var_star, target)


def quadruples_to_batch(quads: list[Quadruple], grid) -> PreparedBatch:
    """Prepare explicit ``Quadruple`` objects for the batched loss/gradient."""
    return prepare_batch([(q.state, q.action, q.target) for q in quads], grid)


def write_training_log(rows: list[tuple], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("outer_iter,train_nll,valid_nll,valid_mse,wall_ms\n")
        for outer, train_nll, valid_nll, valid_mse, wall_ms in rows:
            fh.write(f"{outer},{train_nll},{valid_nll},{valid_mse},{wall_ms}\n")
