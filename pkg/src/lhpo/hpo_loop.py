"""Full optimization episodes on held-out tasks, plus the baseline policies.

An episode evaluates a few seeded-uniform configurations, then alternates:
pick an action with the configured policy, look up its true loss in the
response table, append it to the history, and (optionally) fine-tune every
ensemble member on the episode's own observations. The passed-in ensemble is
never mutated; episodes operate on a private copy.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from lhpo.ensemble import Ensemble
from lhpo.evaluation import normalized_regret
from lhpo.meta_dataset import HyperparameterGrid, TaskResponseTable
from lhpo.planner import PlannerConfig, lookahead_select, mpc_select, simulate_trajectories
from lhpo.seeding import stream
from lhpo.surrogate import AdamState, MdpState, adam_step, leave_one_out_loss_and_grad

logger = logging.getLogger(__name__)

POLICIES = ("lookahead_mpc", "mpc", "greedy", "random")

FINE_TUNE_BATCH_CAP = 64


@dataclass(frozen=True)
class EpisodeConfig:
    n_trials: int = 50
    n_init: int = 3
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    fine_tune_steps: int = 10
    fine_tune_lr: float = 1e-3
    policy: str = "lookahead_mpc"
    label: str | None = None  # method name in traces; defaults to the policy
    seed: int = 0

    def validate(self, n_configs: int) -> None:
        if self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if self.n_init + self.n_trials > n_configs:
            raise ValueError(
                f"budget {self.n_init}+{self.n_trials} exceeds grid of {n_configs}"
            )
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.fine_tune_steps < 0:
            raise ValueError("fine_tune_steps must be non-negative")
        self.planner.validate()

    @property
    def method_label(self) -> str:
        return self.label if self.label is not None else self.policy


@dataclass(frozen=True)
class TraceRow:
    trial: int
    config_index: int
    loss: float
    best_so_far: float
    regret: float
    ms: float


@dataclass
class EpisodeTrace:
    task_id: str
    policy: str  # method label used for reporting
    seed: int
    n_init: int
    rows: list[TraceRow]

    def validate(self) -> None:
        best = np.array([r.best_so_far for r in self.rows])
        if np.any(np.diff(best) > 0.0):
            raise ValueError("best-so-far must be non-increasing")
        idx = [r.config_index for r in self.rows]
        if len(set(idx)) != len(idx):
            raise ValueError("a configuration was evaluated twice")


def baseline_select(
    policy: str,
    ens: Ensemble,
    state: MdpState,
    grid: HyperparameterGrid,
    rng: np.random.Generator,
) -> int:
    """Model-free random choice, or one-step greedy argmin of the ensemble mean."""
    remaining = np.setdiff1d(np.arange(grid.n_configs, dtype=np.int64), state.indices())
    if remaining.size == 0:
        raise ValueError("no unevaluated configurations remain")
    if policy == "random":
        return int(remaining[rng.integers(remaining.size)])
    if policy == "greedy":
        mu, _ = ens.predict_many(state, remaining, grid)
        return int(remaining[int(np.argmin(mu))])
    raise ValueError(f"unknown baseline policy {policy!r}")


def fine_tune(
    ens: Ensemble,
    state: MdpState,
    grid: HyperparameterGrid,
    steps: int,
    lr: float,
    rng: np.random.Generator,
) -> Ensemble:
    """Adapt every member to the episode's own history.

    Each step minimizes the NLL of predicting each observed point from the
    rest of the history (uniformly sampled when the history outgrows the
    batch cap). ``steps=0`` is a no-op; a single-point history is skipped
    with a warning because it admits no held-out pair.
    """
    if len(state) == 0:
        raise ValueError("fine-tuning requires a non-empty history")
    if steps == 0:
        return ens
    if len(state) < 2:
        logger.warning(
            "fine_tune skipped: history of size 1 admits no held-out pair (task %s)",
            state.task_ref,
        )
        return ens
    indices = state.indices()
    losses = state.losses()
    m = indices.size
    new_members = []
    for params in ens.members:
        opt = AdamState.zeros(params.arch.n_params)
        for _ in range(steps):
            rows_used = None
            if m > FINE_TUNE_BATCH_CAP:
                rows_used = rng.choice(m, size=FINE_TUNE_BATCH_CAP, replace=False)
            _, grad = leave_one_out_loss_and_grad(params, indices, losses, grid, rows_used)
            params, opt = adam_step(opt, params, grad, lr)
        new_members.append(params)
    return Ensemble(new_members, list(ens.member_seeds))


def run_episode(
    ens: Ensemble,
    task: TaskResponseTable,
    grid: HyperparameterGrid,
    cfg: EpisodeConfig,
) -> EpisodeTrace:
    """Run one full episode; returns the per-trial trace.

    The initial evaluations and all per-trial streams derive from ``cfg.seed``
    and are independent of the policy, so competing methods share their
    starting points.
    """
    cfg.validate(grid.n_configs)
    if ens.arch.input_dim != grid.dim:
        raise ValueError(
            f"ensemble expects {ens.arch.input_dim}-dim configs, grid has {grid.dim}"
        )
    task.validate(grid.n_configs)
    ens = ens.copy()

    init_rng = stream(cfg.seed, "episode-init")
    init_actions = init_rng.choice(grid.n_configs, size=cfg.n_init, replace=False)

    state = MdpState(task.task_id)
    rows: list[TraceRow] = []
    observed: list[float] = []

    def record(action: int, started: float) -> None:
        loss = float(task.responses[action])
        observed.append(loss)
        rows.append(
            TraceRow(
                trial=len(rows),
                config_index=int(action),
                loss=loss,
                best_so_far=min(observed),
                regret=normalized_regret(task, observed),
                ms=(time.perf_counter() - started) * 1e3,
            )
        )

    for action in init_actions:
        started = time.perf_counter()
        state = state.with_observation(int(action), float(task.responses[action]))
        record(int(action), started)

    for trial in range(cfg.n_trials):
        started = time.perf_counter()
        if cfg.policy in ("lookahead_mpc", "mpc"):
            trajs = simulate_trajectories(
                ens, state, grid, cfg.planner, stream(cfg.seed, "plan", trial)
            )
            action = lookahead_select(trajs) if cfg.policy == "lookahead_mpc" else mpc_select(trajs)
        else:
            action = baseline_select(
                cfg.policy, ens, state, grid, stream(cfg.seed, "select", trial)
            )
        state = state.with_observation(action, float(task.responses[action]))
        if cfg.fine_tune_steps > 0:
            ens = fine_tune(
                ens,
                state,
                grid,
                cfg.fine_tune_steps,
                cfg.fine_tune_lr,
                stream(cfg.seed, "fine-tune", trial),
            )
        record(action, started)

    trace = EpisodeTrace(task.task_id, cfg.method_label, cfg.seed, cfg.n_init, rows)
    trace.validate()
    return trace


TRACE_COLUMNS = ("task_id", "policy", "seed", "trial", "config_index", "loss", "best_so_far", "regret", "ms")


def write_trace_csv(traces, path) -> None:
    """One row per trial: task_id,policy,seed,trial,config_index,loss,best_so_far,regret,ms."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for trace in traces:
            for r in trace.rows:
                fh.write(
                    f"{trace.task_id},{trace.policy},{trace.seed},{r.trial},"
                    f"{r.config_index},{r.loss!r},{r.best_so_far!r},{r.regret!r},{r.ms!r}\n"
                )


def read_trace_csv(path, n_init: int) -> list[EpisodeTrace]:
    """Parse traces back; ``n_init`` comes from the run manifest."""
    groups: dict[tuple, list[TraceRow]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            key = (rec["task_id"], rec["policy"], int(rec["seed"]))
            groups.setdefault(key, []).append(
                TraceRow(
                    trial=int(rec["trial"]),
                    config_index=int(rec["config_index"]),
                    loss=float(rec["loss"]),
                    best_so_far=float(rec["best_so_far"]),
                    regret=float(rec["regret"]),
                    ms=float(rec["ms"]),
                )
            )
    traces = []
    for (task_id, policy, seed), rows in groups.items():
        rows.sort(key=lambda r: r.trial)
        traces.append(EpisodeTrace(task_id, policy, seed, n_init, rows))
    return traces
