"""Random-shooting trajectory simulation and action selection.

Planning rolls the surrogate forward: sample candidate action sequences,
simulate their losses from the ensemble's aggregated Gaussians (several
particles per trajectory to average out sampling noise), and score actions by
the improvement they achieve over the best loss seen so far.

Two selection rules are provided. ``mpc_select`` executes the first action of
the trajectory whose rollout ends with the best simulated loss. Because
candidate configurations can be evaluated in any order, the trajectory framing
is not binding: ``lookahead_select`` instead picks the single best-scoring
action observed anywhere across all simulated trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lhpo.ensemble import Ensemble, aggregate_arrays, sample_responses
from lhpo.meta_dataset import HyperparameterGrid
from lhpo.seeding import stream
from lhpo.surrogate import MdpState, embed_observations, head_mean_var, history_encoding_sum


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 3
    n_trajectories: int = 1000
    n_particles: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be at least 1")
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")


@dataclass(frozen=True)
class SimulatedTrajectory:
    """One candidate action sequence with its simulated outcomes.

    ``losses`` holds the per-particle sampled losses (particles x steps);
    ``rewards`` the particle-averaged improvement over the running best at
    each step.
    """

    actions: np.ndarray  # (H',) int64
    losses: np.ndarray  # (P, H')
    rewards: np.ndarray  # (H',)


def improvement_reward(history_losses, new_loss: float) -> float:
    """Reduction of the best loss so far achieved by the new evaluation."""
    losses = list(history_losses)
    if not losses:
        raise ValueError("improvement reward needs a non-empty history")
    prior_best = min(losses)
    return max(0.0, prior_best - min(prior_best, float(new_loss)))


class EnsembleRollout:
    """Batched simulation contexts for every (trajectory, particle) copy.

    Keeps one running embedding sum per member per copy; appending a simulated
    observation costs a single encoder pass over the new rows. The initial sum
    over the real history uses the same sorted-index pooling as ``predict``,
    so a one-step rollout scores candidates exactly as ``predict`` would.
    """

    def __init__(self, ens: Ensemble, state: MdpState, grid: HyperparameterGrid, n_copies: int):
        self.members = ens.members
        self.grid = grid
        idx, losses = state.indices(), state.losses()
        self.t = len(state)
        self.sums = [
            np.tile(history_encoding_sum(m, idx, losses, grid), (n_copies, 1))
            for m in self.members
        ]

    def predict_rows(self, action_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        configs = self.grid.configs[action_idx]
        mus = np.empty((len(self.members), action_idx.size))
        variances = np.empty_like(mus)
        for j, m in enumerate(self.members):
            mus[j], variances[j] = head_mean_var(m, configs, self.sums[j] / self.t)
        return aggregate_arrays(mus, variances)

    def observe_rows(self, action_idx: np.ndarray, losses: np.ndarray) -> None:
        configs = self.grid.configs[action_idx]
        for j, m in enumerate(self.members):
            self.sums[j] += embed_observations(m, configs, losses)
        self.t += 1


def _make_rollout(model, state, grid, n_copies):
    if hasattr(model, "start_rollout"):
        return model.start_rollout(state, grid, n_copies)
    return EnsembleRollout(model, state, grid, n_copies)


def simulate_trajectories(
    ens,
    state: MdpState,
    grid: HyperparameterGrid,
    cfg: PlannerConfig,
    rng: np.random.Generator | None = None,
) -> list[SimulatedTrajectory]:
    """Sample and simulate ``n_trajectories`` action sequences from ``state``.

    Action sequences draw distinct not-yet-evaluated configurations (uniformly,
    without replacement within a trajectory); the horizon is clamped to the
    number of remaining configurations. Each trajectory is simulated by
    ``n_particles`` independent response samples.
    """
    cfg.validate()
    if len(state) == 0:
        raise ValueError("planning requires at least one real observation")
    if rng is None:
        rng = stream(cfg.seed, "planner")

    evaluated = state.indices()
    remaining = np.setdiff1d(np.arange(grid.n_configs, dtype=np.int64), evaluated)
    if remaining.size == 0:
        raise ValueError("no unevaluated configurations remain")
    horizon = min(cfg.horizon, remaining.size)
    k, p = cfg.n_trajectories, cfg.n_particles

    keys = rng.random((k, remaining.size))
    actions = remaining[np.argsort(keys, axis=1)[:, :horizon]]  # (K, H')

    rollout = _make_rollout(ens, state, grid, k * p)
    best = np.full(k * p, state.best_loss())
    losses_out = np.empty((k, p, horizon))
    rewards_out = np.empty((k, horizon))
    for h in range(horizon):
        step_actions = np.repeat(actions[:, h], p)
        mu, var = rollout.predict_rows(step_actions)
        ell = sample_responses(mu, var, rng)
        reward = np.maximum(0.0, best - ell)
        best = np.minimum(best, ell)
        losses_out[:, :, h] = ell.reshape(k, p)
        rewards_out[:, h] = reward.reshape(k, p).mean(axis=1)
        if h + 1 < horizon:
            rollout.observe_rows(step_actions, ell)

    return [
        SimulatedTrajectory(actions[i], losses_out[i], rewards_out[i]) for i in range(k)
    ]


def mpc_select(trajs: list[SimulatedTrajectory]) -> int:
    """First action of the trajectory with the best end-of-rollout outcome.

    Per-step improvements telescope, so the trajectory with the highest
    cumulative reward is the one whose final simulated best-so-far loss is
    lowest. Ties go to the lowest trajectory index.
    """
    if not trajs:
        raise ValueError("no trajectories to select from")
    scores = np.array([t.rewards.sum() for t in trajs])
    return int(trajs[int(np.argmax(scores))].actions[0])


def lookahead_select(trajs: list[SimulatedTrajectory]) -> int:
    """Best single action observed anywhere across the simulated trajectories.

    Each (trajectory, step) pair scores its action by the particle-averaged
    simulated loss; an action sampled several times keeps its best score.
    Ties go to the lowest action index.
    """
    if not trajs:
        raise ValueError("no trajectories to select from")
    all_actions = np.concatenate([t.actions for t in trajs])
    all_scores = np.concatenate([t.losses.mean(axis=0) for t in trajs])
    n = int(all_actions.max()) + 1
    table = np.full(n, np.inf)
    np.minimum.at(table, all_actions, all_scores)
    return int(np.argmin(table))
