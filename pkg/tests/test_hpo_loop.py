import logging

import numpy as np
import pytest

from conftest import make_state
from lhpo.ensemble import Ensemble, init_ensemble
from lhpo.hpo_loop import (
    EpisodeConfig,
    baseline_select,
    fine_tune,
    read_trace_csv,
    run_episode,
    write_trace_csv,
)
from lhpo.meta_train import quadruples_to_batch
from lhpo.planner import PlannerConfig
from lhpo.seeding import stream
from lhpo.surrogate import VAR_FLOOR, Architecture, MdpState, prepared_mean_var


class OracleEnsemble:
    """Duck-typed ensemble whose aggregated mean equals the true table."""

    def __init__(self, responses, dim):
        self.responses = np.asarray(responses, dtype=np.float64)
        self.arch = Architecture(input_dim=dim)
        self.members = [self]
        self.member_seeds = [0]

    def copy(self):
        return self

    def predict_many(self, state, actions, grid):
        actions = np.asarray(actions)
        return self.responses[actions].copy(), np.full(actions.size, VAR_FLOOR)

    def start_rollout(self, state, grid, n_copies):
        return self

    def predict_rows(self, action_idx):
        return self.responses[action_idx], np.zeros(action_idx.size)

    def observe_rows(self, action_idx, losses):
        pass


def _episode_cfg(policy, seed=0, trials=6, **kw):
    defaults = dict(
        n_trials=trials,
        n_init=3,
        planner=PlannerConfig(horizon=2, n_trajectories=15, n_particles=2),
        fine_tune_steps=0,
        policy=policy,
        seed=seed,
    )
    defaults.update(kw)
    return EpisodeConfig(**defaults)


def test_episode_shape_and_no_replacement(small_ensemble, small_md):
    task = small_md.task(small_md.split["test"][0])
    trace = run_episode(small_ensemble, task, small_md.grid, _episode_cfg("lookahead_mpc", trials=8))
    assert len(trace.rows) == 11
    idx = [r.config_index for r in trace.rows]
    assert len(set(idx)) == len(idx)
    best = [r.best_so_far for r in trace.rows]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert [r.trial for r in trace.rows] == list(range(11))


def test_random_policy_is_running_min_of_uniform_draws(small_ensemble, small_md):
    task = small_md.task(small_md.split["test"][1])
    a = run_episode(small_ensemble, task, small_md.grid, _episode_cfg("random", seed=5))
    b = run_episode(small_ensemble, task, small_md.grid, _episode_cfg("random", seed=5))
    assert [r.config_index for r in a.rows] == [r.config_index for r in b.rows]
    losses = [r.loss for r in a.rows]
    assert [r.best_so_far for r in a.rows] == [min(losses[: i + 1]) for i in range(len(losses))]


def test_oracle_greedy_first_trial_hits_global_argmin(small_md):
    task = small_md.task(small_md.split["test"][0])
    oracle = OracleEnsemble(task.responses, small_md.grid.dim)
    cfg = _episode_cfg("greedy", seed=3, trials=2)
    trace = run_episode(oracle, task, small_md.grid, cfg)
    init_idx = {r.config_index for r in trace.rows[:3]}
    remaining = [i for i in range(small_md.grid.n_configs) if i not in init_idx]
    expected = min(remaining, key=lambda i: (task.responses[i], i))
    assert trace.rows[3].config_index == expected


def test_episode_budget_and_mismatch_errors(small_ensemble, small_md):
    task = small_md.task(small_md.split["test"][0])
    with pytest.raises(ValueError, match="exceeds"):
        run_episode(small_ensemble, task, small_md.grid, _episode_cfg("random", trials=50))
    wrong_arch = init_ensemble(1, Architecture(input_dim=5), 0)
    with pytest.raises(ValueError, match="dim"):
        run_episode(wrong_arch, task, small_md.grid, _episode_cfg("random"))
    with pytest.raises(ValueError, match="policy"):
        _episode_cfg("bogus").validate(small_md.grid.n_configs)


def test_episode_isolation_no_shared_mutation(small_ensemble, small_md):
    task = small_md.task(small_md.split["test"][0])
    cfg = _episode_cfg("lookahead_mpc", seed=8, fine_tune_steps=3, fine_tune_lr=1e-3)
    before = [m.theta.copy() for m in small_ensemble.members]
    first = run_episode(small_ensemble, task, small_md.grid, cfg)
    for m, b in zip(small_ensemble.members, before):
        assert np.array_equal(m.theta, b)
    other = run_episode(
        small_ensemble, small_md.task(small_md.split["test"][1]), small_md.grid, cfg
    )
    second = run_episode(small_ensemble, task, small_md.grid, cfg)
    assert [r.config_index for r in first.rows] == [r.config_index for r in second.rows]
    assert [r.loss for r in first.rows] == [r.loss for r in second.rows]


def test_fine_tune_zero_steps_is_noop(small_ensemble, small_md):
    state = make_state(np.random.default_rng(0), small_md.grid.n_configs, 5)
    out = fine_tune(small_ensemble, state, small_md.grid, 0, 1e-3, stream(0, "f"))
    for a, b in zip(out.members, small_ensemble.members):
        assert np.array_equal(a.theta, b.theta)


def test_fine_tune_improves_history_nll(small_md):
    rng = np.random.default_rng(4)
    task = small_md.task(small_md.split["train"][0])
    idx = rng.choice(small_md.grid.n_configs, 10, replace=False)
    state = MdpState(task.task_id, tuple((int(i), float(task.responses[i])) for i in idx))

    def loo_nll(member):
        quads = []
        from lhpo.meta_train import Quadruple

        for q in range(10):
            hist = tuple(p for j, p in enumerate(state.history) if j != q)
            quads.append(
                Quadruple(task.task_id, MdpState(task.task_id, hist), state.history[q][0], state.history[q][1])
            )
        batch = quadruples_to_batch(quads, small_md.grid)
        mu, var, tgt = prepared_mean_var(member, batch, small_md.grid)
        return float(np.mean(0.5 * np.log(var) + (tgt - mu) ** 2 / (2 * var)))

    for seed in range(5):
        ens = init_ensemble(1, Architecture(input_dim=2, set_dim=8, width=8), 50 + seed)
        before = loo_nll(ens.members[0])
        tuned = fine_tune(ens, state, small_md.grid, 50, 1e-3, stream(seed, "ft"))
        after = loo_nll(tuned.members[0])
        assert after < before


def test_fine_tune_single_point_skips_with_warning(small_ensemble, small_md, caplog):
    state = MdpState("t", ((4, 0.3),))
    with caplog.at_level(logging.WARNING, logger="lhpo.hpo_loop"):
        out = fine_tune(small_ensemble, state, small_md.grid, 5, 1e-3, stream(0, "f"))
    assert "skipped" in caplog.text
    for a, b in zip(out.members, small_ensemble.members):
        assert np.array_equal(a.theta, b.theta)


def test_fine_tune_empty_history_rejected(small_ensemble, small_md):
    with pytest.raises(ValueError, match="non-empty"):
        fine_tune(small_ensemble, MdpState("t"), small_md.grid, 5, 1e-3, stream(0, "f"))


def test_baseline_select_forced_single_choice(small_ensemble, small_md):
    rng = np.random.default_rng(1)
    n = small_md.grid.n_configs
    state = MdpState("t", tuple((i, float(rng.random())) for i in range(n - 1)))
    assert baseline_select("random", small_ensemble, state, small_md.grid, stream(0, "b")) == n - 1
    assert baseline_select("greedy", small_ensemble, state, small_md.grid, stream(0, "b")) == n - 1


def test_baseline_greedy_oracle_matches_brute_force(small_md):
    task = small_md.task(small_md.split["test"][0])
    oracle = OracleEnsemble(task.responses, small_md.grid.dim)
    rng = np.random.default_rng(2)
    for _ in range(20):
        t = int(rng.integers(1, 30))
        idx = rng.choice(small_md.grid.n_configs, t, replace=False)
        state = MdpState(task.task_id, tuple((int(i), float(task.responses[i])) for i in idx))
        remaining = np.setdiff1d(np.arange(small_md.grid.n_configs), idx)
        got = baseline_select("greedy", oracle, state, small_md.grid, stream(0, "b"))
        assert got == int(remaining[np.argmin(task.responses[remaining])])


def test_baseline_nothing_left(small_ensemble, small_md):
    n = small_md.grid.n_configs
    state = MdpState("t", tuple((i, 0.5) for i in range(n)))
    with pytest.raises(ValueError, match="remain"):
        baseline_select("random", small_ensemble, state, small_md.grid, stream(0, "b"))


def test_trace_csv_roundtrip(tmp_path, small_ensemble, small_md):
    traces = [
        run_episode(
            small_ensemble,
            small_md.task(tid),
            small_md.grid,
            _episode_cfg("random", seed=s, label="random"),
        )
        for tid in small_md.split["test"]
        for s in (0, 1)
    ]
    path = tmp_path / "traces.csv"
    write_trace_csv(traces, path)
    loaded = read_trace_csv(path, n_init=3)
    assert len(loaded) == len(traces)
    by_key = {(t.task_id, t.policy, t.seed): t for t in loaded}
    for t in traces:
        back = by_key[(t.task_id, t.policy, t.seed)]
        assert [r.config_index for r in back.rows] == [r.config_index for r in t.rows]
        assert [r.loss for r in back.rows] == [r.loss for r in t.rows]
        assert [r.regret for r in back.rows] == [r.regret for r in t.rows]
