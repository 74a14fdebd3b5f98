"""Probabilistic deep-set surrogate over (history, candidate) pairs.

The model scores a candidate configuration given the set of evaluations made
so far: an encoder network embeds each observed (configuration, loss) pair,
the embeddings are mean-pooled into a fixed-size vector, and a head network
maps [candidate features, pooled vector] to the mean and variance of a
Gaussian over the candidate's loss.

Parameters live in one flat float64 vector (``SurrogateParams.theta``); layer
matrices are views into it, so optimizer updates, checkpointing, and
finite-difference checks all operate on a single array. Pooling always sums
in sorted-configuration-index order, which makes predictions bitwise
invariant to the order in which the history was collected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from lhpo import backend
from lhpo.meta_dataset import HyperparameterGrid

VAR_FLOOR = 1e-6


def softplus(z):
    return np.logaddexp(0.0, z)


@dataclass(frozen=True)
class Architecture:
    """Network sizes: two ReLU hidden layers in both the encoder and the head."""

    input_dim: int  # grid feature dimension d
    set_dim: int = 64  # pooled embedding size
    width: int = 64  # hidden width

    def encoder_shapes(self) -> list[tuple[int, int]]:
        return [(self.input_dim + 1, self.width), (self.width, self.width), (self.width, self.set_dim)]

    def head_shapes(self) -> list[tuple[int, int]]:
        return [
            (self.input_dim + self.set_dim, self.width),
            (self.width, self.width),
            (self.width, 2),
        ]

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.encoder_shapes() + self.head_shapes())


class SurrogateParams:
    """Immutable-by-convention weight vector plus layer views into it."""

    __slots__ = ("arch", "theta", "_g_layers", "_f_layers")

    def __init__(self, arch: Architecture, theta: np.ndarray):
        if theta.shape != (arch.n_params,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({arch.n_params},)")
        self.arch = arch
        self.theta = np.ascontiguousarray(theta, dtype=np.float64)
        self._g_layers = None
        self._f_layers = None

    @classmethod
    def init(cls, arch: Architecture, seed: int) -> "SurrogateParams":
        """He-uniform fan-in initialization; biases start at zero."""
        rng = np.random.default_rng(seed)
        theta = np.zeros(arch.n_params)
        offset = 0
        for fan_in, fan_out in arch.encoder_shapes() + arch.head_shapes():
            limit = np.sqrt(6.0 / fan_in)
            theta[offset : offset + fan_in * fan_out] = rng.uniform(
                -limit, limit, size=fan_in * fan_out
            )
            offset += fan_in * fan_out + fan_out  # skip the zero bias block
        return cls(arch, theta)

    def _build_views(self):
        g_layers, f_layers = [], []
        offset = 0
        for shapes, out in ((self.arch.encoder_shapes(), g_layers), (self.arch.head_shapes(), f_layers)):
            for fan_in, fan_out in shapes:
                w = self.theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
                offset += fan_in * fan_out
                b = self.theta[offset : offset + fan_out]
                offset += fan_out
                out.append((w, b))
        self._g_layers, self._f_layers = g_layers, f_layers

    @property
    def g_layers(self):
        if self._g_layers is None:
            self._build_views()
        return self._g_layers

    @property
    def f_layers(self):
        if self._f_layers is None:
            self._build_views()
        return self._f_layers

    def copy(self) -> "SurrogateParams":
        return SurrogateParams(self.arch, self.theta.copy())


@dataclass(frozen=True)
class Prediction:
    """Gaussian belief over a candidate's normalized loss."""

    mean: float
    variance: float


@dataclass(frozen=True)
class MdpState:
    """The set of evaluations made so far on one task.

    ``history`` keeps insertion order for bookkeeping, but every consumer
    treats it as a set: predictions may not depend on the ordering.
    """

    task_ref: str | None
    history: tuple[tuple[int, float], ...] = ()

    def validate(self, n_configs: int) -> None:
        idx = [i for i, _ in self.history]
        if len(set(idx)) != len(idx):
            raise ValueError("history contains duplicate configuration indices")
        if len(idx) > n_configs:
            raise ValueError("history longer than the grid")
        if any(i < 0 or i >= n_configs for i in idx):
            raise IndexError("history references an out-of-range configuration index")
        if not all(np.isfinite(l) for _, l in self.history):
            raise ValueError("history contains non-finite losses")

    def with_observation(self, config_index: int, loss: float) -> "MdpState":
        return MdpState(self.task_ref, self.history + ((int(config_index), float(loss)),))

    def indices(self) -> np.ndarray:
        return np.array([i for i, _ in self.history], dtype=np.int64)

    def losses(self) -> np.ndarray:
        return np.array([l for _, l in self.history], dtype=np.float64)

    def best_loss(self) -> float:
        if not self.history:
            raise ValueError("empty history has no best loss")
        return min(l for _, l in self.history)

    def __len__(self) -> int:
        return len(self.history)


def _sorted_history_rows(
    indices: np.ndarray, losses: np.ndarray, grid: HyperparameterGrid
) -> np.ndarray:
    if indices.size and (indices.min() < 0 or indices.max() >= grid.n_configs):
        raise IndexError("history references an out-of-range configuration index")
    order = np.argsort(indices, kind="stable")
    return np.ascontiguousarray(
        np.concatenate([grid.configs[indices[order]], losses[order, None]], axis=1)
    )


def history_encoding_sum(
    params: SurrogateParams,
    indices: np.ndarray,
    losses: np.ndarray,
    grid: HyperparameterGrid,
) -> np.ndarray:
    """Un-normalized pooled embedding: sum of encoder outputs in sorted order."""
    if indices.size == 0:
        return np.zeros(params.arch.set_dim)
    rows = _sorted_history_rows(indices, losses, grid)
    return backend.mlp_forward(params.g_layers, rows).sum(axis=0)


def encode_history(
    params: SurrogateParams, state: MdpState, grid: HyperparameterGrid
) -> np.ndarray:
    """Mean-pooled set embedding of the history; zero vector when empty."""
    t = len(state)
    if t == 0:
        return np.zeros(params.arch.set_dim)
    return history_encoding_sum(params, state.indices(), state.losses(), grid) / t


def embed_observations(
    params: SurrogateParams, configs: np.ndarray, losses: np.ndarray
) -> np.ndarray:
    """Encoder output for a batch of (configuration, loss) rows."""
    rows = np.ascontiguousarray(np.concatenate([configs, losses[:, None]], axis=1))
    return backend.mlp_forward(params.g_layers, rows)


def head_mean_var(
    params: SurrogateParams, configs: np.ndarray, encodings: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Head network over [candidate features, pooled embedding] rows."""
    x = np.ascontiguousarray(np.concatenate([configs, encodings], axis=1))
    y = backend.mlp_forward(params.f_layers, x)
    return y[:, 0], softplus(y[:, 1]) + VAR_FLOOR


def predict(
    params: SurrogateParams, state: MdpState, action: int, grid: HyperparameterGrid
) -> Prediction:
    """Gaussian belief over the loss of ``action`` given the observed set."""
    action = int(action)
    if action < 0 or action >= grid.n_configs:
        raise IndexError(f"action index {action} outside grid of {grid.n_configs}")
    enc = encode_history(params, state, grid)
    mu, var = head_mean_var(params, grid.configs[action][None, :], enc[None, :])
    return Prediction(float(mu[0]), float(var[0]))


def predict_many(
    params: SurrogateParams, state: MdpState, actions: np.ndarray, grid: HyperparameterGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``predict`` over many candidate actions for one state."""
    actions = np.asarray(actions, dtype=np.int64)
    if actions.size and (actions.min() < 0 or actions.max() >= grid.n_configs):
        raise IndexError("action index outside grid")
    enc = encode_history(params, state, grid)
    enc_rows = np.broadcast_to(enc, (actions.size, enc.size))
    return head_mean_var(params, grid.configs[actions], enc_rows)


def gaussian_nll(pred: Prediction, target_loss: float) -> float:
    """Negative log-likelihood of ``target_loss`` under ``pred``, constant dropped."""
    if not (np.isfinite(pred.mean) and np.isfinite(pred.variance) and np.isfinite(target_loss)):
        raise ValueError("non-finite inputs to gaussian_nll")
    if pred.variance <= 0.0:
        raise ValueError("variance must be positive")
    r = target_loss - pred.mean
    return float(0.5 * np.log(pred.variance) + r * r / (2.0 * pred.variance))


class PreparedBatch:
    """Training batch grouped by history length for rectangular batching."""

    __slots__ = ("groups", "size")

    def __init__(self, groups, size):
        self.groups = groups  # list of (hist_idx (B,t), hist_losses (B,t), actions (B,), targets (B,))
        self.size = size


def prepare_batch(batch, grid: HyperparameterGrid) -> PreparedBatch:
    """Sort each history by configuration index and group equal-length states."""
    by_t: dict[int, list] = {}
    for state, action, target in batch:
        action = int(action)
        if action < 0 or action >= grid.n_configs:
            raise IndexError(f"action index {action} outside grid of {grid.n_configs}")
        by_t.setdefault(len(state), []).append((state, action, target))
    groups = []
    for t, items in sorted(by_t.items()):
        b = len(items)
        actions = np.array([a for _, a, _ in items], dtype=np.int64)
        targets = np.array([y for _, _, y in items], dtype=np.float64)
        if t == 0:
            groups.append((None, None, actions, targets))
            continue
        idx = np.empty((b, t), dtype=np.int64)
        losses = np.empty((b, t), dtype=np.float64)
        for row, (state, _, _) in enumerate(items):
            idx[row] = state.indices()
            losses[row] = state.losses()
        if idx.size and (idx.min() < 0 or idx.max() >= grid.n_configs):
            raise IndexError("history references an out-of-range configuration index")
        order = np.argsort(idx, axis=1, kind="stable")
        idx = np.take_along_axis(idx, order, axis=1)
        losses = np.take_along_axis(losses, order, axis=1)
        groups.append((idx, losses, actions, targets))
    return PreparedBatch(groups, len(batch))


def _flatten_grads(arch: Architecture, g_grads, f_grads) -> np.ndarray:
    parts = []
    for dw, db in list(g_grads) + list(f_grads):
        parts.append(dw.ravel())
        parts.append(db)
    return np.concatenate(parts)


def _layer_slots(arch: Architecture) -> list[tuple[int, int, int]]:
    # (w_start, b_start, end) per layer in theta order: encoder layers then head layers
    slots = []
    offset = 0
    for fan_in, fan_out in arch.encoder_shapes() + arch.head_shapes():
        w_size = fan_in * fan_out
        slots.append((offset, offset + w_size, offset + w_size + fan_out))
        offset += w_size + fan_out
    return slots


def _accumulate_grads(grad: np.ndarray, arch: Architecture, layer_grads, base: int) -> None:
    slots = _layer_slots(arch)
    for k, (dw, db) in enumerate(layer_grads):
        w_start, b_start, end = slots[base + k]
        grad[w_start:b_start] += dw.ravel()
        grad[b_start:end] += db


def nll_loss_and_grad(
    params: SurrogateParams, prepared: PreparedBatch, grid: HyperparameterGrid
) -> tuple[float, np.ndarray]:
    """Mean NLL over the batch and its gradient w.r.t. ``params.theta``."""
    arch = params.arch
    d = arch.input_dim
    total_loss = 0.0
    grad = np.zeros(arch.n_params)
    inv_b = 1.0 / prepared.size
    for idx, hist_losses, actions, targets in prepared.groups:
        b = actions.size
        if idx is None:
            enc = np.zeros((b, arch.set_dim))
        else:
            t = idx.shape[1]
            rows = np.ascontiguousarray(
                np.concatenate(
                    [grid.configs[idx.ravel()], hist_losses.reshape(-1, 1)], axis=1
                )
            )
            g_out, gh1, gh2 = backend.mlp_forward_cache(params.g_layers, rows)
            enc = g_out.reshape(b, t, arch.set_dim).sum(axis=1) / t
        xf = np.ascontiguousarray(np.concatenate([grid.configs[actions], enc], axis=1))
        y, fh1, fh2 = backend.mlp_forward_cache(params.f_layers, xf)
        mu = y[:, 0]
        z = y[:, 1]
        var = softplus(z) + VAR_FLOOR
        r = mu - targets
        total_loss += float(np.sum(0.5 * np.log(var) + r * r / (2.0 * var)))

        dy = np.empty((b, 2))
        dy[:, 0] = r / var * inv_b
        dy[:, 1] = (0.5 / var - r * r / (2.0 * var * var)) * expit(z) * inv_b
        f_grads, dxf = backend.mlp_backward(params.f_layers, xf, fh1, fh2, dy)
        _accumulate_grads(grad, arch, f_grads, base=3)
        if idx is not None:
            t = idx.shape[1]
            d_enc = dxf[:, d:] / t
            d_rows = np.repeat(d_enc, t, axis=0)
            g_grads, _ = backend.mlp_backward(params.g_layers, rows, gh1, gh2, d_rows)
            _accumulate_grads(grad, arch, g_grads, base=0)
    return total_loss * inv_b, grad


def prepared_mean_var(
    params: SurrogateParams, prepared: PreparedBatch, grid: HyperparameterGrid
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward-only (mean, variance, target) arrays over a prepared batch."""
    arch = params.arch
    mus, variances, targets = [], [], []
    for idx, hist_losses, actions, group_targets in prepared.groups:
        b = actions.size
        if idx is None:
            enc = np.zeros((b, arch.set_dim))
        else:
            t = idx.shape[1]
            rows = np.ascontiguousarray(
                np.concatenate(
                    [grid.configs[idx.ravel()], hist_losses.reshape(-1, 1)], axis=1
                )
            )
            enc = backend.mlp_forward(params.g_layers, rows).reshape(b, t, arch.set_dim).sum(axis=1) / t
        mu, var = head_mean_var(params, grid.configs[actions], enc)
        mus.append(mu)
        variances.append(var)
        targets.append(group_targets)
    return np.concatenate(mus), np.concatenate(variances), np.concatenate(targets)


def nll_gradient(params: SurrogateParams, batch, grid: HyperparameterGrid) -> np.ndarray:
    """Gradient of the mean NLL over ``batch`` w.r.t. every weight."""
    if not batch:
        raise ValueError("batch must be non-empty")
    _, grad = nll_loss_and_grad(params, prepare_batch(batch, grid), grid)
    return grad


def leave_one_out_loss_and_grad(
    params: SurrogateParams,
    indices: np.ndarray,
    losses: np.ndarray,
    grid: HyperparameterGrid,
    rows_used: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean NLL (and gradient) of predicting each held-out point from the rest.

    The pooled sum over the full point set is computed once and each state's
    encoding is recovered as ``(sum - own embedding) / (m - 1)``, which avoids
    re-encoding ``m`` nearly identical histories. ``rows_used`` optionally
    restricts which held-out points contribute to the loss.
    """
    m = indices.size
    if m < 2:
        raise ValueError("leave-one-out needs at least two observations")
    arch = params.arch
    order = np.argsort(indices, kind="stable")
    idx = indices[order]
    ls = losses[order]
    rows = np.ascontiguousarray(np.concatenate([grid.configs[idx], ls[:, None]], axis=1))
    g_out, gh1, gh2 = backend.mlp_forward_cache(params.g_layers, rows)
    total = g_out.sum(axis=0)
    if rows_used is None:
        used = np.arange(m)
    else:
        used = np.asarray(rows_used, dtype=np.int64)
    enc = (total[None, :] - g_out[used]) / (m - 1)
    xf = np.ascontiguousarray(np.concatenate([grid.configs[idx[used]], enc], axis=1))
    y, fh1, fh2 = backend.mlp_forward_cache(params.f_layers, xf)
    mu = y[:, 0]
    z = y[:, 1]
    var = softplus(z) + VAR_FLOOR
    r = mu - ls[used]
    b = used.size
    loss = float(np.mean(0.5 * np.log(var) + r * r / (2.0 * var)))

    dy = np.empty((b, 2))
    dy[:, 0] = r / var / b
    dy[:, 1] = (0.5 / var - r * r / (2.0 * var * var)) * expit(z) / b
    f_grads, dxf = backend.mlp_backward(params.f_layers, xf, fh1, fh2, dy)
    d_enc = dxf[:, arch.input_dim :] / (m - 1)
    d_rows = np.broadcast_to(d_enc.sum(axis=0), (m, arch.set_dim)).copy()
    d_rows[used] -= d_enc
    g_grads, _ = backend.mlp_backward(params.g_layers, rows, gh1, gh2, d_rows)
    return loss, _flatten_grads(arch, g_grads, f_grads)


@dataclass
class AdamState:
    """First/second moment accumulators; one per independently trained model."""

    step: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(0, np.zeros(n_params), np.zeros(n_params))


def adam_step(
    optstate: AdamState,
    params: SurrogateParams,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[SurrogateParams, AdamState]:
    """One Adam update; returns fresh params and optimizer state."""
    if grad.shape != params.theta.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match params {params.theta.shape}")
    t = optstate.step + 1
    m = beta1 * optstate.m + (1.0 - beta1) * grad
    v = beta2 * optstate.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta = params.theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return SurrogateParams(params.arch, theta), AdamState(t, m, v)


def sgd_step(params: SurrogateParams, grad: np.ndarray, lr: float) -> SurrogateParams:
    """Plain gradient-descent update."""
    if grad.shape != params.theta.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match params {params.theta.shape}")
    return SurrogateParams(params.arch, params.theta - lr * grad)
