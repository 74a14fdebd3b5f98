"""Ensemble of probabilistic surrogates and mixture-moment aggregation.

Members share one architecture but are initialized from distinct seeds; their
per-candidate Gaussians are combined into a single Gaussian whose mean is the
member average and whose variance is the mixture variance (average member
variance plus the spread of member means). Disagreement between members is
what surfaces epistemic uncertainty; each member's own variance carries the
observation noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lhpo.meta_dataset import HyperparameterGrid
from lhpo.surrogate import (
    VAR_FLOOR,
    Architecture,
    MdpState,
    Prediction,
    SurrogateParams,
    predict as member_predict,
    predict_many as member_predict_many,
)


@dataclass(eq=False)
class Ensemble:
    members: list[SurrogateParams]
    member_seeds: list[int]

    @property
    def arch(self) -> Architecture:
        return self.members[0].arch

    def copy(self) -> "Ensemble":
        return Ensemble([m.copy() for m in self.members], list(self.member_seeds))

    def predict(self, state: MdpState, action: int, grid: HyperparameterGrid) -> Prediction:
        return aggregate([member_predict(m, state, action, grid) for m in self.members])

    def predict_many(
        self, state: MdpState, actions: np.ndarray, grid: HyperparameterGrid
    ) -> tuple[np.ndarray, np.ndarray]:
        """Aggregated (mean, variance) arrays over many candidate actions."""
        mus = []
        var = []
        for m in self.members:
            mu_m, var_m = member_predict_many(m, state, actions, grid)
            mus.append(mu_m)
            var.append(var_m)
        return aggregate_arrays(np.stack(mus), np.stack(var))


def init_ensemble(n_members: int, arch: Architecture, base_seed: int) -> Ensemble:
    """Members initialized from the derived seeds ``base_seed + i``."""
    if n_members < 1:
        raise ValueError("n_members must be at least 1")
    seeds = [int(base_seed) + i for i in range(n_members)]
    return Ensemble([SurrogateParams.init(arch, s) for s in seeds], seeds)


def aggregate_arrays(mus: np.ndarray, variances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mixture moments along axis 0.

    Computed in deviation form (mean variance plus spread of means), which is
    algebraically the same as the raw-second-moment formula but stays exact
    when all members coincide.
    """
    mu0 = mus[0]
    mu_star = mu0 + (mus - mu0).mean(axis=0)
    var0 = variances[0]
    mean_var = var0 + (variances - var0).mean(axis=0)
    var_star = mean_var + ((mus - mu_star) ** 2).mean(axis=0)
    return mu_star, np.maximum(var_star, VAR_FLOOR)


def aggregate(preds) -> Prediction:
    """Combine member Gaussians into the mixture-moment Gaussian."""
    if not preds:
        raise ValueError("cannot aggregate an empty prediction list")
    if any(p.variance <= 0.0 for p in preds):
        raise ValueError("member variances must be positive")
    mus = np.array([p.mean for p in preds])
    variances = np.array([p.variance for p in preds])
    mu_star, var_star = aggregate_arrays(mus[:, None], variances[:, None])
    return Prediction(float(mu_star[0]), float(var_star[0]))


def sample_responses(
    mus: np.ndarray, variances: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw one response per aggregated Gaussian, clamped to the [0, 1] loss range."""
    z = rng.standard_normal(np.shape(mus))
    return np.clip(mus + np.sqrt(variances) * z, 0.0, 1.0)


def sample_response(agg: Prediction, rng: np.random.Generator) -> float:
    """One simulated loss for a candidate: a clamped draw from its Gaussian."""
    if agg.variance <= 0.0:
        raise ValueError("variance must be positive")
    return float(sample_responses(np.float64(agg.mean), np.float64(agg.variance), rng))
