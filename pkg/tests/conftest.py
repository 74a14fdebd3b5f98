import numpy as np
import pytest

from lhpo.ensemble import init_ensemble
from lhpo.meta_dataset import HyperparameterGrid, MetaDataset, TaskResponseTable, generate_synthetic_meta_dataset
from lhpo.surrogate import Architecture, MdpState, SurrogateParams


@pytest.fixture(scope="session")
def small_md() -> MetaDataset:
    return generate_synthetic_meta_dataset(12, 40, 2, "quadratic-bowl", 0.01, seed=5)


@pytest.fixture(scope="session")
def tiny_arch() -> Architecture:
    return Architecture(input_dim=2, set_dim=4, width=8)


@pytest.fixture()
def tiny_params(tiny_arch) -> SurrogateParams:
    return SurrogateParams.init(tiny_arch, 3)


@pytest.fixture(scope="session")
def small_grid() -> HyperparameterGrid:
    rng = np.random.default_rng(11)
    return HyperparameterGrid(rng.uniform(0.0, 1.0, size=(20, 2)))


def make_state(rng: np.random.Generator, n_configs: int, t: int, task: str = "t") -> MdpState:
    idx = rng.choice(n_configs, size=t, replace=False)
    return MdpState(task, tuple((int(i), float(rng.random())) for i in idx))


@pytest.fixture(scope="session")
def small_ensemble(small_md):
    arch = Architecture(input_dim=small_md.grid.dim, set_dim=16, width=16)
    return init_ensemble(3, arch, 42)


def linear_task(n: int) -> TaskResponseTable:
    """Responses spread evenly over [0, 1]: convenient exact min/max gaps."""
    return TaskResponseTable.from_responses("lin", np.linspace(0.0, 1.0, n))
