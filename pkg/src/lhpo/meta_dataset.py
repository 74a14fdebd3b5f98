"""Tabular black-box benchmark data: grids, per-task response tables, splits.

A meta-dataset is a fixed grid of encoded configurations plus one response
table per task (the loss of every configuration, pre-evaluated offline).
Responses are stored min-max normalized per task so the task optimum is 0 and
the worst configuration is 1, which makes regret a direct read-off.

The on-disk format is canonical JSON: keys sorted, floats as their shortest
round-trip decimal, no whitespace. Writing the same value twice produces
identical bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from lhpo.errors import DegenerateTaskError, FormatError, InvariantViolation
from lhpo.seeding import stream

FAMILIES = ("quadratic-bowl", "mixture-of-gaussians", "rastrigin-like")


@dataclass(eq=False)
class HyperparameterGrid:
    """The discrete search space: ``n_configs`` encoded vectors of length ``dim``."""

    configs: np.ndarray  # (N, d) float64, features in [0, 1]

    def __post_init__(self):
        self.configs = np.ascontiguousarray(self.configs, dtype=np.float64)

    @property
    def n_configs(self) -> int:
        return self.configs.shape[0]

    @property
    def dim(self) -> int:
        return self.configs.shape[1]

    def validate(self) -> None:
        if self.configs.ndim != 2:
            raise InvariantViolation("grid configs must be a 2-d matrix")
        if self.n_configs < 2:
            raise InvariantViolation("grid needs at least 2 configurations")
        if not np.isfinite(self.configs).all():
            raise InvariantViolation("grid contains non-finite features")
        if self.configs.min() < 0.0 or self.configs.max() > 1.0:
            raise InvariantViolation("grid features must lie in [0, 1]")
        if np.unique(self.configs, axis=0).shape[0] != self.n_configs:
            raise InvariantViolation("grid rows must be distinct")

    def __eq__(self, other) -> bool:
        return isinstance(other, HyperparameterGrid) and np.array_equal(
            self.configs, other.configs
        )


def validate_one_hot_blocks(grid: HyperparameterGrid, blocks: list[tuple[int, int]]) -> None:
    """Check that each described ``(start, size)`` column block is one-hot.

    The file format carries no block metadata, so this check is opt-in for
    grids whose encoding is known to the caller.
    """
    for start, size in blocks:
        block = grid.configs[:, start : start + size]
        if not np.isin(block, (0.0, 1.0)).all():
            raise InvariantViolation(f"block at column {start} has non-binary entries")
        if not (block.sum(axis=1) == 1.0).all():
            raise InvariantViolation(f"block at column {start} rows do not sum to 1")


@dataclass(eq=False)
class TaskResponseTable:
    """One task: a pre-evaluated loss for every grid configuration."""

    task_id: str
    responses: np.ndarray  # (N,) float64
    loss_min: float
    loss_max: float

    def __post_init__(self):
        self.responses = np.ascontiguousarray(self.responses, dtype=np.float64)

    @classmethod
    def from_responses(cls, task_id: str, responses: np.ndarray) -> "TaskResponseTable":
        responses = np.asarray(responses, dtype=np.float64)
        return cls(task_id, responses, float(responses.min()), float(responses.max()))

    def validate(self, n_configs: int) -> None:
        if self.responses.ndim != 1 or self.responses.shape[0] != n_configs:
            raise InvariantViolation(
                f"task {self.task_id!r}: {self.responses.shape[0]} responses for a "
                f"grid of {n_configs} configurations"
            )
        if not np.isfinite(self.responses).all():
            raise InvariantViolation(f"task {self.task_id!r}: non-finite responses")
        if self.loss_min != float(self.responses.min()) or self.loss_max != float(
            self.responses.max()
        ):
            raise InvariantViolation(f"task {self.task_id!r}: stale loss_min/loss_max")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TaskResponseTable)
            and self.task_id == other.task_id
            and np.array_equal(self.responses, other.responses)
            and self.loss_min == other.loss_min
            and self.loss_max == other.loss_max
        )


@dataclass(eq=False)
class MetaDataset:
    """A grid, its tasks, and a disjoint train/valid/test split by task id."""

    grid: HyperparameterGrid
    tasks: list[TaskResponseTable]
    split: dict[str, list[str]]  # keys: train, valid, test
    _by_id: dict[str, TaskResponseTable] = field(init=False, repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self._by_id = {t.task_id: t for t in self.tasks}

    def task(self, task_id: str) -> TaskResponseTable:
        try:
            return self._by_id[task_id]
        except KeyError:
            raise KeyError(f"unknown task id {task_id!r}") from None

    def split_ids(self, name: str) -> list[str]:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return list(self.split[name])

    def validate(self) -> None:
        self.grid.validate()
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise InvariantViolation("duplicate task ids")
        for t in self.tasks:
            t.validate(self.grid.n_configs)
        parts = [self.split.get(k, []) for k in ("train", "valid", "test")]
        flat = [i for part in parts for i in part]
        if len(set(flat)) != len(flat):
            raise InvariantViolation("split lists overlap")
        if set(flat) != set(ids):
            raise InvariantViolation("split does not cover exactly the task ids")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MetaDataset)
            and self.grid == other.grid
            and self.tasks == other.tasks
            and {k: list(v) for k, v in self.split.items()}
            == {k: list(v) for k, v in other.split.items()}
        )


def normalize_task(task: TaskResponseTable) -> TaskResponseTable:
    """Min-max normalize a task's responses onto [0, 1].

    Constant surfaces are rejected: their normalized regret is undefined.
    """
    span = task.loss_max - task.loss_min
    if span <= 0.0:
        raise DegenerateTaskError(
            f"task {task.task_id!r} has a constant response surface (min == max)"
        )
    scaled = (task.responses - task.loss_min) / span
    return TaskResponseTable(task.task_id, scaled, 0.0, 1.0)


def _raw_responses(family: str, configs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    d = configs.shape[1]
    if family == "quadratic-bowl":
        center = rng.uniform(0.1, 0.9, size=d)
        weights = rng.uniform(0.5, 2.0, size=d)
        return ((configs - center) ** 2 * weights).sum(axis=1)
    if family == "mixture-of-gaussians":
        k = int(rng.integers(2, 5))
        centers = rng.uniform(0.0, 1.0, size=(k, d))
        widths = rng.uniform(0.1, 0.35, size=k)
        amps = rng.uniform(0.5, 1.5, size=k)
        sq = ((configs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        return -(amps * np.exp(-sq / (2.0 * widths**2))).sum(axis=1)
    if family == "rastrigin-like":
        center = rng.uniform(0.2, 0.8, size=d)
        amp = rng.uniform(0.02, 0.08)
        freq = 2.0 * math.pi * rng.uniform(2.0, 4.0)
        delta = configs - center
        return (delta**2).sum(axis=1) + amp * (1.0 - np.cos(freq * delta)).sum(axis=1)
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def generate_synthetic_meta_dataset(
    n_tasks: int,
    grid_size: int,
    dim: int,
    family: str = "quadratic-bowl",
    noise_sd: float = 0.0,
    seed: int = 0,
) -> MetaDataset:
    """Build a synthetic meta-dataset of related tasks over a shared grid.

    Each task draws its own surface parameters (bowl center, mixture means, ...)
    from the family's distribution, so tasks are related but not identical.
    Responses get i.i.d. Gaussian observation noise of ``noise_sd`` and are
    then min-max normalized per task. The split is 70/10/20 by task order
    after a seeded shuffle.
    """
    if n_tasks < 3:
        raise ValueError("n_tasks must be at least 3")
    if grid_size < 8:
        raise ValueError("grid_size must be at least 8")
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if noise_sd < 0.0:
        raise ValueError("noise_sd must be non-negative")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")

    grid_rng = stream(seed, "grid")
    configs = grid_rng.uniform(0.0, 1.0, size=(grid_size, dim))
    grid = HyperparameterGrid(configs)

    width = max(3, len(str(n_tasks - 1)))
    tasks = []
    for i in range(n_tasks):
        task_rng = stream(seed, "task", i)
        raw = _raw_responses(family, grid.configs, task_rng)
        if noise_sd > 0.0:
            raw = raw + noise_sd * task_rng.standard_normal(grid_size)
        task_id = f"task-{i:0{width}d}"
        tasks.append(normalize_task(TaskResponseTable.from_responses(task_id, raw)))

    order = stream(seed, "split").permutation(n_tasks)
    ids = [tasks[j].task_id for j in order]
    n_valid = max(1, round(0.1 * n_tasks))
    n_test = max(1, round(0.2 * n_tasks))
    n_train = n_tasks - n_valid - n_test
    split = {
        "train": ids[:n_train],
        "valid": ids[n_train : n_train + n_valid],
        "test": ids[n_train + n_valid :],
    }

    md = MetaDataset(grid, tasks, split)
    md.validate()
    return md


def _to_payload(md: MetaDataset) -> dict:
    return {
        "grid": {"dim": md.grid.dim, "configs": md.grid.configs.tolist()},
        "tasks": [{"id": t.task_id, "responses": t.responses.tolist()} for t in md.tasks],
        "split": {k: list(md.split[k]) for k in ("train", "valid", "test")},
    }


def write_meta_dataset(md: MetaDataset, path: str | os.PathLike) -> None:
    """Write canonical JSON; identical inputs produce identical bytes."""
    md.validate()
    text = json.dumps(_to_payload(md), sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
        fh.write("\n")


def read_meta_dataset(path: str | os.PathLike) -> MetaDataset:
    """Parse and validate a meta-dataset file.

    Raises ``FileNotFoundError`` for a missing file, ``FormatError`` for bad
    syntax or schema shape, and ``InvariantViolation`` for well-formed files
    whose contents break the data model.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc

    try:
        grid_spec = payload["grid"]
        dim = grid_spec["dim"]
        configs = np.asarray(grid_spec["configs"], dtype=np.float64)
        task_specs = payload["tasks"]
        split = {k: list(payload["split"][k]) for k in ("train", "valid", "test")}
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing or malformed field ({exc})") from exc

    if configs.ndim != 2:
        raise FormatError(f"{path}: grid configs must be a matrix")
    if configs.shape[1] != dim:
        raise InvariantViolation(
            f"{path}: declared dim {dim} but configs have {configs.shape[1]} features"
        )

    tasks = []
    for spec in task_specs:
        try:
            task_id, responses = spec["id"], spec["responses"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: malformed task entry ({exc})") from exc
        arr = np.asarray(responses, dtype=np.float64)
        tasks.append(TaskResponseTable.from_responses(str(task_id), arr))

    md = MetaDataset(HyperparameterGrid(configs), tasks, split)
    md.validate()
    return md
