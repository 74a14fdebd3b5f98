import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lhpo.errors import DegenerateTaskError, FormatError, InvariantViolation
from lhpo.meta_dataset import (
    FAMILIES,
    HyperparameterGrid,
    MetaDataset,
    TaskResponseTable,
    generate_synthetic_meta_dataset,
    normalize_task,
    read_meta_dataset,
    validate_one_hot_blocks,
    write_meta_dataset,
)


def test_generator_mirrors_reference_shape():
    md = generate_synthetic_meta_dataset(120, 324, 10, "quadratic-bowl", 0.01, seed=1)
    assert md.grid.n_configs == 324
    assert md.grid.dim == 10
    assert len(md.tasks) == 120
    assert len(md.split["train"]) == 84
    assert len(md.split["valid"]) == 12
    assert len(md.split["test"]) == 24


def test_generated_tasks_attain_normalization_endpoints():
    md = generate_synthetic_meta_dataset(3, 8, 1, "quadratic-bowl", 0.0, seed=0)
    for task in md.tasks:
        assert task.responses.min() == 0.0
        assert task.responses.max() == 1.0
        assert task.loss_min == 0.0 and task.loss_max == 1.0


def test_generator_deterministic_byte_identical(tmp_path):
    a = generate_synthetic_meta_dataset(6, 16, 2, "mixture-of-gaussians", 0.05, seed=7)
    b = generate_synthetic_meta_dataset(6, 16, 2, "mixture-of-gaussians", 0.05, seed=7)
    assert a == b
    write_meta_dataset(a, tmp_path / "a.json")
    write_meta_dataset(b, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


@pytest.mark.parametrize("family", FAMILIES)
def test_all_families_generate(family):
    md = generate_synthetic_meta_dataset(4, 10, 2, family, 0.0, seed=3)
    md.validate()


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_tasks=2, grid_size=8, dim=1),
        dict(n_tasks=3, grid_size=7, dim=1),
        dict(n_tasks=3, grid_size=8, dim=0),
        dict(n_tasks=3, grid_size=8, dim=1, noise_sd=-0.1),
        dict(n_tasks=3, grid_size=8, dim=1, family="bogus"),
    ],
)
def test_generator_argument_errors(kwargs):
    kwargs = {"family": "quadratic-bowl", "noise_sd": 0.0, "seed": 0, **kwargs}
    with pytest.raises(ValueError):
        generate_synthetic_meta_dataset(**kwargs)


def test_normalize_examples():
    t = TaskResponseTable.from_responses("a", np.array([0.1, 0.5, 0.9]))
    np.testing.assert_array_equal(normalize_task(t).responses, [0.0, 0.5, 1.0])
    two = TaskResponseTable.from_responses("b", np.array([0.3, 0.7]))
    np.testing.assert_array_equal(normalize_task(two).responses, [0.0, 1.0])
    flat = TaskResponseTable.from_responses("c", np.array([2.0, 2.0, 2.0]))
    with pytest.raises(DegenerateTaskError):
        normalize_task(flat)


@given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=2, max_size=40))
def test_normalize_idempotent_bitwise(values):
    arr = np.array(values)
    if arr.max() == arr.min():
        return
    once = normalize_task(TaskResponseTable.from_responses("x", arr))
    twice = normalize_task(once)
    assert np.array_equal(once.responses, twice.responses)
    assert twice.loss_min == 0.0 and twice.loss_max == 1.0


@settings(deadline=None, max_examples=50)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_roundtrip_property(tmp_path_factory, seed):
    md = generate_synthetic_meta_dataset(5, 12, 2, "quadratic-bowl", 0.02, seed=seed)
    path = tmp_path_factory.mktemp("rt") / "md.json"
    write_meta_dataset(md, path)
    assert read_meta_dataset(path) == md


@given(st.integers(min_value=3, max_value=200), st.integers(min_value=0, max_value=10**6))
@settings(deadline=None, max_examples=60)
def test_split_partition_property(n_tasks, seed):
    md = generate_synthetic_meta_dataset(n_tasks, 8, 1, "quadratic-bowl", 0.0, seed=seed)
    parts = [md.split[k] for k in ("train", "valid", "test")]
    flat = [i for p in parts for i in p]
    assert len(flat) == n_tasks
    assert len(set(flat)) == n_tasks
    assert all(len(md.split[k]) >= 1 for k in ("valid", "test"))


def test_read_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_meta_dataset(tmp_path / "nope.json")


def test_read_malformed_syntax(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(FormatError):
        read_meta_dataset(path)


def _payload(md):
    write = {"grid": {"dim": md.grid.dim, "configs": md.grid.configs.tolist()},
             "tasks": [{"id": t.task_id, "responses": t.responses.tolist()} for t in md.tasks],
             "split": {k: list(v) for k, v in md.split.items()}}
    return write


def test_read_wrong_response_length_names_task(tmp_path, small_md):
    payload = _payload(small_md)
    payload["tasks"][3]["responses"] = payload["tasks"][3]["responses"][:-1]
    path = tmp_path / "short.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(InvariantViolation, match=small_md.tasks[3].task_id):
        read_meta_dataset(path)


def test_read_overlapping_split(tmp_path, small_md):
    payload = _payload(small_md)
    payload["split"]["test"].append(payload["split"]["train"][0])
    path = tmp_path / "overlap.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(InvariantViolation, match="overlap"):
        read_meta_dataset(path)


def test_write_unwritable_path(small_md, tmp_path):
    with pytest.raises(OSError):
        write_meta_dataset(small_md, tmp_path / "missing-dir" / "md.json")


def test_grid_invariants():
    with pytest.raises(InvariantViolation, match="distinct"):
        HyperparameterGrid(np.array([[0.5], [0.5]])).validate()
    with pytest.raises(InvariantViolation, match="at least 2"):
        HyperparameterGrid(np.array([[0.5]])).validate()
    with pytest.raises(InvariantViolation, match=r"\[0, 1\]"):
        HyperparameterGrid(np.array([[0.5], [1.5]])).validate()
    with pytest.raises(InvariantViolation, match="finite"):
        HyperparameterGrid(np.array([[0.5], [np.nan]])).validate()


def test_one_hot_block_validation():
    grid = HyperparameterGrid(np.array([[1.0, 0.0, 0.3], [0.0, 1.0, 0.7]]))
    validate_one_hot_blocks(grid, [(0, 2)])
    bad = HyperparameterGrid(np.array([[1.0, 1.0, 0.3], [0.0, 1.0, 0.7]]))
    with pytest.raises(InvariantViolation, match="sum to 1"):
        validate_one_hot_blocks(bad, [(0, 2)])


def test_meta_dataset_unknown_task(small_md):
    with pytest.raises(KeyError):
        small_md.task("missing-task")


def test_stale_min_max_rejected():
    t = TaskResponseTable("x", np.array([0.0, 0.5, 1.0]), loss_min=0.1, loss_max=1.0)
    with pytest.raises(InvariantViolation, match="stale"):
        t.validate(3)
