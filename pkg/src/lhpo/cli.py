"""Command-line entry point.

Subcommands: ``gen-data`` (synthetic meta-dataset), ``meta-train`` (train and
checkpoint the ensemble), ``run`` (episode grids over test tasks), ``ablate``
(policy x horizon x trajectory-count x fine-tune grid), and ``report``
(aggregate traces into tables and curves).

Configuration precedence is flags over config-file values over defaults;
unknown flags and file keys are rejected with a suggestion. Every command
echoes its fully resolved configuration into ``<outdir>/manifest.json``
(keyed by command), which is sufficient to replay the run. All randomness
derives from the single global seed through named streams; ``LHPO_SEED``
serves as a fallback when ``--seed`` is not given.
"""

from __future__ import annotations

import argparse
import difflib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from lhpo import __version__
from lhpo.checkpoint import load_ensemble, save_ensemble
from lhpo.ensemble import init_ensemble
from lhpo.errors import LhpoError
from lhpo.evaluation import aggregate_report, write_report
from lhpo.hpo_loop import EpisodeConfig, read_trace_csv, run_episode, write_trace_csv
from lhpo.meta_dataset import (
    FAMILIES,
    generate_synthetic_meta_dataset,
    read_meta_dataset,
    write_meta_dataset,
)
from lhpo.meta_train import MetaTrainConfig, reptile_meta_train, write_training_log
from lhpo.planner import PlannerConfig
from lhpo.seeding import child_seed
from lhpo.surrogate import Architecture


def _default_seed() -> int:
    return int(os.environ.get("LHPO_SEED", "0"))


def _int_list(text: str) -> list[int]:
    return [int(part) for part in str(text).split(",") if part != ""]


def _str_list(text: str) -> list[str]:
    return [part for part in str(text).split(",") if part != ""]


# key -> (default factory or value, parser, help)
_COMMON = {
    "outdir": ("out", str, "output directory (created if missing)"),
    "seed": (_default_seed, int, "global seed; every stream derives from it"),
}

_SCHEMAS: dict[str, dict] = {
    "gen-data": {
        **_COMMON,
        "tasks": (120, int, "number of tasks"),
        "grid": (324, int, "grid size (configurations)"),
        "dim": (10, int, "feature dimension"),
        "family": ("quadratic-bowl", str, f"response family, one of {FAMILIES}"),
        "noise_sd": (0.01, float, "observation noise standard deviation"),
    },
    "meta-train": {
        **_COMMON,
        "data": (None, str, "meta-dataset JSON path (required)"),
        "members": (5, int, "ensemble size"),
        "set_dim": (64, int, "pooled set-embedding size"),
        "width": (64, int, "hidden width of encoder and head"),
        "outer_iters": (10000, int, "maximum outer iterations"),
        "task_batch": (8, int, "tasks per outer iteration"),
        "inner_steps": (5, int, "optimizer steps per task"),
        "minibatch": (64, int, "quadruples per task batch"),
        "inner_lr": (1e-3, float, "inner Adam learning rate"),
        "outer_lr": (1.0, float, "outer interpolation step"),
        "t_min": (1, int, "smallest training history length"),
        "t_max": (0, int, "largest training history length (0 = min(50, N-1))"),
        "eval_every": (50, int, "outer iterations between validation evals"),
        "patience": (20, int, "validation evals without improvement before stop"),
        "eval_quadruples": (256, int, "quadruples per validation eval"),
    },
    "run": {
        **_COMMON,
        "data": (None, str, "meta-dataset JSON path (required)"),
        "checkpoint": (None, str, "ensemble checkpoint (required)"),
        "policies": ("lookahead_mpc,random", _str_list, "comma-separated policies"),
        "horizon": (3, int, "planning horizon"),
        "trajectories": (1000, int, "sampled trajectories per trial"),
        "particles": (4, int, "particles per trajectory"),
        "trials": (50, int, "planned evaluations per episode"),
        "n_init": (3, int, "seeded initial evaluations"),
        "fine_tune_steps": (10, int, "per-trial fine-tuning steps (0 disables)"),
        "fine_tune_lr": (1e-3, float, "fine-tuning learning rate"),
        "n_seeds": (3, int, "episode repetitions per task"),
        "jobs": (1, int, "parallel episode workers"),
    },
    "ablate": {
        **_COMMON,
        "data": (None, str, "meta-dataset JSON path (required)"),
        "checkpoint": (None, str, "ensemble checkpoint (required)"),
        "policies": ("lookahead_mpc,mpc,greedy,random", _str_list, "policies in the grid"),
        "horizons": ("1,3,5", _int_list, "planning horizons in the grid"),
        "trajectories": ("100,1000", _int_list, "trajectory counts in the grid"),
        "fine_tune": ("both", str, "fine-tuning arm: on, off, or both"),
        "particles": (4, int, "particles per trajectory"),
        "trials": (50, int, "planned evaluations per episode"),
        "n_init": (3, int, "seeded initial evaluations"),
        "fine_tune_steps": (10, int, "fine-tuning steps when the arm is on"),
        "fine_tune_lr": (1e-3, float, "fine-tuning learning rate"),
        "n_seeds": (3, int, "episode repetitions per task"),
        "jobs": (1, int, "parallel episode workers"),
    },
    "report": {
        **_COMMON,
        "traces": (None, str, "trace CSV (defaults to <outdir>/traces/traces.csv)"),
        "n_init": (0, int, "initial evaluations per episode (0 = read the manifest)"),
        "checkpoints": ("", _int_list, "report trials (default: 15,33,50 clipped to T)"),
    },
}

_USAGE = "usage: lhpo {gen-data,meta-train,run,ablate,report} [--key value ...] [--config file]"


class CliError(LhpoError):
    pass


def _suggest(key: str, known) -> str:
    close = difflib.get_close_matches(key, list(known), n=1)
    return f"; did you mean {close[0]!r}?" if close else ""


def parse_config(argv: list[str]) -> tuple[str, dict]:
    """Resolve (command, config) from argv, a config file, and defaults."""
    if not argv or argv[0] in ("-h", "--help"):
        print(_USAGE)
        raise SystemExit(0)
    command = argv[0]
    if command not in _SCHEMAS:
        raise CliError(f"unknown command {command!r}{_suggest(command, _SCHEMAS)}")
    schema = _SCHEMAS[command]

    parser = argparse.ArgumentParser(prog=f"lhpo {command}", add_help=True)
    parser.add_argument("--config", default=None, help="JSON config file (flags override it)")
    for key, (_, parse, help_text) in schema.items():
        parser.add_argument(
            f"--{key.replace('_', '-')}", dest=key, default=None, type=parse, help=help_text
        )
    namespace, extras = parser.parse_known_args(argv[1:])
    if extras:
        flags = [f"--{k.replace('_', '-')}" for k in schema] + ["--config"]
        bad = next((e for e in extras if e.startswith("-")), extras[0])
        bad_name = bad.split("=")[0]
        raise CliError(f"unknown flag {bad_name!r}{_suggest(bad_name, flags)}")

    cfg = {}
    for key, (default, parse, _) in schema.items():
        value = default() if callable(default) else default
        cfg[key] = parse(value) if isinstance(value, str) and parse is not str else value
    if namespace.config is not None:
        try:
            with open(namespace.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise CliError(f"config file not found: {namespace.config}")
        except json.JSONDecodeError as exc:
            raise CliError(f"config file is not valid JSON: {exc}")
        if not isinstance(file_cfg, dict):
            raise CliError("config file must hold a JSON object")
        for key, value in file_cfg.items():
            if key not in schema:
                raise CliError(f"unknown config key {key!r}{_suggest(key, schema)}")
            parse = schema[key][1]
            if isinstance(value, list):
                element = int if parse is _int_list else str
                if parse not in (_int_list, _str_list):
                    raise CliError(f"config key {key!r} does not take a list")
                cfg[key] = [element(v) for v in value]
            else:
                cfg[key] = parse(value)
    for key in schema:
        value = getattr(namespace, key)
        if value is not None:
            cfg[key] = value
    return command, cfg


def _write_manifest(command: str, cfg: dict) -> None:
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "manifest.json"
    manifest = {}
    if path.exists():
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    manifest[command] = dict(sorted(cfg.items()))
    manifest["version"] = __version__
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(cfg: dict) -> int:
    md = generate_synthetic_meta_dataset(
        n_tasks=cfg["tasks"],
        grid_size=cfg["grid"],
        dim=cfg["dim"],
        family=cfg["family"],
        noise_sd=cfg["noise_sd"],
        seed=child_seed(cfg["seed"], "gen"),
    )
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "metadataset.json"
    write_meta_dataset(md, path)
    print(f"wrote {path} ({cfg['tasks']} tasks, grid {cfg['grid']}x{cfg['dim']})")
    return 0


def cmd_meta_train(cfg: dict) -> int:
    if not cfg["data"]:
        raise CliError("data path required (--data)")
    md = read_meta_dataset(cfg["data"])
    arch = Architecture(input_dim=md.grid.dim, set_dim=cfg["set_dim"], width=cfg["width"])
    ens = init_ensemble(cfg["members"], arch, child_seed(cfg["seed"], "ensemble-init"))
    train_cfg = MetaTrainConfig(
        task_batch_size=cfg["task_batch"],
        minibatches_per_task=cfg["minibatch"],
        inner_steps=cfg["inner_steps"],
        inner_lr=cfg["inner_lr"],
        outer_lr=cfg["outer_lr"],
        t_min=cfg["t_min"],
        t_max=cfg["t_max"] if cfg["t_max"] > 0 else None,
        max_outer_iters=cfg["outer_iters"],
        eval_every=cfg["eval_every"],
        patience=cfg["patience"],
        eval_quadruples=cfg["eval_quadruples"],
        seed=child_seed(cfg["seed"], "meta-train"),
    )
    trained, logs = reptile_meta_train(ens, md, train_cfg)

    outdir = Path(cfg["outdir"])
    (outdir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (outdir / "logs").mkdir(parents=True, exist_ok=True)
    ckpt = outdir / "checkpoints" / "ensemble.lhpo"
    save_ensemble(trained, ckpt)
    for i, rows in enumerate(logs):
        write_training_log(rows, outdir / "logs" / f"meta_train_member{i}.csv")
    best = [min(r[2] for r in rows) for rows in logs]
    print(f"wrote {ckpt} (best member valid NLL: {', '.join(f'{b:.4f}' for b in best)})")
    return 0


def _method_spec(policy: str, horizon: int, trajectories: int, fine_tuned: bool, cfg: dict) -> dict:
    if policy == "random":
        return {"label": "random", "policy": policy, "horizon": 1, "trajectories": 1, "fine_tune_steps": 0}
    suffix = "ft" if fine_tuned else "noft"
    steps = cfg["fine_tune_steps"] if fine_tuned else 0
    if policy == "greedy":
        return {"label": f"greedy-{suffix}", "policy": policy, "horizon": 1, "trajectories": 1, "fine_tune_steps": steps}
    return {
        "label": f"{policy}-h{horizon}-k{trajectories}-{suffix}",
        "policy": policy,
        "horizon": horizon,
        "trajectories": trajectories,
        "fine_tune_steps": steps,
    }


_EPISODE_CACHE: dict = {}


def _episode_job(job: dict) -> "object":
    key = (job["data"], job["checkpoint"])
    if key not in _EPISODE_CACHE:
        _EPISODE_CACHE.clear()
        _EPISODE_CACHE[key] = (read_meta_dataset(job["data"]), load_ensemble(job["checkpoint"]))
    md, ens = _EPISODE_CACHE[key]
    episode_cfg = EpisodeConfig(
        n_trials=job["trials"],
        n_init=job["n_init"],
        planner=PlannerConfig(
            horizon=job["horizon"],
            n_trajectories=job["trajectories"],
            n_particles=job["particles"],
        ),
        fine_tune_steps=job["fine_tune_steps"],
        fine_tune_lr=job["fine_tune_lr"],
        policy=job["policy"],
        label=job["label"],
        seed=job["seed"],
    )
    trace = run_episode(ens, md.task(job["task_id"]), md.grid, episode_cfg)
    # traces carry the repetition label; the derived RNG seed is recoverable
    # from the manifest's global seed
    trace.seed = job["rep"]
    return trace


def _execute_episode_grid(cfg: dict, methods: list[dict]) -> int:
    if not cfg["data"]:
        raise CliError("data path required (--data)")
    if not cfg["checkpoint"]:
        raise CliError("checkpoint required (--checkpoint)")
    md = read_meta_dataset(cfg["data"])
    test_ids = md.split_ids("test")
    if not test_ids:
        raise CliError("meta-dataset has an empty test split")

    jobs = []
    for method in sorted(methods, key=lambda m: m["label"]):
        for task_id in sorted(test_ids):
            for rep in range(cfg["n_seeds"]):
                jobs.append(
                    {
                        **method,
                        "data": cfg["data"],
                        "checkpoint": cfg["checkpoint"],
                        "task_id": task_id,
                        "rep": rep,
                        "seed": child_seed(cfg["seed"], "episode", task_id, rep),
                        "trials": cfg["trials"],
                        "n_init": cfg["n_init"],
                        "particles": cfg["particles"],
                        "fine_tune_lr": cfg["fine_tune_lr"],
                    }
                )

    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            traces = list(pool.map(_episode_job, jobs, chunksize=1))
    else:
        traces = [_episode_job(job) for job in jobs]

    outdir = Path(cfg["outdir"])
    traces_dir = outdir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    for job, trace in zip(jobs, traces):
        write_trace_csv([trace], traces_dir / f"{job['label']}__{job['task_id']}__seed{job['rep']}.csv")
    write_trace_csv(traces, traces_dir / "traces.csv")
    print(f"wrote {len(traces)} episode traces under {traces_dir}")
    return 0


def cmd_run(cfg: dict) -> int:
    methods = []
    for policy in cfg["policies"]:
        methods.append(
            _method_spec(
                policy, cfg["horizon"], cfg["trajectories"], cfg["fine_tune_steps"] > 0, cfg
            )
        )
    if len({m["label"] for m in methods}) != len(methods):
        raise CliError("duplicate policies requested")
    return _execute_episode_grid(cfg, methods)


def cmd_ablate(cfg: dict) -> int:
    if cfg["fine_tune"] not in ("on", "off", "both"):
        raise CliError("fine_tune must be on, off, or both")
    arms = {"on": [True], "off": [False], "both": [True, False]}[cfg["fine_tune"]]
    methods: list[dict] = []
    for policy in cfg["policies"]:
        if policy == "random":
            methods.append(_method_spec(policy, 1, 1, False, cfg))
        elif policy == "greedy":
            methods.extend(_method_spec(policy, 1, 1, ft, cfg) for ft in arms)
        else:
            methods.extend(
                _method_spec(policy, h, k, ft, cfg)
                for h in cfg["horizons"]
                for k in cfg["trajectories"]
                for ft in arms
            )
    return _execute_episode_grid(cfg, methods)


def cmd_report(cfg: dict) -> int:
    outdir = Path(cfg["outdir"])
    traces_path = Path(cfg["traces"]) if cfg["traces"] else outdir / "traces" / "traces.csv"
    if not traces_path.exists():
        raise CliError(f"trace file not found: {traces_path}")

    n_init = cfg["n_init"]
    if n_init <= 0:
        manifest_path = outdir / "manifest.json"
        if not manifest_path.exists():
            raise CliError("n_init not given and no manifest.json to read it from")
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        source = manifest.get("run") or manifest.get("ablate")
        if not source:
            raise CliError("manifest has no run/ablate section; pass --n-init")
        n_init = int(source["n_init"])

    traces = read_trace_csv(traces_path, n_init)
    n_planned = len(traces[0].rows) - n_init if traces else 0
    checkpoints = cfg["checkpoints"] or [c for c in (15, 33, 50) if c <= n_planned] or [n_planned]
    curves, rank_table = aggregate_report(traces, checkpoints=checkpoints)
    written = write_report(outdir / "report", curves, rank_table, checkpoints)
    _write_manifest("report", {**cfg, "n_init": n_init, "checkpoints": checkpoints})
    print(f"wrote {len(written)} report files under {outdir / 'report'}")
    return 0


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "meta-train": cmd_meta_train,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def dispatch(command: str, cfg: dict) -> int:
    """Execute a resolved command; returns a process exit status.

    The resolved configuration is echoed to ``<outdir>/manifest.json`` before
    the command runs; ``report`` rewrites its entry with derived values.
    """
    _write_manifest(command, cfg)
    return _DISPATCH[command](cfg)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        command, cfg = parse_config(argv)
        return dispatch(command, cfg)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (LhpoError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
