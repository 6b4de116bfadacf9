"""Command-line harness: dataset synthesis, protocol training, evaluation,
and metric reporting.

Subcommands: ``synth``, ``train``, ``eval``, ``report``. Every training
option lives in a flat key=value config file and/or CLI flags; precedence
is CLI > file > defaults, and the fully resolved config is written into
the run directory (config.txt) together with library versions, so a run
can be reproduced and re-evaluated bit-for-bit.

Randomness is split into fixed streams derived from the single seed:
synthesis uses seed, model init seed+1, plan building (shuffle/resplit)
seed+2, training seed+3.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .continual import Reservoir, TrainConfig, run_stream, save_reservoir
from .data import (
    ContainerError,
    DatasetContainer,
    REGISTRY,
    read_container,
    synth_dataset,
    write_container,
)
from .model import (
    CheckpointError,
    ModelConfig,
    init_params,
    load_checkpoint,
    make_predictor,
    save_checkpoint,
    unflatten,
)
from .numerics import NonFiniteError, make_rng
from .optim import MetaSchedule
from .protocols import (
    MetricsRecord,
    build_dynamic_splits,
    build_fixed_splits,
    build_gzsl_plan,
    evaluate_gzsl,
    evaluate_plan,
)

OUT_ROOT_ENV = "CZSL_OUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_PROTOCOL_ALIAS = {"gzsl": "gzsl", "fixed": "fixed_continual", "dynamic": "dynamic_continual"}

ABLATIONS = {
    "no-meta": ("meta", False),
    "no-gating": ("self_gating", False),
    "no-norm": ("normalization", "none"),
    "plain-norm": ("normalization", "plain_cn"),
    "no-replay": ("replay", False),
}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    """Flat, fully defaulted run description (config.txt schema)."""

    dataset: str = ""  # path to a .czsf container; empty with synth=true
    dataset_name: str = ""  # optional registry name override
    synth: bool = False
    synth_seen: int = 20
    synth_unseen: int = 5
    synth_feat_dim: int = 64
    synth_attr_dim: int = 16
    synth_noise: float = 0.1
    synth_samples_per_class: int = 50
    protocol: str = "gzsl"  # gzsl | fixed | dynamic
    tasks: int = 0  # 0 = registry default (required >0 off-registry continual runs)
    seed: int = 0
    hidden_width: int = 0  # 0 = match feature dim
    logit_scale: float = 10.0
    normalization: str = "scn"
    self_gating: bool = True
    meta: bool = True
    replay: bool = True
    policy: str = "reservoir"
    budget: int = -1  # -1 = protocol default
    n_way: int = 32
    k_shot: int = 4
    inner_steps: int = 5
    inner_lr: float = 0.0001
    meta_lr0: float = 0.001
    epochs: int = 200
    inner_opt: str = "adam"
    outer_opt: str = "adam"
    shuffle_classes: bool = False
    resplit: float = 0.0  # 0 = use container splits (fixed protocol only)
    out_dir: str = ""


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(name: str, raw: str):
    kind = _FIELDS[name]
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config_file(path) -> dict:
    """key=value lines; # starts a comment; unknown keys are hard errors."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = _parse_value(key, raw)
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from e
    return out


def config_text(cfg: RunConfig) -> str:
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in load_config_file(args.config).items():
            setattr(cfg, key, value)
    for name in _FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    for name in getattr(args, "ablate", None) or []:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choices: {sorted(ABLATIONS)}")
        key, value = ABLATIONS[name]
        setattr(cfg, key, value)
    if cfg.protocol not in _PROTOCOL_ALIAS:
        raise ConfigError(f"protocol must be one of {sorted(_PROTOCOL_ALIAS)}")
    if cfg.synth and cfg.dataset:
        raise ConfigError("give either a dataset path or synth=true, not both")
    if not cfg.synth and not cfg.dataset:
        raise ConfigError("a dataset path or synth=true is required")
    if cfg.dataset_name and cfg.dataset_name not in REGISTRY:
        raise ConfigError(f"dataset_name must be one of {sorted(REGISTRY)}")
    if cfg.resplit and _PROTOCOL_ALIAS[cfg.protocol] != "fixed_continual":
        raise ConfigError("resplit only applies to the fixed protocol")
    return cfg


def _dataset_name(cfg: RunConfig) -> str:
    if cfg.synth:
        return "synthetic"
    return cfg.dataset_name or Path(cfg.dataset).stem


def _make_container(cfg: RunConfig) -> DatasetContainer:
    if cfg.synth:
        return synth_dataset(
            cfg.synth_seen,
            cfg.synth_unseen,
            cfg.synth_feat_dim,
            cfg.synth_attr_dim,
            cfg.synth_noise,
            cfg.synth_samples_per_class,
            make_rng(cfg.seed),
        )
    return read_container(cfg.dataset)


def _make_plan(cfg: RunConfig, container: DatasetContainer):
    protocol = _PROTOCOL_ALIAS[cfg.protocol]
    plan_rng = make_rng(cfg.seed + 2)
    meta = REGISTRY.get(cfg.dataset_name) if cfg.dataset_name else None
    n_tasks = cfg.tasks or None
    budget = None if cfg.budget < 0 else cfg.budget
    if protocol == "gzsl":
        plan = build_gzsl_plan(container)
        if budget is not None:
            plan.reservoir_budget = budget
        return plan
    if protocol == "fixed_continual":
        return build_fixed_splits(
            container,
            meta=meta,
            n_tasks=n_tasks,
            rng=plan_rng,
            shuffle=cfg.shuffle_classes,
            resplit=cfg.resplit or None,
            budget=budget,
        )
    return build_dynamic_splits(
        container,
        meta=meta,
        n_tasks=n_tasks,
        rng=plan_rng,
        shuffle=cfg.shuffle_classes,
        budget=budget,
    )


def _model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        hidden_width=cfg.hidden_width or None,
        logit_scale=cfg.logit_scale,
        disable_self_gating=not cfg.self_gating,
        normalization=cfg.normalization,
        init_seed=cfg.seed + 1,
    )


def _schedule(cfg: RunConfig) -> MetaSchedule:
    return MetaSchedule(
        meta_lr0=cfg.meta_lr0,
        inner_lr=cfg.inner_lr,
        inner_steps=cfg.inner_steps,
        epochs=cfg.epochs,
        inner_opt=cfg.inner_opt,
        outer_opt=cfg.outer_opt,
    )


def _out_dir(cfg: RunConfig, dataset_name: str) -> Path:
    if cfg.out_dir:
        return Path(cfg.out_dir)
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / f"{cfg.protocol}-{dataset_name}-seed{cfg.seed}"


def train_run(cfg: RunConfig) -> tuple:
    """Train per the config; returns (out_dir, MetricsRecord)."""
    container = _make_container(cfg)
    dataset_name = _dataset_name(cfg)
    plan = _make_plan(cfg, container)
    params = init_params(
        _model_config(cfg), container.attr_dim, container.feat_dim, rng=make_rng(cfg.seed + 1)
    )
    tcfg = TrainConfig(
        n_way=cfg.n_way, k_shot=cfg.k_shot, disable_meta=not cfg.meta, replay=cfg.replay
    )
    budget = plan.reservoir_budget if cfg.replay else 0
    reservoir = Reservoir(capacity=budget, policy=cfg.policy)
    result = run_stream(
        container, plan, params, _schedule(cfg), tcfg, make_rng(cfg.seed + 3), reservoir=reservoir
    )
    record = evaluate_plan(result.predictors(), plan, container)
    record.dataset = dataset_name
    record.seed = cfg.seed

    out = _out_dir(cfg, dataset_name)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_text(cfg))
    (out / "versions.txt").write_text(
        f"czsl={__version__}\nnumpy={np.__version__}\npython={sys.version.split()[0]}\n"
    )
    for i, theta in enumerate(result.snapshots, start=1):
        save_checkpoint(unflatten(result.template, theta), out / f"task_{i:02d}.mczp")
    save_reservoir(result.reservoir, out / "reservoir.czrv")
    (out / "metrics.json").write_bytes(record.json_bytes())
    return out, record


def _print_record(record: MetricsRecord, stream=None) -> None:
    stream = stream or sys.stdout
    for row in record.per_task:
        print(
            f"task {row.task}: seen {row.seen_acc:.2f}  unseen {row.unseen_acc:.2f}"
            f"  harmonic {row.harmonic:.2f}",
            file=stream,
        )
    print(
        f"aggregate: mSA {record.msa:.2f}  mUA {record.mua:.2f}  mH {record.mh:.2f}",
        file=stream,
    )


def cmd_synth(args) -> int:
    rng = make_rng(args.seed)
    container = synth_dataset(
        args.synth_seen,
        args.synth_unseen,
        args.synth_feat_dim,
        args.synth_attr_dim,
        args.synth_noise,
        args.synth_samples_per_class,
        rng,
    )
    write_container(container, args.out)
    print(
        f"wrote {args.out}: {container.n_samples} samples, {container.n_classes} classes, "
        f"d={container.feat_dim}, z={container.attr_dim}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out, record = train_run(cfg)
    _print_record(record)
    print(f"run artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if bool(args.run) == bool(args.checkpoint):
        raise ConfigError("give exactly one of --run or --checkpoint")
    if args.run:
        run_dir = Path(args.run)
        file_args = argparse.Namespace(config=run_dir / "config.txt")
        cfg = resolve_config(file_args)
        if args.data:
            cfg.dataset = args.data
        container = _make_container(cfg)
        plan = _make_plan(cfg, container)
        ckpts = sorted(run_dir.glob("task_*.mczp"))
        if len(ckpts) != plan.n_tasks:
            raise ConfigError(
                f"run has {len(ckpts)} checkpoints but the plan needs {plan.n_tasks}"
            )
        predictors = [make_predictor(load_checkpoint(p)) for p in ckpts]
        record = evaluate_plan(predictors, plan, container)
        record.dataset = _dataset_name(cfg)
        record.seed = cfg.seed
    else:
        if _PROTOCOL_ALIAS[args.protocol] != "gzsl":
            raise ConfigError(
                "a single checkpoint only supports the gzsl protocol; "
                "continual metrics need per-task checkpoints (--run)"
            )
        if not args.data:
            raise ConfigError("--checkpoint requires --data")
        container = read_container(args.data)
        record = evaluate_gzsl(make_predictor(load_checkpoint(args.checkpoint)), container)
        record.dataset = Path(args.data).stem
    if args.out:
        Path(args.out).write_bytes(record.json_bytes())
    else:
        sys.stdout.write(record.json_bytes().decode())
    return EXIT_OK


def metrics_to_csv(record: MetricsRecord) -> str:
    lines = ["task,seen_acc,unseen_acc,harmonic"]
    for row in record.per_task:
        lines.append(f"{row.task},{row.seen_acc!r},{row.unseen_acc!r},{row.harmonic!r}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    path = Path(args.run)
    metrics_path = path / "metrics.json" if path.is_dir() else path
    try:
        import json

        record = MetricsRecord.from_dict(json.loads(metrics_path.read_text()))
    except OSError as e:
        raise ConfigError(f"cannot read metrics: {e}") from e
    except (KeyError, ValueError) as e:
        raise ConfigError(f"corrupt metrics file {metrics_path}: {e}") from e
    csv_text = metrics_to_csv(record)
    if args.out:
        Path(args.out).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    for name, kind in _FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if kind == "bool":
            group = p.add_mutually_exclusive_group()
            group.add_argument(flag, dest=name, action="store_true", default=None)
            group.add_argument(
                "--no-" + name.replace("_", "-"), dest=name, action="store_false", default=None
            )
        else:
            p.add_argument(flag, dest=name, type={"int": int, "float": float}.get(kind, str), default=None)
    p.add_argument(
        "--ablate",
        action="append",
        metavar="NAME",
        help=f"apply an ablation; may repeat ({', '.join(sorted(ABLATIONS))})",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="czsl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"czsl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic .czsf container")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--synth-seen", dest="synth_seen", type=int, default=20)
    p_synth.add_argument("--synth-unseen", dest="synth_unseen", type=int, default=5)
    p_synth.add_argument("--synth-feat-dim", dest="synth_feat_dim", type=int, default=64)
    p_synth.add_argument("--synth-attr-dim", dest="synth_attr_dim", type=int, default=16)
    p_synth.add_argument("--synth-noise", dest="synth_noise", type=float, default=0.1)
    p_synth.add_argument(
        "--synth-samples-per-class", dest="synth_samples_per_class", type=int, default=50
    )
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train per a protocol and emit metrics")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints without training")
    p_eval.add_argument("--run", help="run directory written by train")
    p_eval.add_argument("--checkpoint", help="single .mczp checkpoint (gzsl only)")
    p_eval.add_argument("--data", help=".czsf container (defaults to the run's)")
    p_eval.add_argument("--protocol", default="gzsl", choices=sorted(_PROTOCOL_ALIAS))
    p_eval.add_argument("--out", help="write metrics JSON here instead of stdout")
    p_eval.set_defaults(func=cmd_eval)

    p_report = sub.add_parser("report", help="per-task mSA/mUA/mH as CSV")
    p_report.add_argument("run", help="run directory or metrics.json path")
    p_report.add_argument("--out", help="write CSV here instead of stdout")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContainerError, CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
