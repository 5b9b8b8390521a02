"""TOML run-configuration loading.

A config file mirrors TrainConfig with one table per component; every key is
optional and falls back to the dataclass default. schedule.total_steps = 0
means "derive from epochs x steps-per-epoch", resolved once the dataset size
is known. Example:

    [task]
    kind = "classification"
    classes = 2

    [fusion]
    d_v = 32
    d_t = 32
    d_h = 32
    n_layers = 2
    heads = 4
    ffn_dim = 128
    out_dim = 2
    head_hidden = 128

    [flags]
    bidirectional = true

    [weights]
    lambda_con = 0.1

    [schedule]
    peak_lr = 1e-3
    warmup_steps = 50
    total_steps = 0

    [train]
    batch_size = 32
    epochs = 4
    seed = 7
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import UsageError
from .losses import LossWeights, TaskKind
from .model import AblationFlags, FusionConfig
from .optim import ScheduleConfig
from .training import TrainConfig


def _build(cls, table: dict, what: str):
    try:
        return cls(**table)
    except TypeError as e:
        raise UsageError(f"bad [{what}] section: {e}") from e
    except ValueError as e:
        raise UsageError(f"bad [{what}] section: {e}") from e


def load_train_config(path, n_records: int | None = None,
                      seed_override: int | None = None) -> TrainConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)

    task_tbl = dict(raw.get("task", {}))
    kind = task_tbl.pop("kind", "classification")
    classes = task_tbl.pop("classes", 2)
    if task_tbl:
        raise UsageError(f"unknown keys in [task]: {sorted(task_tbl)}")
    task = TaskKind(kind, classes if kind == "classification" else 0)

    fusion_tbl = dict(raw.get("fusion", {}))
    if kind == "classification":
        fusion_tbl.setdefault("out_dim", classes)
    else:
        fusion_tbl.setdefault("out_dim", 1)
    fusion = _build(FusionConfig, fusion_tbl, "fusion")
    flags = _build(AblationFlags, dict(raw.get("flags", {})), "flags")
    weights = _build(LossWeights, dict(raw.get("weights", {})), "weights")

    train_tbl = dict(raw.get("train", {}))
    batch_size = train_tbl.pop("batch_size", 32)
    epochs = train_tbl.pop("epochs", 5)
    seed = train_tbl.pop("seed", 0)
    eval_every = train_tbl.pop("eval_every", 0)
    grad_clip = train_tbl.pop("grad_clip", 1.0)
    weight_decay = train_tbl.pop("weight_decay", 0.01)
    if train_tbl:
        raise UsageError(f"unknown keys in [train]: {sorted(train_tbl)}")
    if seed_override is not None:
        seed = seed_override

    sched_tbl = dict(raw.get("schedule", {}))
    sched_tbl.setdefault("peak_lr", 1e-3)
    sched_tbl.setdefault("warmup_steps", 100)
    total = sched_tbl.get("total_steps", 0)
    if total <= 0:
        if n_records is None:
            raise UsageError(
                "schedule.total_steps = 0 needs the dataset size to resolve")
        total = max((n_records // batch_size) * epochs, 1)
        sched_tbl["total_steps"] = total
    if sched_tbl["warmup_steps"] >= total:
        sched_tbl["warmup_steps"] = max(1, total // 10)
    schedule = _build(ScheduleConfig, sched_tbl, "schedule")

    try:
        return TrainConfig(task=task, fusion=fusion, schedule=schedule,
                           flags=flags, weights=weights,
                           batch_size=batch_size, epochs=epochs, seed=seed,
                           eval_every=eval_every, grad_clip=grad_clip,
                           weight_decay=weight_decay)
    except ValueError as e:
        raise UsageError(str(e)) from e


def load_fusion_config(path) -> tuple[FusionConfig, AblationFlags]:
    """Just the [fusion] and [flags] tables (for bench without a checkpoint)."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    fusion = _build(FusionConfig, dict(raw.get("fusion", {})), "fusion")
    flags = _build(AblationFlags, dict(raw.get("flags", {})), "flags")
    return fusion, flags
