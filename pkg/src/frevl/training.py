"""Training driver, evaluation metrics, linear probe, ablation runner, and
the information-bottleneck experiment.

Every source of randomness is a stateless function of (seed, epoch, step):
batch order comes from the epoch counter, dropout masks from the global step.
That makes full runs bit-reproducible and lets checkpoint resume replay the
exact same stream without storing generator state.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import NumericFault, UsageError
from .kernel import RngState, fnv1a64
from .losses import (
    LossWeights,
    TaskKind,
    contrastive_loss,
    contrastive_scalar,
    cross_entropy,
    ranking_loss,
    smooth_l1,
    total_loss,
)
from .model import (
    AblationFlags,
    FusionConfig,
    backward,
    forward_batch,
    init_params,
)
from .optim import (
    ScheduleConfig,
    adamw_step,
    clip_global_norm,
    init_adamw,
    lr_at_step,
)
from .store import SyntheticSpec, generate_synthetic, make_batches

_SHUFFLE_SALT = 0x5AFE5EED
_DROPOUT_SALT = 0xD20F0075
_INIT_SALT = 0x1217AC15

HISTORY_COLUMNS = ("step", "lr", "task_loss", "con_loss", "reg_loss",
                   "total_loss")


@dataclass(frozen=True)
class TrainConfig:
    task: TaskKind
    fusion: FusionConfig
    schedule: ScheduleConfig
    flags: AblationFlags = AblationFlags()
    weights: LossWeights = LossWeights()
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    eval_every: int = 0  # 0 disables periodic checkpoints
    checkpoint_path: str | None = None
    grad_clip: float = 1.0
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.weights.lambda_con > 0 and self.batch_size < 2:
            raise ValueError(
                "batch_size must be >= 2 when the contrastive loss is active")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ProbeConfig:
    input: str  # image_only | text_only | concat
    classes: int
    schedule: ScheduleConfig
    epochs: int = 5
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.input not in ("image_only", "text_only", "concat"):
            raise ValueError(f"unknown probe input {self.input!r}")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[int(t), int(p)] += 1
    return cm


def metrics_from_confusion(cm: np.ndarray) -> Metrics:
    total = cm.sum()
    if total == 0:
        raise ValueError("empty evaluation set")
    accuracy = float(np.trace(cm)) / float(total)
    precisions, recalls, f1s = [], [], []
    for k in range(cm.shape[0]):
        col = cm[:, k].sum()
        row = cm[k, :].sum()
        p = cm[k, k] / col if col > 0 else 0.0
        r = cm[k, k] / row if row > 0 else 0.0
        f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    return Metrics(accuracy=accuracy,
                   macro_precision=float(np.mean(precisions)),
                   macro_recall=float(np.mean(recalls)),
                   macro_f1=float(np.mean(f1s)))


def split_by_id_hash(records, val_mod: int = 10):
    """Deterministic 90/10 split: a record goes to validation when the
    FNV-1a hash of its id is 0 mod val_mod."""
    train, val = [], []
    for r in records:
        h = fnv1a64(struct.pack("<Q", r.id))
        (val if h % val_mod == 0 else train).append(r)
    return train, val


def _task_gradient(task: TaskKind, scores: np.ndarray, labels: np.ndarray):
    """Returns (task loss, gradient w.r.t. scores [B, out_dim])."""
    if task.kind == "classification":
        loss, grad = cross_entropy(scores, labels.astype(np.int64))
        return loss, grad
    if task.kind == "regression":
        loss, g = smooth_l1(scores[:, 0], labels.astype(np.float64))
        grad = np.zeros_like(scores)
        grad[:, 0] = g
        return loss, grad
    # pairwise_ranking: consecutive rows form a pair, higher label wins.
    B = scores.shape[0]
    npairs = B // 2
    s = scores[: 2 * npairs, 0].reshape(npairs, 2)
    lab = labels[: 2 * npairs].reshape(npairs, 2)
    pos_idx = np.argmax(lab, axis=1)
    s_pos = s[np.arange(npairs), pos_idx]
    s_neg = s[np.arange(npairs), 1 - pos_idx]
    loss, (gp, gn) = ranking_loss(s_pos, s_neg)
    grad = np.zeros_like(scores)
    rows = np.arange(npairs) * 2
    grad[rows + pos_idx, 0] = gp
    grad[rows + (1 - pos_idx), 0] = gn
    return loss, grad


def _batch_gradients(V, T, labels, params, cfg: TrainConfig, rng: RngState):
    """Forward/backward for one batch. With the contrastive loss active this
    evaluates the full BxB pair matrix and reuses its diagonal for the task
    term."""
    fusion, flags, weights = cfg.fusion, cfg.flags, cfg.weights
    B = V.shape[0]
    use_con = weights.lambda_con > 0 and B >= 2
    if use_con:
        Vp = np.repeat(V, B, axis=0)
        Tp = np.tile(T, (B, 1))
        scores, trace = forward_batch(Vp, Tp, params, fusion, flags,
                                      rng=rng, training=True)
        S_all = scores.reshape(B, B, fusion.out_dim)
        s_mat, expand = contrastive_scalar(S_all)
        con_loss, d_con = contrastive_loss(s_mat, weights.tau)
        upstream = weights.lambda_con * expand(d_con)
        diag = np.arange(B)
        task_loss, d_task = _task_gradient(cfg.task, S_all[diag, diag],
                                           labels)
        upstream[diag, diag] += weights.lambda_task * d_task
        grads = backward(trace, upstream.reshape(B * B, fusion.out_dim),
                         params, fusion, flags)
    else:
        scores, trace = forward_batch(V, T, params, fusion, flags,
                                      rng=rng, training=True)
        task_loss, d_task = _task_gradient(cfg.task, scores, labels)
        con_loss = 0.0
        grads = backward(trace, weights.lambda_task * d_task, params,
                         fusion, flags)
    return grads, float(task_loss), float(con_loss)


def train(cfg: TrainConfig, records, resume: str | None = None,
          history_csv: str | None = None):
    """Full training loop. Returns (params, history rows). Deterministic
    given cfg: two identical runs produce bit-identical parameters."""
    n = len(records)
    if n < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} records")
    steps_per_epoch = n // cfg.batch_size
    planned = steps_per_epoch * cfg.epochs
    if cfg.schedule.total_steps < planned:
        raise ValueError(
            f"schedule covers {cfg.schedule.total_steps} steps but the run "
            f"plans {planned}")

    start_step = 0
    if resume is not None:
        ck_config, ck_flags, params, opt, extra = load_checkpoint(resume)
        if ck_config != cfg.fusion or ck_flags != cfg.flags:
            raise UsageError("checkpoint config does not match train config")
        if opt is None:
            raise UsageError("checkpoint has no optimizer state; cannot resume")
        start_step = int(extra["step"])
    else:
        params = init_params(cfg.fusion, RngState(cfg.seed ^ _INIT_SALT),
                             cfg.flags)
        opt = init_adamw(params, weight_decay=cfg.weight_decay)

    history = []
    step = 0
    for epoch in range(cfg.epochs):
        batches = make_batches(records, cfg.batch_size,
                               RngState(cfg.seed ^ _SHUFFLE_SALT,
                                        counter=epoch),
                               drop_last=True)
        for V, T, labels in batches:
            if step < start_step:
                step += 1
                continue
            lr = lr_at_step(step + 1, cfg.schedule)
            rng = RngState(cfg.seed ^ _DROPOUT_SALT, counter=step)
            grads, task_l, con_l = _batch_gradients(V, T, labels, params,
                                                    cfg, rng)
            total, reg_l, reg_grads = total_loss(task_l, con_l, params,
                                                 cfg.weights)
            if not np.isfinite(total):
                raise NumericFault(
                    f"non-finite loss at step {step}; last checkpoint kept")
            for k, g in reg_grads.items():
                grads[k] = grads[k] + g
            grads, _ = clip_global_norm(grads, cfg.grad_clip)
            if any(np.any(g) for g in grads.values()):
                params, opt = adamw_step(params, grads, opt, lr)
            else:
                opt = replace_step(opt)
            history.append({"step": step, "lr": lr, "task_loss": task_l,
                            "con_loss": con_l, "reg_loss": reg_l,
                            "total_loss": total})
            step += 1
            if (cfg.eval_every and cfg.checkpoint_path
                    and step % cfg.eval_every == 0):
                save_checkpoint(cfg.checkpoint_path, cfg.fusion, cfg.flags,
                                params, opt, {"step": step})
    if cfg.checkpoint_path:
        save_checkpoint(cfg.checkpoint_path, cfg.fusion, cfg.flags, params,
                        opt, {"step": step})
    if history_csv:
        write_history_csv(history_csv, history)
    return params, history


def replace_step(opt):
    """Advance the step counter without touching parameters (used when the
    gradient is exactly zero, so zero-weighted runs stay bit-identical)."""
    from dataclasses import replace as _r
    return _r(opt, step=opt.step + 1)


def evaluate(params, cfg: TrainConfig, records, batch_size: int = 512) -> Metrics:
    """Eval-mode metrics; classification only (argmax over out_dim)."""
    if cfg.task.kind != "classification":
        raise UsageError("evaluate() supports classification tasks only")
    if not records:
        raise ValueError("empty evaluation data")
    preds, truths = [], []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        V = np.stack([r.image_vec for r in chunk])
        T = np.stack([r.text_vec for r in chunk])
        scores, _ = forward_batch(V, T, params, cfg.fusion, cfg.flags,
                                  training=False)
        preds.extend(np.argmax(scores, axis=1).tolist())
        truths.extend(int(r.label) for r in chunk)
    cm = confusion_matrix(truths, preds, cfg.task.num_classes)
    return metrics_from_confusion(cm)


def _probe_inputs(records, kind: str) -> np.ndarray:
    if kind == "image_only":
        return np.stack([r.image_vec for r in records])
    if kind == "text_only":
        return np.stack([r.text_vec for r in records])
    return np.stack([np.concatenate([r.image_vec, r.text_vec])
                     for r in records])


def linear_probe(cfg: ProbeConfig, records, eval_records=None) -> Metrics:
    """Single affine classifier on the chosen input, trained with the same
    optimizer stack (AdamW + warmup/cosine + clipping); no fusion network."""
    X = _probe_inputs(records, cfg.input).astype(np.float32)
    y = np.array([int(r.label) for r in records], dtype=np.int64)
    d = X.shape[1]
    gen = RngState(cfg.seed ^ _INIT_SALT).generator()
    bound = np.sqrt(6.0 / (d + cfg.classes))
    params = {"W": gen.uniform(-bound, bound, (cfg.classes, d)).astype(np.float32),
              "b": np.zeros(cfg.classes, dtype=np.float32)}
    opt = init_adamw(params)
    n = X.shape[0]
    step = 0
    for epoch in range(cfg.epochs):
        perm = RngState(cfg.seed ^ _SHUFFLE_SALT, counter=epoch)\
            .generator().permutation(n)
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            logits = X[idx] @ params["W"].T + params["b"]
            _, dlog = cross_entropy(logits, y[idx])
            grads = {"W": dlog.T @ X[idx], "b": dlog.sum(axis=0)}
            grads, _ = clip_global_norm(grads, 1.0)
            lr = lr_at_step(min(step + 1, cfg.schedule.total_steps),
                            cfg.schedule)
            params, opt = adamw_step(params, grads, opt, lr)
            step += 1
    ev = eval_records if eval_records is not None else records
    Xe = _probe_inputs(ev, cfg.input).astype(np.float32)
    ye = np.array([int(r.label) for r in ev], dtype=np.int64)
    preds = np.argmax(Xe @ params["W"].T + params["b"], axis=1)
    cm = confusion_matrix(ye, preds, cfg.classes)
    return metrics_from_confusion(cm)


# Named ablation axes mapped to config deltas.
def _set_flags(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, flags=replace(cfg.flags, **kw))


def _set_layers(cfg: TrainConfig, n: int) -> TrainConfig:
    return replace(cfg, fusion=replace(cfg.fusion, n_layers=n))


ABLATION_AXES = {
    "No cross-attention":
        lambda c: _set_flags(c, use_cross_attention=False),
    "Concat only":
        lambda c: _set_flags(c, use_cross_attention=False,
                             fusion_direct_concat_only=True,
                             fusion_use_product=False,
                             fusion_use_difference=False),
    "Single attention":
        lambda c: _set_flags(c, bidirectional=False),
    "Bi-attention (L=2)": lambda c: _set_layers(c, 2),
    "Bi-attention (L=6)": lambda c: _set_layers(c, 6),
    "Bi-attention (L=8)": lambda c: _set_layers(c, 8),
    "w/o element product":
        lambda c: _set_flags(c, fusion_use_product=False),
    "w/o difference":
        lambda c: _set_flags(c, fusion_use_difference=False),
    "Direct concat only":
        lambda c: _set_flags(c, fusion_direct_concat_only=True,
                             fusion_use_product=False,
                             fusion_use_difference=False),
    "w/o contrastive":
        lambda c: replace(c, weights=replace(c.weights, lambda_con=0.0)),
    "w/o L2 reg":
        lambda c: replace(c, weights=replace(c.weights, lambda_reg=0.0)),
}


def apply_ablation(cfg: TrainConfig, axis: str) -> TrainConfig:
    if axis not in ABLATION_AXES:
        raise UsageError(
            f"unknown ablation axis {axis!r}; known: "
            + ", ".join(sorted(ABLATION_AXES)))
    return ABLATION_AXES[axis](cfg)


def ablation_run(base: TrainConfig, axis: str, records, eval_records) -> dict:
    """Trains the base and the ablated variant on identical data and seed;
    reports per-variant metrics and accuracy delta."""
    variant_cfg = apply_ablation(base, axis)
    base_cfg = replace(base, checkpoint_path=None)
    variant_cfg = replace(variant_cfg, checkpoint_path=None)
    p_base, _ = train(base_cfg, records)
    p_var, _ = train(variant_cfg, records)
    m_base = evaluate(p_base, base_cfg, eval_records)
    m_var = evaluate(p_var, variant_cfg, eval_records)
    return {
        "axis": axis,
        "default": m_base.as_dict(),
        "variant": m_var.as_dict(),
        "delta_accuracy": m_var.accuracy - m_base.accuracy,
    }


def _bottleneck_train_config(spec: SyntheticSpec, d_h: int, n_layers: int,
                             steps: int, epochs: int, batch_size: int,
                             seed: int) -> TrainConfig:
    heads = 2 if d_h % 2 == 0 else 1
    fusion = FusionConfig(d_v=spec.d_v, d_t=spec.d_t, d_h=d_h,
                          n_layers=n_layers, heads=heads, ffn_dim=4 * d_h,
                          dropout_p=0.1, out_dim=2, head_hidden=64)
    schedule = ScheduleConfig(peak_lr=1e-3,
                              warmup_steps=max(1, steps // 10),
                              total_steps=steps)
    return TrainConfig(task=TaskKind("classification", 2), fusion=fusion,
                       schedule=schedule, weights=LossWeights(lambda_con=0.0),
                       batch_size=batch_size, epochs=epochs, seed=seed)


def bottleneck_experiment(spec: SyntheticSpec, sweep,
                          epochs: int = 3, batch_size: int = 64,
                          seed: int = 0, include_control: bool = True) -> dict:
    """Trains fusion networks of increasing capacity on bottleneck data where
    the label-determining latent subspace is annihilated by the embedding
    projection. Accuracy stays at chance for every capacity; the control run
    (label moved into the retained subspace) verifies the pipeline can learn
    when the information survives."""
    records = generate_synthetic(spec)
    train_recs, val_recs = split_by_id_hash(records)
    steps = (len(train_recs) // batch_size) * epochs
    results = []
    for d_h, n_layers in sweep:
        cfg = _bottleneck_train_config(spec, d_h, n_layers, steps, epochs,
                                       batch_size, seed)
        params, _ = train(cfg, train_recs)
        m = evaluate(params, cfg, val_recs)
        results.append({"d_h": d_h, "n_layers": n_layers,
                        "accuracy": m.accuracy})
    report = {"task": "bottleneck", "chance_level": 0.5,
              "capacities": results}
    if include_control:
        control_spec = replace(spec, label_in_retained=True)
        control = generate_synthetic(control_spec)
        c_train, c_val = split_by_id_hash(control)
        d_h, n_layers = sweep[-1]
        cfg = _bottleneck_train_config(spec, d_h, n_layers, steps, epochs,
                                       batch_size, seed)
        params, _ = train(cfg, c_train)
        report["control_accuracy"] = evaluate(params, cfg, c_val).accuracy
    return report


def write_history_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in HISTORY_COLUMNS})


def write_manifest(path, cfg: TrainConfig, data_hash: int, metrics,
                   extra: dict | None = None):
    """Machine-readable run manifest: full config, seed, content hash of the
    cache file, final metrics. No timestamps, so identical runs produce
    identical manifests."""
    doc = {
        "config": {
            "task": asdict(cfg.task),
            "fusion": asdict(cfg.fusion),
            "flags": asdict(cfg.flags),
            "weights": asdict(cfg.weights),
            "schedule": asdict(cfg.schedule),
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "eval_every": cfg.eval_every,
            "grad_clip": cfg.grad_clip,
            "weight_decay": cfg.weight_decay,
        },
        "seed": cfg.seed,
        "data_fnv1a64": f"{data_hash:016x}",
        "metrics": metrics.as_dict() if isinstance(metrics, Metrics)
                   else metrics,
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def file_fnv1a64(path) -> int:
    with open(path, "rb") as fh:
        return fnv1a64(fh.read())
