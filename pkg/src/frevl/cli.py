"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric fault.
All randomness is governed by --seed (or the seed in the config file).
"""

from __future__ import annotations

import argparse
import json
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, replace

from . import bench as bench_mod
from .checkpoint import load_checkpoint
from .config import load_fusion_config, load_train_config
from .errors import DataError, NumericFault, UsageError
from .kernel import RngState
from .model import count_params, init_params
from .store import (
    SyntheticSpec,
    generate_synthetic,
    import_tsv,
    read_cache,
    write_cache,
)
from .training import (
    ProbeConfig,
    ablation_run,
    bottleneck_experiment,
    evaluate,
    file_fnv1a64,
    linear_probe,
    split_by_id_hash,
    train,
    write_manifest,
)
from .optim import ScheduleConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="frevl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic embedding cache")
    sp.add_argument("--task", required=True,
                    choices=["matching", "bottleneck"])
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--dv", type=int, default=32)
    sp.add_argument("--dt", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--k", type=int, default=8,
                    help="hidden latent dim (bottleneck task)")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("import", help="import TSV embeddings into a cache")
    sp.add_argument("--tsv", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dtype", choices=["f32", "f16"], default="f32")

    sp = sub.add_parser("train", help="train the fusion network")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-checkpoint", required=True)
    sp.add_argument("--resume", default=None)
    sp.add_argument("--history-csv", default=None)
    sp.add_argument("--manifest", default=None)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--config", required=True)

    sp = sub.add_parser("probe", help="linear probe baseline")
    sp.add_argument("--data", required=True)
    sp.add_argument("--input", choices=["image", "text", "concat"],
                    required=True)
    sp.add_argument("--classes", type=int, default=2)
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--peak-lr", type=float, default=1e-2)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("ablate", help="run one named ablation axis")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--axis", required=True)
    sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("bottleneck", help="capacity-ceiling experiment")
    sp.add_argument("--spec", required=True)

    sp = sub.add_parser("bench", help="forward-pass latency benchmark")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--config")
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--iters", type=int, default=100)
    sp.add_argument("--warmup", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--format", choices=["text", "json-lines"],
                    default="text")

    sp = sub.add_parser("info", help="describe a cache or checkpoint")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--cache")
    group.add_argument("--checkpoint")
    return p


def _load_labeled(path):
    records, header = read_cache(path)
    if not records:
        raise DataError(f"{path}: cache is empty")
    return records, header


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(task=args.task, n_samples=args.n, d_v=args.dv,
                         d_t=args.dt, seed=args.seed,
                         bottleneck_hidden_dim=args.k)
    records = generate_synthetic(spec)
    summary = write_cache(records, args.out)
    print(f"wrote {summary['record_count']} records "
          f"({summary['bytes_written']} bytes) to {args.out}")
    return 0


def _cmd_import(args) -> int:
    records = import_tsv(args.tsv)
    summary = write_cache(records, args.out, dtype=args.dtype)
    print(f"imported {summary['record_count']} records to {args.out}")
    return 0


def _cmd_train(args) -> int:
    records, _ = _load_labeled(args.data)
    train_recs, val_recs = split_by_id_hash(records)
    cfg = load_train_config(args.config, n_records=len(train_recs),
                            seed_override=args.seed)
    cfg = replace(cfg, checkpoint_path=args.out_checkpoint)
    params, history = train(cfg, train_recs, resume=args.resume,
                            history_csv=args.history_csv)
    result = {"steps": len(history)}
    if val_recs and cfg.task.kind == "classification":
        metrics = evaluate(params, cfg, val_recs)
        result["val_metrics"] = metrics.as_dict()
    else:
        metrics = {}
    if args.manifest:
        write_manifest(args.manifest, cfg, file_fnv1a64(args.data), metrics,
                       extra={"steps": len(history)})
    print(json.dumps(result, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    records, _ = _load_labeled(args.data)
    _, val_recs = split_by_id_hash(records)
    cfg = load_train_config(args.config, n_records=max(len(records), 1))
    ck_config, ck_flags, params, _, _ = load_checkpoint(args.checkpoint)
    if ck_config != cfg.fusion or ck_flags != cfg.flags:
        raise UsageError("checkpoint does not match --config")
    metrics = evaluate(params, cfg, val_recs or records)
    print(json.dumps(metrics.as_dict(), sort_keys=True))
    return 0


def _cmd_probe(args) -> int:
    records, _ = _load_labeled(args.data)
    train_recs, val_recs = split_by_id_hash(records)
    steps = max((len(train_recs) // 64) * args.epochs, 2)
    pcfg = ProbeConfig(
        input={"image": "image_only", "text": "text_only",
               "concat": "concat"}[args.input],
        classes=args.classes,
        schedule=ScheduleConfig(peak_lr=args.peak_lr,
                                warmup_steps=max(1, steps // 10),
                                total_steps=steps),
        epochs=args.epochs, seed=args.seed)
    metrics = linear_probe(pcfg, train_recs, val_recs or train_recs)
    print(json.dumps(metrics.as_dict(), sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    records, _ = _load_labeled(args.data)
    train_recs, val_recs = split_by_id_hash(records)
    cfg = load_train_config(args.config, n_records=len(train_recs),
                            seed_override=args.seed)
    report = ablation_run(cfg, args.axis, train_recs, val_recs or train_recs)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_bottleneck(args) -> int:
    with open(args.spec, "rb") as fh:
        raw = tomllib.load(fh)
    s = raw.get("spec", {})
    spec = SyntheticSpec(task="bottleneck",
                         n_samples=s.get("n_samples", 6000),
                         d_v=s.get("d_v", 32), d_t=s.get("d_t", 32),
                         seed=s.get("seed", 0),
                         bottleneck_hidden_dim=s.get("hidden_dim", 8))
    run = raw.get("run", {})
    sweep = [tuple(x) for x in raw.get("sweep", [[8, 1], [16, 1], [32, 2]])]
    report = bottleneck_experiment(spec, sweep,
                                   epochs=run.get("epochs", 3),
                                   batch_size=run.get("batch_size", 64),
                                   seed=run.get("seed", 0))
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    if args.checkpoint:
        config, flags, params, _, _ = load_checkpoint(args.checkpoint)
    else:
        config, flags = load_fusion_config(args.config)
        params = init_params(config, RngState(args.seed), flags)
    report = bench_mod.bench_forward(params, config, flags,
                                     batch_size=args.batch,
                                     iterations=args.iters,
                                     warmup=args.warmup, seed=args.seed)
    sys.stdout.write(bench_mod.emit_report(report, args.format))
    return 0


def _cmd_info(args) -> int:
    if args.cache:
        records, header = read_cache(args.cache)
        print(json.dumps({
            "dtype": header.dtype, "label_kind": header.label_kind,
            "d_v": header.d_v, "d_t": header.d_t,
            "record_count": header.record_count,
            "version": header.version,
        }, sort_keys=True))
    else:
        config, flags, params, opt, extra = load_checkpoint(args.checkpoint)
        total, breakdown = count_params(config, flags)
        print(json.dumps({
            "config": asdict(config),
            "flags": asdict(flags),
            "param_count": total,
            "param_breakdown": breakdown,
            "has_optimizer": opt is not None,
            "extra": extra,
        }, sort_keys=True))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "import": _cmd_import,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "probe": _cmd_probe,
    "ablate": _cmd_ablate,
    "bottleneck": _cmd_bottleneck,
    "bench": _cmd_bench,
    "info": _cmd_info,
}


def run_cli(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, IndexError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericFault as e:
        print(f"numeric fault: {e}", file=sys.stderr)
        return 3


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
