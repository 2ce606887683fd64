"""Command-line front end.

Subcommands cover the whole pipeline: ``synth-data`` writes a synthetic
dataset, ``train`` fits one variant/mode and saves a checkpoint plus loss
curves, ``eval`` scores a checkpoint under one protocol, ``ablate`` sweeps
the six variant/mode cells, and ``convert-csv`` moves matrices between CSV
and the binary format.

Exit codes: 0 success, 1 validation problem (bad config, bad file, bad
dims), 2 runtime failure (non-finite numbers, guard violations).  All
artifacts are byte-deterministic for a fixed config and seed; wall-clock
times appear only in ``metadata.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .data import (
    SyntheticSpec,
    load_dataset,
    make_synthetic,
    read_matrix,
    save_dataset,
    write_matrix,
)
from .errors import (
    AccessViolation,
    ConfigError,
    ContractError,
    DataFormatError,
    NumericError,
    ShapeError,
)
from .evaluation import PROTOCOLS, evaluate
from .models import load_checkpoint, save_checkpoint
from .training import MODES, VARIANTS, TrainingConfig, train, write_loss_csv


def _load_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return raw


def _reject_unknown(raw, allowed, where):
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _require(value, what):
    if value is None:
        raise ConfigError(f"{what} is required (flag or config key)")
    return value


def cmd_synth_data(args):
    raw = _load_json(args.spec) if args.spec else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = SyntheticSpec.from_dict(raw)
    dataset = make_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    print(f"wrote {dataset.features.shape[0]} rows "
          f"({spec.n_seen} seen / {spec.n_novel} novel classes) to {out}")
    return 0


def cmd_train(args):
    raw = _load_json(args.config)
    _reject_unknown(raw, ("dataset", "out_dir", "training"), args.config)
    training_raw = dict(raw.get("training", {}))
    for key in ("variant", "mode", "seed", "max_epochs"):
        value = getattr(args, key)
        if value is not None:
            training_raw[key] = value
    config = TrainingConfig.from_dict(training_raw)
    dataset_path = _require(args.dataset or raw.get("dataset"), "dataset path")
    out = Path(_require(args.out or raw.get("out_dir"), "output directory"))

    dataset = load_dataset(dataset_path)
    progress = None
    if not args.quiet:
        progress = lambda e: print(
            f"epoch {e['epoch']}: val_top1={e['val_top1']:.4f}", file=sys.stderr
        )
    started = time.perf_counter()
    result = train(dataset, config, on_epoch=progress)
    wall = time.perf_counter() - started

    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.ckpt", result.models, meta={
        "config": config.asdict(),
        "best_epoch": result.best_epoch,
        "best_val": result.best_val,
        "counters": result.counters,
    })
    write_loss_csv(out / "losses.csv", result.steps)
    (out / "metadata.json").write_text(json.dumps({
        "config": config.asdict(),
        "dataset": str(dataset_path),
        "epochs_ran": len(result.epochs),
        "best_epoch": result.best_epoch,
        "best_val": result.best_val,
        "counters": result.counters,
        "wall_time_s": wall,
        "finished_unix": time.time(),
    }, indent=1, sort_keys=True) + "\n")
    print(f"checkpoint written to {out / 'checkpoint.ckpt'} "
          f"(best epoch {result.best_epoch}, val_top1 {result.best_val:.4f})")
    return 0


def cmd_eval(args):
    models, meta = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    if (models.d_x, models.d_c) != (dataset.d_x, dataset.d_c):
        raise ContractError(
            f"checkpoint dims (d_x={models.d_x}, d_c={models.d_c}) do not match "
            f"dataset (d_x={dataset.d_x}, d_c={dataset.d_c})"
        )
    config_echo = meta.get("config", {})
    tags = {k: config_echo[k] for k in ("variant", "mode") if k in config_echo}
    report = evaluate(
        models, dataset, args.protocol,
        n_synthetic=args.n_synthetic, synth_seen=args.synth_seen,
        shots=args.shots, top_k=args.top_k, seed=args.seed,
        classifier_epochs=args.classifier_epochs, tags=tags,
    )
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"report written to {args.out}")
    else:
        print(text, end="")
    if args.per_class_csv:
        with open(args.per_class_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "class_id", "accuracy"])
            for group in sorted(report.per_class):
                for cls in sorted(report.per_class[group]):
                    writer.writerow([group, cls, report.per_class[group][cls]])
    return 0


def cmd_ablate(args):
    raw = _load_json(args.config)
    _reject_unknown(
        raw,
        ("dataset", "out_dir", "seeds", "n_synthetic", "classifier_epochs",
         "training", "variants", "modes"),
        args.config,
    )
    training_raw = dict(raw.get("training", {}))
    for key in ("variant", "mode", "seed"):
        if key in training_raw:
            raise ConfigError(f"training.{key} is set per ablation cell")
    seeds = int(raw.get("seeds", args.seeds))
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    n_synthetic = int(raw.get("n_synthetic", 300))
    classifier_epochs = int(raw.get("classifier_epochs", 500))
    variants = raw.get("variants", list(VARIANTS))
    modes = raw.get("modes", list(MODES))
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r} in ablation grid")
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r} in ablation grid")
    dataset_path = _require(args.dataset or raw.get("dataset"), "dataset path")
    out = Path(_require(args.out or raw.get("out_dir"), "output directory"))

    cells = []
    for variant in variants:
        for mode in modes:
            zsl_scores, h_scores, pool_reads = [], [], 0
            for offset in range(seeds):
                # fresh dataset per run isolates the access-guard counters
                dataset = load_dataset(dataset_path)
                config = TrainingConfig.from_dict({
                    **training_raw, "variant": variant, "mode": mode,
                    "seed": args.seed + offset,
                })
                result = train(dataset, config)
                pool_reads += dataset.guard.counters["unlabeled_features"]
                zsl = evaluate(result.models, dataset, "zsl",
                               n_synthetic=n_synthetic, seed=args.seed + offset,
                               classifier_epochs=classifier_epochs)
                gzsl = evaluate(result.models, dataset, "gzsl",
                                n_synthetic=n_synthetic, seed=args.seed + offset,
                                classifier_epochs=classifier_epochs)
                zsl_scores.append(zsl.novel_top1)
                h_scores.append(gzsl.harmonic)
            cell = {
                "variant": variant,
                "mode": mode,
                "zsl_t1": float(np.median(zsl_scores)),
                "gzsl_h": float(np.median(h_scores)),
                "seeds": seeds,
                "unlabeled_reads": pool_reads,
            }
            cells.append(cell)
            if not args.quiet:
                print(f"{variant:7s} {mode:13s} zsl_t1={cell['zsl_t1']:.4f} "
                      f"gzsl_h={cell['gzsl_h']:.4f}", file=sys.stderr)

    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(cells, indent=1, sort_keys=True) + "\n")
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(cells[0]))
        writer.writeheader()
        writer.writerows(cells)
    print(f"ablation table ({len(cells)} cells) written to {out}")
    return 0


def cmd_convert_csv(args):
    src, dst = Path(args.input), Path(args.output)
    if src.suffix == ".csv" and dst.suffix == ".mat":
        try:
            arr = np.loadtxt(src, delimiter=",", ndmin=2, dtype=np.float64)
        except OSError:
            raise ConfigError(f"{src}: no such file") from None
        except ValueError as exc:
            raise DataFormatError(f"{src}: not numeric CSV: {exc}") from exc
        write_matrix(dst, arr)
    elif src.suffix == ".mat" and dst.suffix == ".csv":
        arr = read_matrix(src)
        np.savetxt(dst, arr, delimiter=",", fmt="%.17g")
    else:
        raise ConfigError(
            "convert-csv converts .csv -> .mat or .mat -> .csv; "
            f"got {src.suffix!r} -> {dst.suffix!r}"
        )
    print(f"converted {src} -> {dst}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="anyshot",
        description="Feature-generating any-shot learning pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic dataset")
    p.add_argument("out", help="output directory")
    p.add_argument("--spec", help="JSON file overriding synthetic-spec fields")
    p.add_argument("--seed", type=int, help="override the generation seed")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train one variant/mode")
    p.add_argument("config", help="JSON run config (dataset, out_dir, training)")
    p.add_argument("--dataset", help="dataset manifest path (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint under one protocol")
    p.add_argument("checkpoint")
    p.add_argument("dataset", help="dataset manifest path")
    p.add_argument("protocol", choices=PROTOCOLS)
    p.add_argument("--n-synthetic", type=int, default=300)
    p.add_argument("--synth-seen", action="store_true",
                   help="also synthesize seen-class training features")
    p.add_argument("--shots", type=int, help="real rows per novel class (fsl/gfsl)")
    p.add_argument("--top-k", type=int, help="also report top-k accuracies")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classifier-epochs", type=int, default=500)
    p.add_argument("--out", help="write the report JSON here instead of stdout")
    p.add_argument("--per-class-csv", help="also write per-class accuracies as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep variant x mode cells")
    p.add_argument("config", help="JSON config (dataset, out_dir, seeds, training)")
    p.add_argument("--dataset", help="dataset manifest path (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="base seed for the sweep")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("convert-csv", help="convert between CSV and matrix files")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_convert_csv)

    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, ShapeError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, AccessViolation) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
