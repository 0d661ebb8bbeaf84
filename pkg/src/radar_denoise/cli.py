"""Command-line entry point.

Exit codes: 0 success, 2 usage or config error, 3 data/contract error,
4 numeric failure.  The ``denoise`` command only loads the inference module,
so running it never imports the LiDAR supervision code.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("radar_denoise")


class UsageError(Exception):
    pass


def _emit(line: str, logfile=None) -> None:
    print(line, flush=True)
    if logfile is not None:
        logfile.write(line + "\n")
        logfile.flush()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_run_config(args):
    from .config import load_config

    if args.config is not None and not Path(args.config).is_file():
        raise UsageError(f"config file {args.config} not found")
    return load_config(args.config, args.set or ())


def _echo_config(cfg, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())


def _scene_counts(text: str):
    try:
        counts = [int(c) for c in text.split(",")]
    except ValueError:
        raise UsageError(f"--scenes expects train,val,test counts, got {text!r}") from None
    if len(counts) != 3 or min(counts) < 0:
        raise UsageError(f"--scenes expects three non-negative counts, got {text!r}")
    return counts


def _data_dir(args, cfg) -> Path:
    d = args.data or cfg.paths.data
    if not d:
        raise UsageError("no dataset directory given (--data or paths.data)")
    return Path(d)


def _out_dir(args, cfg) -> Path:
    d = args.out or cfg.paths.out
    if not d:
        raise UsageError("no output directory given (--out or paths.out)")
    return Path(d)


def _split_scenes(data: Path, split: str, require_lidar: bool):
    from .synth import load_split
    from .train import load_scenes

    return load_scenes(load_split(data, split), require_lidar=require_lidar)


# -- commands ----------------------------------------------------------------

def cmd_gen(args) -> int:
    from .synth import generate_dataset

    cfg = _load_run_config(args)
    out = _out_dir(args, cfg)
    counts = _scene_counts(args.scenes)
    _echo_config(cfg, out)
    stats = generate_dataset(cfg.synth, counts, out)
    for split, s in stats.items():
        _emit(" ".join([f"split={split}"] + [f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                                               for k, v in sorted(s.items())]))
    return 0


def cmd_train(args) -> int:
    from .train import save_model, train_model

    cfg = _load_run_config(args)
    data, out = _data_dir(args, cfg), _out_dir(args, cfg)
    train_scenes = _split_scenes(data, "train", require_lidar=True)
    val_scenes = _split_scenes(data, "val", require_lidar=False) if (data / "val.txt").exists() else []
    _echo_config(cfg, out)
    with open(out / "train.log", "w") as fh:
        _emit(f"event=start seed={cfg.train.seed} epochs={cfg.train.epochs} lr={cfg.train.lr} "
              f"train_scenes={len(train_scenes)} val_scenes={len(val_scenes)}", fh)
        try:
            res = train_model(cfg, train_scenes, val_scenes, emit=lambda line: _emit(line, fh))
        except FloatingPointError as exc:
            _emit(f"event=abort reason=nonfinite_loss epoch={getattr(exc, 'epoch', '?')}", fh)
            raise
        save_model(out / "checkpoint.json", res.store, cfg,
                   extra={"best_epoch": res.best_epoch, "best_val_f1": res.best_val_f1})
        _emit(f"event=done best_epoch={res.best_epoch} best_val_f1={res.best_val_f1:.6g} "
              f"seconds={res.seconds:.1f}", fh)
    return 0


def cmd_denoise(args) -> int:
    from .infer import denoise_file, load_model, model_config_from_run_config

    expected = None
    if args.config is not None:
        if not Path(args.config).is_file():
            raise UsageError(f"config file {args.config} not found")
        expected = model_config_from_run_config(json.loads(Path(args.config).read_text()))
    model = load_model(args.checkpoint, expected)
    src, out = Path(args.radar), Path(args.out)
    if src.is_dir():
        inputs = sorted(src.glob("*.csv"))
        out.mkdir(parents=True, exist_ok=True)
        jobs = [(p, out / p.name, None) for p in inputs if not p.stem.endswith("_mask")]
        cfg_dir = out
    else:
        jobs = [(src, out, args.mask)]
        cfg_dir = out.parent
    cfg_dir.mkdir(parents=True, exist_ok=True)
    _write_json(cfg_dir / "denoise_config.json", {
        "checkpoint": str(args.checkpoint), "config_hash": model.config_hash,
        "model_config": model.config, "threshold": args.threshold if args.threshold is not None
        else model.model.threshold})
    for radar_path, out_path, mask_path in jobs:
        info = denoise_file(model, radar_path, out_path, mask_path, args.threshold)
        _emit(f"input={radar_path} points={info['input']} kept={info['kept']} "
              f"out={info['out']} mask={info['mask']}")
    return 0


def cmd_eval(args) -> int:
    from .train import chamfer_improved_fraction, evaluate_masks, format_csv, format_table, model_masks

    cfg = _load_run_config(args)
    data, out = _data_dir(args, cfg), _out_dir(args, cfg)
    scenes = _split_scenes(data, args.split, require_lidar=False)
    _echo_config(cfg, out)
    if args.checkpoint:
        from .infer import load_model

        model = load_model(args.checkpoint)
        masks = model_masks(model.store, scenes, cfg.replace(**{"voxel": model.config["voxel"],
                                                                 "model": model.config["model"]}))
        label = "model"
    else:
        import numpy as np

        masks = [np.ones(len(s.radar)) for s in scenes]
        label = "raw"
    reports, pooled = evaluate_masks(scenes, masks, cfg.model.threshold)
    rows = [_report_record(r, label) for r in reports]
    rows.append({"scene": "ALL", "method": label, **_metric_fields(pooled),
                 "chamfer_raw": _mean([r.chamfer_raw for r in reports]),
                 "chamfer_denoised": _mean([r.chamfer_denoised for r in reports]),
                 "kept": sum(r.kept for r in reports), "total": sum(r.total for r in reports)})
    (out / "eval.csv").write_text(format_csv(rows))
    (out / "eval.txt").write_text(format_table(rows))
    _emit(f"method={label} split={args.split} f1={pooled.f1:.6g} auc={pooled.auc:.6g} "
          f"chamfer_improved={chamfer_improved_fraction(reports):.6g}")
    return 0


def cmd_baseline(args) -> int:
    from .train import baseline_masks, evaluate_masks, format_csv, format_table, grid_search

    cfg = _load_run_config(args)
    data, out = _data_dir(args, cfg), _out_dir(args, cfg)
    scenes = _split_scenes(data, args.split, require_lidar=False)
    _echo_config(cfg, out)
    params = cfg.ror if args.method == "ror" else cfg.sor
    if args.grid:
        params, best, grid_rows = grid_search(args.method, scenes)
        recs = [{**vars(p), **_metric_fields(m)} for p, m in grid_rows]
        (out / f"{args.method}_grid.csv").write_text(format_csv(recs))
        _emit(f"event=grid method={args.method} best={json.dumps(vars(params), sort_keys=True)} "
              f"f1={best.f1:.6g}")
    masks = baseline_masks(args.method, scenes, params)
    reports, pooled = evaluate_masks(scenes, masks)
    rows = [_report_record(r, args.method) for r in reports]
    rows.append({"scene": "ALL", "method": args.method, **_metric_fields(pooled),
                 "chamfer_raw": _mean([r.chamfer_raw for r in reports]),
                 "chamfer_denoised": _mean([r.chamfer_denoised for r in reports]),
                 "kept": sum(r.kept for r in reports), "total": sum(r.total for r in reports)})
    (out / f"{args.method}.csv").write_text(format_csv(rows))
    (out / f"{args.method}.txt").write_text(format_table(rows))
    _emit(f"method={args.method} params={json.dumps(vars(params), sort_keys=True)} "
          f"f1={pooled.f1:.6g} precision={pooled.precision:.6g} recall={pooled.recall:.6g}")
    return 0


def cmd_ablate(args) -> int:
    from .train import (REPORT_FIELDS, AblationAborted, ablation_records, format_csv,
                        format_table, run_ablation)

    cfg = _load_run_config(args)
    data, out = _data_dir(args, cfg), _out_dir(args, cfg)
    tr = _split_scenes(data, "train", require_lidar=True)
    va = _split_scenes(data, "val", require_lidar=False)
    te = _split_scenes(data, "test", require_lidar=True)
    _echo_config(cfg, out)
    with open(out / f"ablation_{args.axis}.log", "w") as fh:
        try:
            rows = run_ablation(args.axis, cfg, tr, va, te, emit=lambda line: _emit(line, fh))
        except AblationAborted as exc:
            rows = exc.rows
            _write_reports(out, args.axis, rows, REPORT_FIELDS, ablation_records, format_csv, format_table)
            _emit(f"event=abort completed={len(rows)} reason={exc.cause}", fh)
            raise exc.cause
    table = _write_reports(out, args.axis, rows, REPORT_FIELDS, ablation_records, format_csv, format_table)
    print(table, end="")
    return 0


def _write_reports(out, axis, rows, fields, records, fmt_csv, fmt_table) -> str:
    recs = records(rows)
    (out / f"ablation_{axis}.csv").write_text(fmt_csv(recs, fields))
    table = fmt_table(recs, fields)
    (out / f"ablation_{axis}.txt").write_text(table)
    return table


def _metric_fields(m) -> dict:
    return {k: getattr(m, k) for k in ("precision", "recall", "f1", "accuracy", "auc")}


def _report_record(r, method: str) -> dict:
    return {"scene": r.name, "method": method, **_metric_fields(r.metrics),
            "chamfer_raw": r.chamfer_raw, "chamfer_denoised": r.chamfer_denoised,
            "kept": r.kept, "total": r.total}


def _mean(values) -> float:
    vals = [v for v in values if v == v]
    return sum(vals) / len(vals) if vals else float("nan")


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radar-denoise",
                                description="LiDAR-supervised radar point cloud denoising")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        if data:
            sp.add_argument("--data", help="dataset directory")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("gen", help="generate a synthetic dataset")
    common(sp, data=False)
    sp.add_argument("--scenes", default="100,20,20", help="train,val,test scene counts")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train a denoiser (needs LiDAR)")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("denoise", help="denoise radar clouds with a trained checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--radar", required=True, help="radar CSV file or a directory of them")
    sp.add_argument("--out", required=True, help="output CSV (or directory for directory input)")
    sp.add_argument("--mask", help="soft-mask sidecar path (single-file mode)")
    sp.add_argument("--threshold", type=float, help="keep points scoring at least this")
    sp.add_argument("--config", help="refuse the checkpoint unless it matches this run config")
    sp.set_defaults(func=cmd_denoise)

    sp = sub.add_parser("eval", help="mask metrics and chamfer, raw or with a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--split", default="test")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("baseline", help="run a classical outlier filter")
    common(sp)
    sp.add_argument("--method", choices=("ror", "sor"), required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--grid", action="store_true", help="grid-search the filter parameters")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("ablate", help="train one model per ablation value")
    common(sp)
    sp.add_argument("--axis", choices=("tau", "depth"), required=True)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="level=%(levelname)s msg=%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    from .cloud import CloudFormatError
    from .infer import CheckpointMismatch
    from .schema import ConfigError

    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error={type(exc).__name__} msg={exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"error=numeric msg={exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointMismatch, CloudFormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error={type(exc).__name__} msg={exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
