"""Command-line front end: ``cmtboost {train,eval,gradcheck,inspect,synth}``.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error, 3 data
error, 4 training divergence, 5 checkpoint incompatibility, 6 gradient-check
threshold breach.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import CheckpointError, read_checkpoint, load_checkpoint, save_state
from .config import ConfigError, RunConfig, parse_assignments, parse_config, apply_assignment
from .data import (DataError, SyntheticSpec, atomic_write_text, generate_synthetic,
                   load_dataset, preprocess_records, save_dataset, split_dataset)
from .metrics import DegenerateInputError, EvalReport, class_separation, pca_project, predict, report_from_scores
from .model import build_model, format_shape, shape_trace
from .train import DivergenceError, TrainResult, train
from .tensor import DimensionError, ParameterError

logger = logging.getLogger("cmtboost")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_CHECKPOINT, EXIT_GRADCHECK = range(7)
THREADS_ENV = "CMTBOOST_THREADS"


# ---------------------------------------------------------------------------
# helpers

def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return "inf" if x == np.inf else f"{x:.10g}"


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _resolve(args, base_text: Optional[str] = None) -> RunConfig:
    """Defaults -> (config file | checkpoint echo) -> --set -> dedicated flags."""
    overrides = list(args.set or [])
    if getattr(args, "profile", None):
        overrides.insert(0, f"model.profile={args.profile}")
    if args.config is None and base_text is not None:
        cfg = parse_config(None, [], out_dir=args.out, command=args.command)
        for k, v, where in parse_assignments(base_text.splitlines(), "checkpoint config"):
            if k != "model.profile":
                apply_assignment(cfg, k, v, where)
        for ov in overrides:
            if "=" not in ov:
                raise ConfigError(f"override {ov!r} must look like section.key=value")
            k, v = (s.strip() for s in ov.split("=", 1))
            apply_assignment(cfg, k, v, "--set")
    else:
        cfg = parse_config(args.config, overrides, out_dir=args.out, command=args.command)
    if args.seed is not None:
        cfg.set_seed(args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    if getattr(args, "synthetic", False):
        cfg.data.synthetic = True
    if getattr(args, "data", None):
        cfg.data.root = args.data
    cfg.f64 = bool(args.f64)
    return cfg.validate()


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.txt", cfg.echo())
    return out


def _dtype(cfg: RunConfig):
    return np.float64 if cfg.f64 else np.float32


def _records(cfg: RunConfig):
    """Load (or synthesize) and preprocess the dataset for the configured model."""
    d, m = cfg.data, cfg.model
    if d.synthetic:
        recs = generate_synthetic(SyntheticSpec(d.synthetic_count, d.synthetic_size,
                                                d.synthetic_noise, d.seed))
    else:
        if not d.root:
            raise DataError("no dataset given: pass --data DIR (or data.root) or --synthetic")
        recs = load_dataset(d.root, permissive=d.permissive)
    recs = preprocess_records(recs, m.input_height, m.input_width, m.input_channels)
    return split_dataset(recs, tuple(d.split), d.seed)


def write_eval_outputs(out: Path, model, records, cfg: RunConfig, prefix: str = "") -> EvalReport:
    """Score ``records`` and write report, curves, PCA and predictions (+ figures)."""
    x = np.stack([r.pixels for r in records])
    labels = np.array([r.label for r in records], dtype=np.intp)
    ids = [r.id for r in records]
    scores, feats = predict(model, x, cfg.eval.batch_size)
    rep = report_from_scores(scores, labels, ids)
    atomic_write_text(out / f"{prefix}report.csv", _csv_text(["metric", "value"], rep.summary_rows()))
    atomic_write_text(out / f"{prefix}predictions.csv", _csv_text(
        ["id", "label", "score"], [(i, l, f"{s:.10g}") for i, l, s in zip(ids, labels, scores)]))
    figures = cfg.eval.figures
    if rep.roc is not None:
        for name, curve in (("roc", rep.roc), ("pr", rep.pr)):
            atomic_write_text(out / f"{prefix}{name}.csv", _csv_text(
                ["threshold", "x", "y"], [(_fmt(t), _fmt(a), _fmt(b)) for t, a, b in curve.rows()]))
        if figures:
            from . import plotting
            plotting.plot_roc(rep.roc, rep.auc_roc, out / f"{prefix}roc.png")
            plotting.plot_pr(rep.pr, rep.auc_pr, float(labels.mean()), out / f"{prefix}pr.png")
    else:
        logger.warning("only one class present: ROC/PR curves skipped")
    k = min(cfg.eval.pca_components, feats.shape[1])
    try:
        pca = pca_project(feats, k=max(k, 1))
    except DegenerateInputError as exc:
        logger.warning("PCA skipped: %s", exc)
    else:
        header = ["id", "label"] + [f"pc{i + 1}" for i in range(pca.projections.shape[1])]
        atomic_write_text(out / f"{prefix}pca.csv", _csv_text(
            header, [(i, l, *(f"{v:.10g}" for v in row)) for i, l, row in zip(ids, labels, pca.projections)]))
        if 0 < labels.sum() < labels.size and len(records) >= 4:
            try:
                logger.info("PC1 class separation %.3f", class_separation(pca.projections[:, 0], labels))
            except DegenerateInputError:
                pass
        if figures and pca.projections.shape[1] >= 2:
            from . import plotting
            plotting.plot_pca(pca.projections, labels, pca.explained_ratio, out / f"{prefix}pca.png")
    return rep


def _print_report(rep: EvalReport, title: str) -> None:
    auc = f"  AUC-ROC {rep.auc_roc:.4f}  AUC-PR {rep.auc_pr:.4f}" if rep.roc is not None else ""
    flag = " (precision undefined: no positive predictions)" if rep.precision_degenerate else ""
    print(f"{title}: n={rep.total}  Acc {rep.acc:.2f}  Sen {rep.sen:.2f} (CI +-{rep.sen_ci:.4f})  "
          f"Pre {rep.pre:.2f}  F1 {rep.f1:.2f}{auc}{flag}")


# ---------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _prepare_out(cfg)
    split = _records(cfg)
    atomic_write_text(out / "split.csv", split.manifest_csv())
    model = build_model(cfg.model, dtype=_dtype(cfg))
    if cfg.train.residual_init:
        if not cfg.model.residual_enabled:
            raise ConfigError("train.residual_init needs model.residual_enabled = true")
        load_checkpoint(model, cfg.train.residual_init, strict=True, prefix="res.")
        logger.info("residual branch initialized from %s", cfg.train.residual_init)
    echo = cfg.echo()
    best_path = out / "best.ckpt"

    def on_improve(epoch, state):
        save_state(state, best_path, echo)

    def on_epoch(epoch, row, m):
        every = cfg.train.checkpoint_every
        if every and (epoch + 1) % every == 0:
            save_state({k: p.data for k, p in m.named_parameters()}, out / "last.ckpt", echo)

    from .train import history_csv
    try:
        result: TrainResult = train(model, split, cfg.train, on_improve, on_epoch)
    except DivergenceError as exc:
        if not best_path.exists():
            save_state(exc.last_good, best_path, echo)
        atomic_write_text(out / "history.csv", history_csv(exc.history))
        print(f"error: training diverged: {exc}; last good checkpoint kept at {best_path}",
              file=sys.stderr)
        return EXIT_DIVERGED
    atomic_write_text(out / "history.csv", result.history_csv())
    if cfg.eval.figures:
        from . import plotting
        plotting.plot_history(result.history, out / "history.png")
    print(f"trained {cfg.train.epochs} epochs in {result.seconds:.1f}s; best epoch "
          f"{result.best_epoch} (val F1 {result.history[result.best_epoch]['val_f1']:.2f})")
    if split.test:
        rep = write_eval_outputs(out, model, split.test, cfg)
        _print_report(rep, "test")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    cfg = _resolve(args, base_text=ckpt.config_text or None)
    out = _prepare_out(cfg)
    model = build_model(cfg.model, dtype=_dtype(cfg))
    load_checkpoint(model, args.checkpoint, strict=True)
    split = _records(cfg)
    records = {"test": split.test, "validation": split.validation, "train": split.train,
               "all": split.train + split.validation + split.test}[args.split]
    if not records:
        raise DataError(f"the {args.split} split is empty")
    rep = write_eval_outputs(out, model, records, cfg)
    _print_report(rep, args.split)
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .battery import format_results, run_battery
    cfg = _resolve(args)
    out = _prepare_out(cfg)
    results = run_battery(include_end_to_end=not args.skip_end_to_end)
    print(format_results(results))
    atomic_write_text(out / "gradcheck.csv", _csv_text(
        ["check", "category", "max_rel_err", "tolerance", "passed", "seconds"],
        [(r.name, r.category, f"{r.error:.6e}", f"{r.tolerance:.0e}", int(r.passed),
          f"{r.seconds:.3f}") for r in results]))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradcheck FAILED ({len(failed)} of {len(results)}): {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    print(f"gradcheck passed: {len(results)} checks")
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = _resolve(args)
    out = _prepare_out(cfg)
    model = build_model(cfg.model)
    rows = shape_trace(model)
    total = model.num_parameters()
    width = max(len(r[0]) for r in rows)
    lines = [f"{name:<{width}}  {format_shape(shape):>14}  {params:>10}" for name, shape, params in rows]
    lines.append(f"{'total':<{width}}  {'':>14}  {total:>10}")
    print("\n".join(lines))
    if args.format == "csv":
        atomic_write_text(out / "shape_trace.csv", _csv_text(
            ["layer", "shape", "params"],
            [(n, format_shape(s), p) for n, s, p in rows] + [("total", "", total)]))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    out = _prepare_out(cfg)
    d = cfg.data
    recs = generate_synthetic(SyntheticSpec(d.synthetic_count, d.synthetic_size, d.synthetic_noise, d.seed))
    save_dataset(recs, out)
    print(f"wrote {len(recs)} images to {out}/benign and {out}/malignant")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (section.key = value lines)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="seed for model init, split, shuffling and augmentation")
    common.add_argument("--f64", action="store_true", help="run in 64-bit precision")
    common.add_argument("--profile", help="model profile (desk64 or paper224)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--synthetic", action="store_true", help="use generated phantom images")
    data.add_argument("--data", help="dataset root with benign/ and malignant/ subdirectories")

    p = argparse.ArgumentParser(prog="cmtboost", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", parents=[common, data], help="train and evaluate on the test split")
    t.add_argument("--epochs", type=int)
    e = sub.add_parser("eval", parents=[common, data], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=["test", "validation", "train", "all"])
    g = sub.add_parser("gradcheck", parents=[common], help="run the gradient-check battery")
    g.add_argument("--skip-end-to-end", action="store_true")
    i = sub.add_parser("inspect", parents=[common], help="print the layer shape trace")
    i.add_argument("--format", choices=["text", "csv"], default="text")
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset as PNG files")
    return p


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "inspect": cmd_inspect, "synth": cmd_synth}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "gradcheck":
        args.f64 = True
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DegenerateInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DimensionError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
