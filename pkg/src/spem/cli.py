"""``spem`` command line: gen, train, eval, render, verify.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 validation or
verification failure. Settings come from compiled defaults, then an optional
``--config`` file, then explicit flags.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID = 0, 2, 3, 4


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _usage(msg):
    return CommandError(EXIT_USAGE, msg)


def _threads(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(n)


def _settings(args):
    from .config import ConfigError, load_settings

    try:
        return load_settings(args.config)
    except ConfigError as exc:
        raise _usage(f"config: {exc}") from exc
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read config {args.config}: {exc}") from exc


def _read_dataset(path):
    from .dataset_io import FormatError, read_dataset

    try:
        return read_dataset(path)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read dataset {path}: {exc}") from exc
    except FormatError as exc:
        raise CommandError(EXIT_INVALID, f"invalid dataset {path}: {exc}") from exc


def _load_model(path):
    from .classifier import load_model, model_metadata
    from .nn.checkpoint import CheckpointError

    try:
        return load_model(path), model_metadata(path)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read model {path}: {exc}") from exc
    except CheckpointError as exc:
        raise CommandError(EXIT_INVALID, f"invalid model {path}: {exc}") from exc


def _write(action, path, what):
    try:
        return action()
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot write {what} {path}: {exc}") from exc


# --- gen -------------------------------------------------------------------

def cmd_gen(args) -> int:
    from .dataset_io import write_dataset
    from .scan import collect_dataset
    from .scene import class_names

    if args.per_class < 1:
        raise _usage("--per-class must be at least 1")
    if args.seed < 0:
        raise _usage("--seed must be non-negative")
    st = _settings(args)
    t0 = time.perf_counter()
    with _threads(args.threads):
        ds = collect_dataset(args.task, args.per_class, seed=args.seed, geometry=st.geometry,
                             velostat=st.velostat, circuit=st.circuit_params(), timing=st.timing,
                             templates=st.templates)
    _write(lambda: write_dataset(ds, args.out), args.out, "dataset")
    g, t = st.geometry, st.timing
    print(f"wrote {args.out}: {len(ds)} {args.task} streams in {time.perf_counter() - t0:.1f} s")
    print(f"mat {g.n}x{g.m} elements, pitch {g.pitch_x} x {g.pitch_y} mm, "
          f"{g.length} x {g.width} m")
    print(f"stream {ds.j} frames x {ds.n}x{ds.m}x{ds.d} @ {t.frame_period} s "
          f"({ds.j * t.frame_period:.1f} s per stream)")
    for name, count in zip(class_names(args.task), ds.class_counts()):
        print(f"  {name:<26}{count}")
    return EXIT_OK


# --- train -----------------------------------------------------------------

def _train_config(args, st):
    from dataclasses import replace

    over = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed), ("lr", args.lr),
                              ("batch", args.batch), ("stop_at_val_acc", args.stop_at_val_acc),
                              ("time_budget", args.time_budget))
            if v is not None}
    try:
        return replace(st.train, **over)
    except ValueError as exc:
        raise _usage(str(exc)) from exc


def cmd_train(args) -> int:
    from .classifier import (ModelConfig, TrainingError, build_model, expected_parameter_count,
                             save_model, train)
    from .dataset_io import split

    st = _settings(args)
    tc = _train_config(args, st)
    ds = _read_dataset(args.dataset)
    model_opts = dict(st.model)
    if args.arch is not None:
        model_opts["arch"] = args.arch
    if args.preset is not None:
        model_opts["extractor_preset"] = args.preset
    model_opts.setdefault("dropout", tc.dropout_rate)
    dims = dict(class_count=ds.class_count, frames=ds.j, n=ds.n, m=ds.m, d=ds.d)
    try:
        config = ModelConfig(**{**dims, **model_opts})
    except (TypeError, ValueError) as exc:
        raise _usage(f"model config: {exc}") from exc
    try:
        train_set, test_set, val_set = split(ds, seed=tc.seed)
    except ValueError as exc:
        raise CommandError(EXIT_INVALID, f"cannot split dataset: {exc}") from exc
    model = build_model(config, seed=tc.seed)
    print(f"model {config.arch}/{config.extractor_preset}: {model.parameter_count()} parameters "
          f"(formula {expected_parameter_count(config)})")
    print(f"split train {len(train_set)} / test {len(test_set)} / validation {len(val_set)}")

    history_path = args.history or f"{args.out}.history"
    lines = []

    def progress(rec):
        lines.append(rec.line())
        if not args.quiet:
            print(f"epoch {rec.epoch:>3}  loss {rec.loss:.4f}  train {rec.train_acc:.3f}  "
                  f"val {rec.val_acc:.3f}", flush=True)

    with _threads(args.threads):
        try:
            result = train(model, train_set, val_set, tc, callback=progress)
        except ValueError as exc:
            raise CommandError(EXIT_INVALID, str(exc)) from exc
        except TrainingError as exc:
            raise CommandError(EXIT_INVALID, f"training aborted: {exc}") from exc
    meta = {"split_seed": tc.seed, "split_ratios": "0.7,0.15,0.15", "best_epoch": result.best_epoch}
    _write(lambda: save_model(model, args.out, meta), args.out, "model")
    _write(lambda: Path(history_path).write_text("".join(f"{ln}\n" for ln in lines)),
           history_path, "history")
    if args.figure:
        from .plotting import history_figure

        _write(lambda: history_figure(result.history, args.figure, title=f"{config.arch} training"),
               args.figure, "figure")
    print(f"best epoch {result.best_epoch} (validation accuracy {result.best_val_acc:.3f}); "
          f"{len(result.history)} epochs in {result.wall_time:.1f} s")
    print(f"final loss {result.final_loss!r}")
    return EXIT_OK


# --- eval ------------------------------------------------------------------

PARTITIONS = ("all", "train", "test", "val")


def _partitioned(path: str, name: str, multi: bool) -> str:
    if not multi:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{name}{p.suffix}"))


def cmd_eval(args) -> int:
    from .classifier import evaluate
    from .dataset_io import split
    from .scene import TASKS

    parts = [p.strip() for p in args.partitions.split(",") if p.strip()]
    bad = [p for p in parts if p not in PARTITIONS]
    if bad or not parts:
        raise _usage(f"unknown partition(s) {bad}; choose from {PARTITIONS}")
    model, meta = _load_model(args.model)
    ds = _read_dataset(args.dataset)
    task = {0: "posture", 1: "activity"}.get(ds.task)
    names = TASKS[task] if task and len(TASKS[task]) == ds.class_count else None
    subsets = {"all": ds}
    if any(p != "all" for p in parts):
        seed = args.split_seed if args.split_seed is not None else int(meta.get("split_seed", 0))
        try:
            subsets.update(zip(("train", "test", "val"), split(ds, seed=seed)))
        except ValueError as exc:
            raise CommandError(EXIT_INVALID, f"cannot split dataset: {exc}") from exc
    multi = len(parts) > 1
    with _threads(args.threads):
        for part in parts:
            try:
                report = evaluate(model, subsets[part])
            except ValueError as exc:
                raise CommandError(EXIT_INVALID, str(exc)) from exc
            label = f"{part} " if multi or part != "all" else ""
            print(f"{label}accuracy {report.accuracy:.3f}")
            if not args.quiet:
                print(report.table(names))
            if args.confusion:
                out = _partitioned(args.confusion, part, multi)
                _write(lambda: Path(out).write_text(report.confusion_csv()), out, "confusion")
            if args.figure:
                from .plotting import confusion_figure

                out = _partitioned(args.figure, part, multi)
                _write(lambda: confusion_figure(report.confusion, names, out,
                                                title=f"{model.config.arch}, {part}"), out, "figure")
    return EXIT_OK


# --- render ----------------------------------------------------------------

def cmd_render(args) -> int:
    from .dataset_io import export_pgm

    ds = _read_dataset(args.dataset)
    if not 0 <= args.sample < len(ds):
        raise _usage(f"--sample {args.sample} out of range [0, {len(ds)})")
    outdir = Path(args.outdir)
    _write(lambda: outdir.mkdir(parents=True, exist_ok=True), outdir, "directory")
    stream = ds.stream(args.sample)
    width = max(2, len(str(ds.j - 1)))
    for f, frame in enumerate(stream.frames):
        path = outdir / f"frame_{f:0{width}d}.pgm"
        _write(lambda: export_pgm(frame, path), path, "frame")
    print(f"wrote {ds.j} frames of sample {args.sample} (label {stream.label}) to {outdir}")
    if args.montage:
        from .plotting import montage_figure

        _write(lambda: montage_figure(stream.pixels, stream.timestamps, args.montage,
                                      title=f"sample {args.sample}, label {stream.label}"),
               args.montage, "montage")
    return EXIT_OK


# --- verify ----------------------------------------------------------------

def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise _usage(f"unknown suite(s) {unknown}; choose from {list(SUITES)}")
    t0 = time.perf_counter()
    with _threads(args.threads):
        results = run_suites(names, fault=args.inject_fault, out=sys.stdout)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} suites passed in {time.perf_counter() - t0:.1f} s")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}")
        return EXIT_INVALID
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    from .classifier import ARCHS, PRESETS
    from .verify import SUITES

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--threads", type=_positive_int,
                        help="BLAS thread limit; 1 gives bit-exact sequential runs")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="spem", description="Smart pressure mat simulator and classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic stream dataset")
    g.add_argument("--task", required=True, choices=("posture", "activity"))
    g.add_argument("--per-class", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train a classifier on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--arch", choices=ARCHS)
    t.add_argument("--preset", choices=tuple(PRESETS))
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--stop-at-val-acc", type=float, help="stop once validation accuracy reaches this")
    t.add_argument("--time-budget", type=float, metavar="SECONDS",
                   help="stop after the epoch that crosses this wall-clock limit")
    t.add_argument("--out", required=True, help="SPNN checkpoint path")
    t.add_argument("--history", help="per-epoch history (default OUT.history)")
    t.add_argument("--figure", help="write training curves to this image")
    t.add_argument("-q", "--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--confusion", help="comma-separated confusion matrix output")
    e.add_argument("--partitions", default="all",
                   help="comma list of all,train,test,val (split as at training time)")
    e.add_argument("--split-seed", type=int, help="override the split seed stored in the model")
    e.add_argument("--figure", help="write a confusion heatmap to this image")
    e.add_argument("-q", "--quiet", action="store_true")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", parents=[common], help="export one sample's frames as PGM")
    r.add_argument("--dataset", required=True)
    r.add_argument("--sample", type=int, required=True)
    r.add_argument("--outdir", required=True)
    r.add_argument("--montage", help="also write a montage image of the stream")
    r.set_defaults(func=cmd_render)

    v = sub.add_parser("verify", parents=[common], help="run the oracle suites")
    v.add_argument("--suite", action="append", help=f"run only this suite ({', '.join(SUITES)})")
    v.add_argument("--inject-fault", choices=("backward",), help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"spem {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
