"""Command-line interface: gen-synth, train, eval, sweep, report.

Exit codes: 0 success, 1 usage/configuration, 2 I/O, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, parse_config_file, resolve
from .data import DataFormatError, class_signatures, gen_synthetic, save_cube, save_labels
from .models import BuildError
from .runner import SweepAxes, build_report, run_eval, run_sweep, run_training, write_metrics_csv
from .tensor import NumericError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse errors through our exit codes
        raise ConfigError(message)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file; flags override it")
    p.add_argument("--arch", choices=["mlp", "cnn1d", "cnn2d", "cnn3d_luo", "cnn3d_he", "nm3dcnn", "ssftt"])
    p.add_argument("--plan", choices=["vanilla", "kan-fe", "kan-head", "full-kan"])
    p.add_argument("--grid-size", type=int, dest="grid_size")
    p.add_argument("--spline-order", type=int, dest="spline_order")
    p.add_argument("--basis", choices=["default", "spline", "rbf"])
    p.add_argument("--base-fn", choices=["prelu", "identity", "silu"], dest="base_fn")
    p.add_argument("--scale", type=float)
    p.add_argument("--hidden", help="comma-separated hidden widths (mlp)")
    p.add_argument("--batch-norm", dest="batch_norm", choices=["on", "off"])
    p.add_argument("--heads", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--pca", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--scheduler", help="'none' or 'step:<period>:<gamma>'")
    p.add_argument("--precision", type=int, choices=[32, 64])
    p.add_argument("--force-lr", dest="force_lr", action="store_const", const=True)
    p.add_argument("--cube", help="HSC1 cube path (omit for the synthetic default scene)")
    p.add_argument("--labels", help="HSL1 label path")
    p.add_argument("--dataset-name", dest="dataset_name")
    p.add_argument("--synth-h", type=int, dest="synth_h")
    p.add_argument("--synth-w", type=int, dest="synth_w")
    p.add_argument("--synth-bands", type=int, dest="synth_bands")
    p.add_argument("--synth-classes", type=int, dest="synth_classes")
    p.add_argument("--synth-noise", type=float, dest="synth_noise")
    p.add_argument("--synth-seed", type=int, dest="synth_seed")


def _resolve_config(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    flags = {}
    for key in ("arch", "plan", "grid_size", "spline_order", "basis", "base_fn", "scale",
                "heads", "patch", "pca", "fraction", "lr", "epochs", "batch_size", "seed",
                "scheduler", "precision", "force_lr", "cube", "labels", "dataset_name",
                "synth_h", "synth_w", "synth_bands", "synth_classes", "synth_noise", "synth_seed"):
        flags[key] = getattr(args, key, None)
    if getattr(args, "hidden", None) is not None:
        flags["hidden"] = tuple(int(w) for w in args.hidden.split(",")) if args.hidden else ()
    if getattr(args, "batch_norm", None) is not None:
        flags["batch_norm"] = args.batch_norm == "on"
    if getattr(args, "out", None) is not None:
        flags["out"] = args.out
    return resolve(file_values, flags)


def cmd_gen_synth(args) -> int:
    if args.h < 1 or args.w < 1 or args.bands < 1:
        raise ConfigError("scene extents must be positive")
    if args.classes < 2:
        raise ConfigError("need at least 2 classes")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cube, labels = gen_synthetic(args.h, args.w, args.bands, args.classes, args.noise, args.seed)
    save_cube(cube, out / "scene.hsc")
    save_labels(labels, out / "labels.hsl")
    manifest = {
        "h": args.h, "w": args.w, "bands": args.bands, "classes": args.classes,
        "noise_sigma": args.noise, "seed": args.seed, "void_fraction": 0.05,
        "signatures": class_signatures(args.bands, args.classes, args.seed).tolist(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    print(f"wrote {out / 'scene.hsc'} ({args.h}x{args.w}x{args.bands}), "
          f"{out / 'labels.hsl'} ({args.classes} classes), {out / 'manifest.json'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.out:
        raise ConfigError("--out is required for train")
    row = run_training(cfg, cfg.out, quiet=args.quiet)
    print(f"run complete: arch={row['arch']} plan={row['plan']} dataset={row['dataset']} "
          f"OA={row['OA']:.2f} weighted_F1={row['weighted_F1']:.4f} params={row['params']}")
    print(f"artifacts in {cfg.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = run_eval(args.run, args.cube or "", args.labels or "", args.batch_size)
    print(f"OA: {report.overall_accuracy:.4f}")
    print(f"weighted F1: {report.weighted_f1:.6f}")
    for i, (p, r, f1) in enumerate(zip(report.precision, report.recall, report.f1), start=1):
        print(f"  class {i}: precision {p:.4f}  recall {r:.4f}  F1 {f1:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    return EXIT_OK


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as e:
        raise ConfigError(f"bad {what} list {text!r}") from e
    if not vals:
        raise ConfigError(f"{what} axis is empty")
    return vals


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.out:
        raise ConfigError("--out is required for sweep")
    bn_axis = {"on": (True,), "off": (False,), "both": (False, True)}[args.sweep_batch_norm]
    families = tuple(f.strip() for f in args.families.split(",") if f.strip())
    axes = SweepAxes(
        grid_sizes=_parse_int_list(args.grid_sizes, "grid size"),
        hidden_counts=_parse_int_list(args.hidden_counts, "hidden count"),
        widths=_parse_int_list(args.widths, "width"),
        batch_norm=bn_axis,
        families=families,
        repeats=args.repeats,
    )
    try:
        rows, failures = run_sweep(cfg, axes, cfg.out)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    print(f"sweep wrote {len(rows)} rows to {cfg.out}/sweep.csv")
    if failures:
        print(f"{len(failures)} cells failed; see {cfg.out}/failures.json", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.runs:
        raise ConfigError("report needs at least one run directory")
    text, rows = build_report(args.runs, paper_reference=args.paper_reference)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(text, encoding="utf-8")
    write_metrics_csv(out / "report.csv", rows)
    print(text)
    print(f"wrote {out / 'report.md'} and {out / 'report.csv'}")
    return EXIT_OK


def make_parser() -> _Parser:
    parser = _Parser(prog="kanhsi", description="KAN layers for hyperspectral pixel classification")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic labeled scene")
    g.add_argument("--h", type=int, default=32)
    g.add_argument("--w", type=int, default=32)
    g.add_argument("--bands", type=int, default=16)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train one model and evaluate on the test split")
    _add_run_flags(t)
    t.add_argument("--out", help="run directory")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="re-evaluate a persisted run directory")
    e.add_argument("--run", required=True)
    e.add_argument("--cube", help="override the evaluation cube")
    e.add_argument("--labels", help="override the evaluation labels")
    e.add_argument("--batch-size", type=int, default=256, dest="batch_size")
    e.add_argument("--out", help="write the metrics report as JSON here")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="MLP-vs-KAN sweep over grid sizes and widths")
    _add_run_flags(s)
    s.add_argument("--out", help="sweep directory")
    s.add_argument("--grid-sizes", default="2,5,8", dest="grid_sizes")
    s.add_argument("--hidden-counts", default="1", dest="hidden_counts")
    s.add_argument("--widths", default="16")
    s.add_argument("--sweep-batch-norm", choices=["on", "off", "both"], default="off",
                   dest="sweep_batch_norm")
    s.add_argument("--families", default="mlp,kan")
    s.add_argument("--repeats", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="consolidate run directories into markdown/CSV tables")
    r.add_argument("runs", nargs="*", help="run directories")
    r.add_argument("--out", default=".")
    r.add_argument("--paper-reference", action="store_true",
                   help="append published full-scale reference averages (display only)")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, BuildError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataFormatError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
