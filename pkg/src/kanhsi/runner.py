"""End-to-end run pipeline shared by the CLI commands.

A training run persists everything needed to reproduce it bit-identically:
the resolved config, the split manifest, the model spec, the trained
parameters, a JSON-lines run log, and a one-row metrics CSV.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config_file, parse_scheduler, resolve
from .data import (
    HsiCube,
    LabelGrid,
    SplitManifest,
    extract_patches,
    gen_synthetic,
    load_cube,
    load_labels,
    pca_fit,
    pca_transform,
    save_manifest,
    standardize_apply,
    standardize_fit,
    stratified_split,
)
from .models import KanSettings, Model, build_architecture, param_count, parse_spec, serialize_spec
from .train import Adam, MetricsReport, TrainConfig, assemble_batch, evaluate, train_epoch

__all__ = [
    "METRICS_COLUMNS",
    "DEFAULT_PATCH",
    "REFERENCE_FULL_SCALE",
    "SweepAxes",
    "run_training",
    "run_eval",
    "run_sweep",
    "build_report",
    "read_metrics_rows",
]

METRICS_COLUMNS = ["arch", "plan", "G", "dataset", "seed", "OA", "weighted_F1",
                   "params", "epochs", "wall_seconds"]

DEFAULT_PATCH = {"mlp": 1, "cnn1d": 1, "cnn2d": 5, "cnn3d_luo": 5,
                 "cnn3d_he": 7, "nm3dcnn": 7, "ssftt": 13}

# Published full-scale seven-dataset averages, display-only (never used in
# pass/fail logic). Shown by `report --paper-reference`, marked as not
# reproduced here.
REFERENCE_FULL_SCALE = {
    "cnn1d": {"vanilla_oa": 91.42, "kan_oa": 94.33, "vanilla_f1": 0.9133, "kan_f1": 0.9428},
    "cnn2d": {"vanilla_oa": 92.61, "kan_oa": 95.05, "vanilla_f1": 0.9253, "kan_f1": 0.9495},
    "cnn3d_luo": {"vanilla_oa": 92.50, "kan_oa": 95.50, "vanilla_f1": 0.9244, "kan_f1": 0.9545},
    "cnn3d_he": {"vanilla_oa": 92.02, "kan_oa": 97.08, "vanilla_f1": 0.9199, "kan_f1": 0.9706},
    "nm3dcnn": {"vanilla_oa": 94.63, "kan_oa": 97.20, "vanilla_f1": 0.9460, "kan_f1": 0.9719},
    "ssftt": {"vanilla_oa": 98.37, "kan_oa": 99.20, "vanilla_f1": 0.9836, "kan_f1": 0.9919},
}

ARCH_GROUPS = [
    ("mlp", "pixel spectrum, fully connected"),
    ("cnn1d", "spectral 1-d convolutions"),
    ("cnn2d", "spatial 2-d convolutions (3x3 window)"),
    ("cnn3d_luo", "spectral-spatial 3-d convolutions (3x3 window)"),
    ("cnn3d_he", "spectral-spatial 3-d convolutions (7x7 window)"),
    ("nm3dcnn", "spectral-spatial 3-d convolutions (7x7 window)"),
    ("ssftt", "spectral-spatial transformer (13x13 window)"),
]


def kan_settings(cfg: RunConfig) -> KanSettings:
    linear_basis = "spline" if cfg.basis == "default" else cfg.basis
    conv_basis = "rbf" if cfg.basis == "default" else cfg.basis
    return KanSettings(grid_size=cfg.grid_size, spline_order=cfg.spline_order,
                       base_fn=cfg.base_fn, linear_basis=linear_basis, conv_basis=conv_basis)


def arch_overrides(cfg: RunConfig) -> dict:
    if cfg.arch == "mlp":
        return {"hidden": tuple(cfg.hidden), "batch_norm": cfg.batch_norm}
    if cfg.arch == "ssftt" and cfg.heads != 1:
        return {"heads": cfg.heads}
    return {}


def effective_patch(cfg: RunConfig) -> int:
    return cfg.patch if cfg.patch > 0 else DEFAULT_PATCH[cfg.arch]


def dataset_name(cfg: RunConfig) -> str:
    if cfg.dataset_name:
        return cfg.dataset_name
    if cfg.cube:
        return Path(cfg.cube).stem
    return "synthetic"


@dataclass
class Prepared:
    cube: HsiCube  # standardized (and PCA-reduced when requested)
    labels: LabelGrid
    manifest: SplitManifest
    patch: int
    name: str


def prepare(cfg: RunConfig) -> Prepared:
    if cfg.cube:
        cube = load_cube(cfg.cube)
        labels = load_labels(cfg.labels)
    else:
        cube, labels = gen_synthetic(cfg.synth_h, cfg.synth_w, cfg.synth_bands,
                                     cfg.synth_classes, cfg.synth_noise, cfg.synth_seed)
    if cube.h != labels.h or cube.w != labels.w:
        raise ValueError("cube and label extents differ")
    manifest = stratified_split(labels, cfg.fraction, cfg.seed)
    stats = standardize_fit(cube, manifest.train_indices)
    cube = standardize_apply(cube, stats)
    if cfg.pca > 0:
        model = pca_fit(cube, manifest.train_indices, cfg.pca)
        cube = pca_transform(cube, model)
    return Prepared(cube=cube, labels=labels, manifest=manifest,
                    patch=effective_patch(cfg), name=dataset_name(cfg))


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in METRICS_COLUMNS])


def read_metrics_rows(run_dir) -> list[dict]:
    path = Path(run_dir) / "metrics.csv"
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for rec in csv.DictReader(f):
            rec["OA"] = float(rec["OA"])
            rec["weighted_F1"] = float(rec["weighted_F1"])
            rec["G"] = int(rec["G"])
            rec["seed"] = int(rec["seed"])
            rec["params"] = int(rec["params"])
            rec["epochs"] = int(rec["epochs"])
            rec["wall_seconds"] = float(rec["wall_seconds"])
            rows.append(rec)
    return rows


def run_training(cfg: RunConfig, out_dir, quiet: bool = False) -> dict:
    """Split, standardize, (PCA), build, train, evaluate; persist the run."""
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prep = prepare(cfg)
    save_manifest(prep.manifest, out_dir / "split.txt")
    (out_dir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")

    spec = build_architecture(
        cfg.arch, prep.cube.bands, prep.labels.num_classes, prep.patch,
        cfg.plan, kan_settings(cfg), cfg.scale, arch_overrides(cfg),
    )
    (out_dir / "modelspec.txt").write_text(serialize_spec(spec), encoding="utf-8")
    tc = TrainConfig(learning_rate=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                     seed=cfg.seed, scheduler=parse_scheduler(cfg.scheduler),
                     precision=cfg.precision, force_lr=cfg.force_lr)
    model = Model(spec, seed=cfg.seed, dtype=tc.dtype)

    train_idx = prep.manifest.train_indices
    x = assemble_batch(extract_patches(prep.cube, train_idx, prep.patch), spec.input_shape)
    y = prep.labels.labels.reshape(-1)[train_idx].astype(np.int64) - 1
    optimizer = Adam(model.params(), tc.learning_rate)

    with open(out_dir / "runlog.jsonl", "w", encoding="utf-8") as log:
        for epoch in range(tc.epochs):
            summary = train_epoch(model, x, y, optimizer, tc, epoch)
            log.write(json.dumps({
                "type": "epoch", "epoch": summary.epoch, "loss": summary.mean_loss,
                "train_accuracy": summary.train_accuracy, "lr": summary.lr,
            }) + "\n")
            if not quiet and (epoch % 50 == 0 or epoch == tc.epochs - 1):
                print(f"  epoch {epoch:4d}  loss {summary.mean_loss:.4f}  "
                      f"train acc {summary.train_accuracy:.2f}%")
        report = evaluate(model, prep.cube, prep.labels, prep.manifest, prep.patch)
        log.write(json.dumps({"type": "metrics", **report.to_dict()}) + "\n")

    model.save_params(out_dir / "params.npz")
    row = {
        "arch": cfg.arch,
        "plan": spec.plan.name,
        "G": cfg.grid_size,
        "dataset": prep.name,
        "seed": cfg.seed,
        "OA": report.overall_accuracy,
        "weighted_F1": report.weighted_f1,
        "params": param_count(spec),
        "epochs": tc.epochs,
        "wall_seconds": time.perf_counter() - t0,
    }
    write_metrics_csv(out_dir / "metrics.csv", [row])
    return row


def run_eval(run_dir, cube_path: str = "", labels_path: str = "",
             batch_size: int = 256) -> MetricsReport:
    """Re-evaluate a persisted run: same preprocessing, stored parameters."""
    run_dir = Path(run_dir)
    values = parse_config_file(run_dir / "config.txt")
    overrides = {}
    if cube_path:
        overrides["cube"] = cube_path
        overrides["labels"] = labels_path
    cfg = resolve(values, overrides)
    prep = prepare(cfg)
    spec = parse_spec((run_dir / "modelspec.txt").read_text(encoding="utf-8"))
    tc_dtype = np.float32 if cfg.precision == 32 else np.float64
    model = Model(spec, seed=cfg.seed, dtype=tc_dtype)
    model.load_params(run_dir / "params.npz")
    return evaluate(model, prep.cube, prep.labels, prep.manifest, prep.patch, batch_size)


# -- sweeps -----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepAxes:
    grid_sizes: tuple[int, ...] = (2,)
    hidden_counts: tuple[int, ...] = (1,)
    widths: tuple[int, ...] = (16,)
    batch_norm: tuple[bool, ...] = (False,)
    families: tuple[str, ...] = ("mlp", "kan")
    repeats: int = 1

    def __post_init__(self):
        if not (self.grid_sizes and self.hidden_counts and self.widths
                and self.batch_norm and self.families and self.repeats >= 1):
            raise ValueError("every sweep axis needs at least one value")
        bad = set(self.families) - {"mlp", "kan"}
        if bad:
            raise ValueError(f"unknown model families: {sorted(bad)}")


@dataclass(frozen=True)
class SweepCell:
    family: str
    grid_size: int  # 0 for mlp
    hidden: tuple[int, ...]
    batch_norm: bool

    @property
    def label(self) -> str:
        widths = ", ".join(str(w) for w in self.hidden)
        inner = f"(in, {widths}, out)" if widths else "(in, out)"
        name = "KAN" if self.family == "kan" else "MLP"
        g = f" G{self.grid_size}" if self.family == "kan" else ""
        bn = " +BN" if self.batch_norm else ""
        return f"{name} {inner}{g}{bn}"

    @property
    def slug(self) -> str:
        widths = "-".join(str(w) for w in self.hidden) or "0"
        bn = "bn" if self.batch_norm else "nobn"
        g = f"g{self.grid_size}" if self.family == "kan" else "g0"
        return f"{self.family}_{widths}_{g}_{bn}"


def sweep_cells(axes: SweepAxes) -> list[SweepCell]:
    """One cell per configuration, KAN rows (G descending) before their MLP row."""
    families = sorted(set(axes.families))  # "kan" before "mlp"
    cells: list[SweepCell] = []
    seen = set()
    for bn in axes.batch_norm:
        for count in axes.hidden_counts:
            hiddens = [()] if count == 0 else [(w,) * count for w in axes.widths]
            for hidden in hiddens:
                for family in families:
                    gs = sorted(axes.grid_sizes, reverse=True) if family == "kan" else (0,)
                    for g in gs:
                        cell = SweepCell(family, g, hidden, bn)
                        if cell not in seen:
                            seen.add(cell)
                            cells.append(cell)
    return cells


def run_sweep(base_cfg: RunConfig, axes: SweepAxes, out_dir, quiet: bool = True):
    """Train every cell x repeat; emit a long CSV and a pivoted markdown table.

    Individual cell failures are recorded and the sweep continues.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = sweep_cells(axes)
    total = len(cells) * axes.repeats
    print(f"sweep: {len(cells)} cells x {axes.repeats} repeats = {total} runs")
    rows: list[dict] = []
    failures: list[dict] = []
    for cell in cells:
        for rep in range(axes.repeats):
            seed = base_cfg.seed + rep
            cfg = replace(
                base_cfg, arch="mlp",
                plan="kan-head" if cell.family == "kan" else "vanilla",
                hidden=cell.hidden, batch_norm=cell.batch_norm,
                grid_size=cell.grid_size if cell.family == "kan" else base_cfg.grid_size,
                seed=seed,
            )
            cell_dir = out_dir / "cells" / f"{cell.slug}_seed{seed}"
            try:
                row = run_training(cfg, cell_dir, quiet=quiet)
            except Exception as e:  # record and continue
                failures.append({"label": cell.label, "seed": seed, "error": f"{type(e).__name__}: {e}"})
                print(f"  FAILED {cell.label} seed {seed}: {e}")
                continue
            row = dict(row)
            row["label"] = cell.label
            row["family"] = cell.family
            row["hidden"] = ",".join(str(w) for w in cell.hidden)
            row["batch_norm"] = cell.batch_norm
            rows.append(row)
            print(f"  {cell.label:28s} seed {seed}  OA {row['OA']:.2f}  F1 {row['weighted_F1']:.4f}")

    long_cols = ["label", "family", "hidden", "batch_norm"] + METRICS_COLUMNS
    with open(out_dir / "sweep.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(long_cols)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in long_cols])
    if failures:
        with open(out_dir / "failures.json", "w", encoding="utf-8") as f:
            json.dump(failures, f, indent=2)
    (out_dir / "sweep.md").write_text(_sweep_markdown(rows, cells), encoding="utf-8")
    return rows, failures


def _mean(xs):
    return sum(xs) / len(xs)


def _sweep_markdown(rows: list[dict], cells: list[SweepCell]) -> str:
    """Pivot: one row per cell, one column per dataset, then average and gain
    of each KAN row over its matched MLP row."""
    datasets = sorted({r["dataset"] for r in rows})
    by_label: dict[str, dict[str, list[float]]] = {}
    for r in rows:
        by_label.setdefault(r["label"], {}).setdefault(r["dataset"], []).append(r["OA"])

    def row_avg(label):
        per_ds = [_mean(v) for v in by_label.get(label, {}).values()]
        return _mean(per_ds) if per_ds else None

    lines = ["# Overall accuracy (percent)", ""]
    lines.append("| Model | " + " | ".join(datasets) + " | Average | Average gain |")
    lines.append("|" + "---|" * (len(datasets) + 3))
    for cell in cells:
        if cell.label not in by_label:
            continue
        vals = []
        for ds in datasets:
            xs = by_label[cell.label].get(ds)
            vals.append(f"{_mean(xs):.2f}" if xs else "-")
        avg = row_avg(cell.label)
        if cell.family == "kan":
            mlp_label = SweepCell("mlp", 0, cell.hidden, cell.batch_norm).label
            mlp_avg = row_avg(mlp_label)
            gain = f"{avg - mlp_avg:.2f}" if (avg is not None and mlp_avg is not None) else "-"
        else:
            gain = "-"
        lines.append(f"| {cell.label} | " + " | ".join(vals)
                     + f" | {avg:.2f} | {gain} |")
    lines.append("")
    return "\n".join(lines)


# -- consolidated reports ------------------------------------------------------------


def build_report(run_dirs, paper_reference: bool = False) -> tuple[str, list[dict]]:
    """Merge run rows into OA and weighted-F1 tables grouped by architecture,
    with a KAN-vs-vanilla gain column per plan."""
    rows: list[dict] = []
    skipped = []
    for d in run_dirs:
        try:
            rows.extend(read_metrics_rows(d))
        except (OSError, ValueError, KeyError) as e:
            skipped.append((str(d), str(e)))
    if not rows:
        raise ValueError("no valid run directories")

    datasets = sorted({r["dataset"] for r in rows})
    plans_order = ["vanilla", "kan-fe", "kan-head", "full-kan", "custom"]

    def table(metric: str, fmt: str) -> list[str]:
        lines = [f"| Model | " + " | ".join(datasets) + " | Average | Average gain |",
                 "|" + "---|" * (len(datasets) + 3)]
        for arch, desc in ARCH_GROUPS:
            arch_rows = [r for r in rows if r["arch"] == arch]
            if not arch_rows:
                continue
            lines.append(f"| **{arch}** ({desc}) |" + " |" * (len(datasets) + 2))
            per_plan: dict[str, dict[str, list[float]]] = {}
            for r in arch_rows:
                per_plan.setdefault(r["plan"], {}).setdefault(r["dataset"], []).append(r[metric])

            def plan_avg(plan):
                cells = per_plan.get(plan)
                if not cells:
                    return None
                return _mean([_mean(v) for v in cells.values()])

            base = plan_avg("vanilla")
            for plan in plans_order:
                if plan not in per_plan:
                    continue
                vals = []
                for ds in datasets:
                    xs = per_plan[plan].get(ds)
                    vals.append(format(_mean(xs), fmt) if xs else "-")
                avg = plan_avg(plan)
                if plan == "vanilla" or base is None:
                    gain = "-"
                else:
                    gain = format(avg - base, fmt)
                lines.append(f"| {arch} {plan} | " + " | ".join(vals)
                             + f" | {format(avg, fmt)} | {gain} |")
        return lines

    lines = ["# Consolidated results", ""]
    if skipped:
        lines.append("Skipped invalid run directories: " + "; ".join(f"{d} ({e})" for d, e in skipped))
        lines.append("")
    lines.append("## Overall accuracy (percent)")
    lines.append("")
    lines.extend(table("OA", ".2f"))
    lines.append("")
    lines.append("## Weighted F1")
    lines.append("")
    lines.extend(table("weighted_F1", ".4f"))
    lines.append("")
    if paper_reference:
        lines.append("## Published full-scale reference averages (not reproduced here)")
        lines.append("")
        lines.append("Seven-dataset averages reported for the full-scale experiments; shown "
                     "for orientation only and never used in any pass/fail logic.")
        lines.append("")
        lines.append("| Architecture | vanilla OA | KAN OA | vanilla F1 | KAN F1 |")
        lines.append("|---|---|---|---|---|")
        for arch, ref in REFERENCE_FULL_SCALE.items():
            lines.append(f"| {arch} | {ref['vanilla_oa']:.2f} | {ref['kan_oa']:.2f} "
                         f"| {ref['vanilla_f1']:.4f} | {ref['kan_f1']:.4f} |")
        lines.append("")
    return "\n".join(lines), rows
