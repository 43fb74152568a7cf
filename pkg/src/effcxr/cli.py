"""Command-line interface.

Subcommands: arch, dataset, train, eval, infer, map, compare.  Global options
(--seed, --config, --out) come before the subcommand.  A config file holds
``key = value`` lines; explicit flags win over the file, the file wins over
built-in defaults.  Exit codes: 0 success, 1 runtime failure, 2 usage error.

Every run writes its artifacts plus a ``config_snapshot.txt`` into --out
(default ``runs/<timestamp>-<command>/``).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import numpy as np

from .arch import (
    ArchSpec,
    HEAD_CUSTOM,
    HEAD_STANDARD,
    VARIANTS,
    build_arch,
    build_scaled_arch,
    parse_arch,
    serialize_arch,
    toy_arch,
)
from .classify import (
    CLASSES,
    FlatModel,
    HierModel,
    LEAF_CLASSES,
    ROOT_CLASSES,
    activation_map,
    predict_flat,
    predict_hier,
    write_predictions,
)
from .cost import CostReport, cost_report
from .data import (
    AugSpec,
    DatasetConfig,
    ImageLoader,
    PRESETS,
    apply_config,
    build_covidx,
    class_counts,
    hierarchical_relabel,
    load_image,
    read_manifest,
    resize,
    save_image,
    write_manifest,
)
from .evaluate import (
    COMPARE_HEADER,
    CompareRow,
    ConfusionMatrix,
    MetricsReport,
    compare_report,
    compare_rows_to_csv,
    evaluate,
)
from .train import TrainConfig, train, write_trace
from .weights import init_store, load_weights, save_weights


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"cannot parse boolean from {text!r}")


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    settings: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'; got {raw!r}")
        key, value = line.split("=", 1)
        settings[key.strip().replace("-", "_")] = value.strip()
    return settings


class Options:
    """Layered option lookup: CLI flag, then config file, then default."""

    def __init__(self, args: argparse.Namespace, config: dict[str, str]):
        self.args = args
        self.config = config

    def get(self, key: str, default, cast=None):
        value = getattr(self.args, key, None)
        if value is not None:
            return value
        if key in self.config:
            raw = self.config[key]
            if cast is not None:
                return cast(raw)
            if isinstance(default, bool):
                return _parse_bool(raw)
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
            return raw
        return default

    def require(self, key: str, flag: str):
        value = self.get(key, None)
        if value is None:
            raise ValueError(f"missing required option {flag} (or config key {key})")
        return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effcxr",
        description="Compound-scaled chest X-ray classifiers: synthesis, cost "
        "reports, datasets, training, evaluation, activation maps.",
    )
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed (default 0)")
    parser.add_argument("--config", default=None, help="file of key = value defaults")
    parser.add_argument("--out", default=None, help="output directory (default runs/<ts>-<cmd>)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("arch", help="synthesize an architecture and report its cost")
    p.add_argument("--variant", choices=[v.lower() for v in VARIANTS] + ["custom"], default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--imagenet-top", action="store_const", const=True, default=None,
                   dest="imagenet_top", help="standard GAP+FC head, default 1000 classes")
    p.add_argument("--no-se", action="store_const", const=True, default=None, dest="no_se")
    p.add_argument("--width-mult", type=float, default=None, dest="width_mult")
    p.add_argument("--depth-mult", type=float, default=None, dest="depth_mult")
    p.add_argument("--resolution", type=int, default=None)

    p = sub.add_parser("dataset", help="assemble train/test manifests and apply a preset")
    p.add_argument("--rsna", default=None, help="manifest of Normal/Pneumonia rows")
    p.add_argument("--covid", default=None, help="manifest of the COVID collection")
    p.add_argument("--preset", choices=PRESETS, default=None)
    p.add_argument("--scale", type=float, default=None, help="shrink class targets (default 1.0)")

    p = sub.add_parser("train", help="train a flat or hierarchical classifier")
    p.add_argument("--train-manifest", default=None, dest="train_manifest")
    p.add_argument("--mode", choices=["flat", "hier"], default=None)
    p.add_argument("--arch", default=None, help="architecture file from the arch command")
    p.add_argument("--variant", choices=[v.lower() for v in VARIANTS], default=None)
    p.add_argument("--toy", action="store_const", const=True, default=None,
                   help="width-reduced single-repeat network (fast, CPU-friendly)")
    p.add_argument("--resolution", type=int, default=None, help="input size for --toy (default 64)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--images-root", default=None, dest="images_root")
    p.add_argument("--init-weights", default=None, dest="init_weights",
                   help="warm-start weight file (flat mode)")
    p.add_argument("--freeze-backbone", action="store_const", const=True, default=None,
                   dest="freeze_backbone", help="train only head layers")

    p = sub.add_parser("eval", help="evaluate a trained model on a test manifest")
    p.add_argument("--test-manifest", default=None, dest="test_manifest")
    p.add_argument("--mode", choices=["flat", "hier"], default=None)
    p.add_argument("--arch", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--root-arch", default=None, dest="root_arch")
    p.add_argument("--root-weights", default=None, dest="root_weights")
    p.add_argument("--leaf-arch", default=None, dest="leaf_arch")
    p.add_argument("--leaf-weights", default=None, dest="leaf_weights")
    p.add_argument("--images-root", default=None, dest="images_root")
    p.add_argument("--name", default=None, help="row label for the metrics table")

    p = sub.add_parser("infer", help="classify one image")
    p.add_argument("--image", default=None)
    p.add_argument("--mode", choices=["flat", "hier"], default=None)
    p.add_argument("--arch", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--root-arch", default=None, dest="root_arch")
    p.add_argument("--root-weights", default=None, dest="root_weights")
    p.add_argument("--leaf-arch", default=None, dest="leaf_arch")
    p.add_argument("--leaf-weights", default=None, dest="leaf_weights")

    p = sub.add_parser("map", help="write a class activation heatmap for one image")
    p.add_argument("--image", default=None)
    p.add_argument("--arch", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--target-class", default=None, dest="target_class",
                   help="Normal, Pneumonia or COVID19 (default: predicted class)")

    p = sub.add_parser("compare", help="merge eval metrics files into one table")
    p.add_argument("metrics", nargs="+", help="metrics.csv files from eval runs")

    return parser


def _make_out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        out = Path("runs") / f"{stamp}-{args.command}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(out: Path, settings: dict) -> None:
    lines = [f"{k} = {settings[k]}" for k in sorted(settings)]
    (out / "config_snapshot.txt").write_text("\n".join(lines) + "\n")


def _load_arch(path) -> ArchSpec:
    return parse_arch(Path(path).read_text())


def _write_confusion(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred", *cm.labels])
        for label, row in zip(cm.labels, cm.counts):
            writer.writerow([label, *row.tolist()])


# -- subcommand handlers -------------------------------------------------------


def cmd_arch(opts: Options, out: Path, seed: int) -> None:
    variant = opts.get("variant", "b0")
    imagenet_top = opts.get("imagenet_top", False)
    default_classes = 1000 if imagenet_top else 3
    classes = opts.get("classes", default_classes)
    include_se = not opts.get("no_se", False)
    head = HEAD_STANDARD if imagenet_top else HEAD_CUSTOM

    if variant == "custom":
        spec = build_scaled_arch(
            width_mult=opts.get("width_mult", 0.25),
            depth_mult=opts.get("depth_mult", 1e-9),
            resolution=opts.get("resolution", 64),
            num_classes=classes,
            head=head,
            include_se=include_se,
        )
    else:
        spec = build_arch(variant, classes, head=head, include_se=include_se)

    report = cost_report(spec)
    (out / "arch.txt").write_text(serialize_arch(spec))
    (out / "cost.txt").write_text(report.summary() + "\n")
    _write_snapshot(out, {
        "command": "arch", "variant": variant, "classes": classes,
        "head": head, "se": include_se, "seed": seed, "out": out,
    })
    print(f"variant:         {spec.variant}")
    print(f"input:           {spec.input_resolution}x{spec.input_resolution}x3")
    print(f"classes:         {spec.num_classes}")
    print(report.summary())
    print(f"wrote {out / 'arch.txt'} and {out / 'cost.txt'}")


def cmd_dataset(opts: Options, out: Path, seed: int) -> None:
    rsna = read_manifest(opts.require("rsna", "--rsna"))
    covid = read_manifest(opts.require("covid", "--covid"))
    preset = opts.get("preset", "raw")
    scale = opts.get("scale", 1.0)

    train_split, test_split = build_covidx(rsna, covid, seed=seed, scale=scale)
    raw_counts = class_counts(train_split)
    effective = apply_config(train_split, DatasetConfig(preset=preset), AugSpec(), seed=seed)
    train_counts = class_counts(effective)
    test_counts = class_counts(test_split)

    write_manifest(effective, out / "train_manifest.csv")
    write_manifest(test_split, out / "test_manifest.csv")
    summary = [
        f"preset: {preset}  scale: {scale}",
        f"assembled train split: {raw_counts}",
        f"effective train set:   {train_counts} ({len(effective)} rows)",
        f"test split:            {test_counts} ({len(test_split)} rows)",
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    _write_snapshot(out, {
        "command": "dataset", "preset": preset, "scale": scale, "seed": seed, "out": out,
    })
    print("\n".join(summary))
    print(f"wrote {out / 'train_manifest.csv'} and {out / 'test_manifest.csv'}")


def _resolve_train_arch(opts: Options, num_classes: int) -> ArchSpec:
    arch_file = opts.get("arch", None)
    variant = opts.get("variant", None)
    toy = opts.get("toy", False)
    if arch_file:
        spec = _load_arch(arch_file)
        if spec.num_classes != num_classes:
            spec = replace(spec, num_classes=num_classes)
        return spec
    if variant:
        return build_arch(variant, num_classes, head=HEAD_CUSTOM)
    if toy:
        return toy_arch(num_classes, resolution=opts.get("resolution", 64))
    raise ValueError("specify the network with --arch FILE, --variant Bx, or --toy")


def _train_one(
    label: str,
    spec: ArchSpec,
    labels: tuple[str, ...],
    entries,
    config: TrainConfig,
    loader: ImageLoader,
    out: Path,
    init_weights=None,
    freeze_backbone: bool = False,
) -> None:
    store = load_weights(init_weights, spec) if init_weights else init_store(spec, config.seed)
    if freeze_backbone:
        for layer in store.trainable:
            if not layer.startswith("head."):
                store.trainable[layer] = False
    model = FlatModel(spec=spec, store=store, labels=labels)
    rows = train(model, entries, config, loader)
    (out / f"arch_{label}.txt").write_text(serialize_arch(spec))
    save_weights(store, out / f"{label}.weights")
    write_trace(rows, out / f"trace_{label}.csv")
    print(f"[{label}] {len(entries)} rows, {config.epochs} epochs, "
          f"final loss {rows[-1].loss:.4f}, lr {rows[-1].lr:.2g}")


def cmd_train(opts: Options, out: Path, seed: int) -> None:
    manifest_path = opts.require("train_manifest", "--train-manifest")
    entries = read_manifest(manifest_path)
    mode = opts.get("mode", "flat")
    config = TrainConfig(
        learning_rate=opts.get("lr", 1e-4),
        epochs=opts.get("epochs", 10),
        batch_size=opts.get("batch_size", 8),
        seed=seed,
    )
    images_root = opts.get("images_root", str(Path(manifest_path).parent))
    loader = ImageLoader(root=images_root)

    if mode == "flat":
        spec = _resolve_train_arch(opts, 3)
        _train_one(
            "flat", spec, CLASSES, entries, config, loader, out,
            init_weights=opts.get("init_weights", None),
            freeze_backbone=opts.get("freeze_backbone", False),
        )
    else:
        spec = _resolve_train_arch(opts, 2)
        root_entries = hierarchical_relabel(entries, "root")
        leaf_entries = hierarchical_relabel(entries, "leaf")
        _train_one("root", spec, ROOT_CLASSES, root_entries, config, loader, out)
        _train_one("leaf", spec, LEAF_CLASSES, leaf_entries, config, loader, out)

    _write_snapshot(out, {
        "command": "train", "mode": mode, "manifest": manifest_path,
        "epochs": config.epochs, "batch_size": config.batch_size,
        "lr": config.learning_rate, "seed": seed, "out": out,
    })
    print(f"artifacts in {out}")


def _flat_from_files(arch_path, weights_path, labels) -> FlatModel:
    spec = _load_arch(arch_path)
    store = load_weights(weights_path, spec)
    return FlatModel(spec=spec, store=store, labels=labels)


def _build_eval_model(opts: Options, mode: str):
    if mode == "flat":
        return _flat_from_files(
            opts.require("arch", "--arch"), opts.require("weights", "--weights"), CLASSES
        )
    root = _flat_from_files(
        opts.require("root_arch", "--root-arch"),
        opts.require("root_weights", "--root-weights"),
        ROOT_CLASSES,
    )
    leaf = _flat_from_files(
        opts.require("leaf_arch", "--leaf-arch"),
        opts.require("leaf_weights", "--leaf-weights"),
        LEAF_CLASSES,
    )
    return HierModel(root=root, leaf=leaf)


def _model_cost(model) -> CostReport:
    if isinstance(model, HierModel):
        a, b = cost_report(model.root.spec), cost_report(model.leaf.spec)
        return CostReport(
            param_count=a.param_count + b.param_count,
            mac_count=a.mac_count + b.mac_count,  # worst case: both stages run
            memory_bytes=a.memory_bytes + b.memory_bytes,
            elementwise_ops=a.elementwise_ops + b.elementwise_ops,
        )
    return cost_report(model.spec)


def cmd_eval(opts: Options, out: Path, seed: int) -> None:
    manifest_path = opts.require("test_manifest", "--test-manifest")
    entries = read_manifest(manifest_path)
    mode = opts.get("mode", "flat")
    model = _build_eval_model(opts, mode)
    loader = ImageLoader(root=opts.get("images_root", str(Path(manifest_path).parent)))

    result = evaluate(model, entries, loader)
    name = opts.get("name", mode)
    row = CompareRow(name=name, metrics=result.metrics, cost=_model_cost(model))
    compare_rows_to_csv([row], out / "metrics.csv")
    _write_confusion(result.confusion, out / "confusion.csv")

    paths = [e.path for e in entries]
    preds = []
    for start in range(0, len(entries), 16):
        chunk = entries[start : start + 16]
        batch = loader.batch(chunk, model.resolution)
        preds.extend(predict_hier(model, batch) if mode == "hier" else predict_flat(model, batch))
    write_predictions(out / "predictions.csv", paths, preds, mode)

    print(result.metrics.summary())
    print("confusion (rows = true):")
    print(result.confusion.render())
    if result.stage1 is not None:
        _write_confusion(result.stage1, out / "stage1_confusion.csv")
        _write_confusion(result.stage2, out / "stage2_confusion.csv")
        print("stage 1 (root):")
        print(result.stage1.render())
        print("stage 2 (leaf, routed P/C rows):")
        print(result.stage2.render())
    _write_snapshot(out, {
        "command": "eval", "mode": mode, "manifest": manifest_path,
        "name": name, "seed": seed, "out": out,
    })
    print(f"artifacts in {out}")


def _prepared_image(opts: Options, resolution: int) -> np.ndarray:
    image_path = opts.require("image", "--image")
    return resize(load_image(image_path), resolution).pixels


def cmd_infer(opts: Options, out: Path, seed: int) -> None:
    mode = opts.get("mode", "flat")
    model = _build_eval_model(opts, mode)
    pixels = _prepared_image(opts, model.resolution)
    if mode == "hier":
        pred = predict_hier(model, pixels)[0]
    else:
        pred = predict_flat(model, pixels)[0]
    image_path = opts.get("image", "")
    write_predictions(out / "predictions.csv", [image_path], [pred], mode)
    print(f"label: {pred.label}")
    for cls, p in zip(CLASSES, pred.probs):
        print(f"  p({cls}) = {p:.4f}")
    print(f"stages: {' > '.join(pred.trace)}")
    _write_snapshot(out, {
        "command": "infer", "mode": mode, "image": image_path, "seed": seed, "out": out,
    })


def cmd_map(opts: Options, out: Path, seed: int) -> None:
    model = _flat_from_files(
        opts.require("arch", "--arch"), opts.require("weights", "--weights"), CLASSES
    )
    pixels = _prepared_image(opts, model.resolution)
    target = opts.get("target_class", None)
    if target is not None:
        matches = [c for c in CLASSES if c.lower() == str(target).lower()]
        if not matches:
            raise ValueError(f"unknown target class {target!r}; expected one of {CLASSES}")
        target = matches[0]
    heatmap = activation_map(model, pixels, target)
    pred = predict_flat(model, pixels)[0]
    save_image(heatmap, out / "heatmap.png")
    shown = target if target is not None else pred.label
    print(f"predicted: {pred.label}; heatmap class: {shown}")
    print(f"wrote {out / 'heatmap.png'}")
    _write_snapshot(out, {
        "command": "map", "image": opts.get("image", ""), "target": shown,
        "seed": seed, "out": out,
    })


def _read_metrics_csv(path) -> list[CompareRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COMPARE_HEADER:
            raise ValueError(f"{path}: bad metrics header {header!r}")
        for record in reader:
            name, acc, se, pp, params, macs, mem = record
            metrics = MetricsReport(
                accuracy=float(acc) if acc else None,
                covid_sensitivity=float(se) if se else None,
                covid_precision=float(pp) if pp else None,
            )
            cost = None
            if params:
                mem_bytes = int(round(float(mem) * 2**20)) if mem else 0
                cost = CostReport(
                    param_count=int(params),
                    mac_count=int(macs) if macs else 0,
                    memory_bytes=mem_bytes,
                    elementwise_ops=0,
                )
            rows.append(CompareRow(name=name, metrics=metrics, cost=cost))
    return rows


def cmd_compare(opts: Options, out: Path, seed: int) -> None:
    rows: list[CompareRow] = []
    for path in opts.args.metrics:
        rows.extend(_read_metrics_csv(path))
    table = compare_report(rows)
    compare_rows_to_csv(rows, out / "comparison.csv")
    (out / "comparison.txt").write_text(table + "\n")
    print(table)
    print(f"artifacts in {out}")


HANDLERS = {
    "arch": cmd_arch,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "map": cmd_map,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = read_config(args.config) if args.config else {}
        opts = Options(args, config)
        seed = opts.get("seed", 0)
        out = _make_out_dir(args)
        HANDLERS[args.command](opts, out, seed)
        return 0
    except Exception as exc:  # runtime failure -> diagnostic + exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
