"""Command-line entry point.

Subcommands: inspect, train, cross-validate, predict, benchmark, metrics,
stability, synth.  Every file-producing run writes the fully resolved
configuration as ``effective_config.json`` next to its outputs; timing
results live in their own file so the remaining reports are byte-stable
across reruns with the same seed.

A JSON config file (flat keys mirroring the flag names) can pre-set any
flag; explicit flags win over file values.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import data as data_mod
from . import evalbench, metrics, network, training

_MODELS = ("cfpnet-m", "unet-64", "unet-32")


def _parse_size(text: str) -> tuple[int, int]:
    """'WxH' to internal (height, width)."""
    try:
        w, h = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _build_model(name: str, net_config: network.NetworkConfig | None, seed: int):
    if name == "cfpnet-m":
        return network.build_cfpnet_m(net_config, seed=seed)
    if name == "unet-64":
        return network.build_unet_baseline(64, seed=seed)
    if name == "unet-32":
        return network.build_unet_baseline(32, seed=seed)
    raise ValueError(f"unknown model {name!r}")


def _write_json(path: Path, payload) -> None:
    if dataclasses.is_dataclass(payload) and not isinstance(payload, type):
        payload = dataclasses.asdict(payload)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _prepare_out(args, parser_name: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    effective = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    effective["command"] = parser_name
    for key, value in list(effective.items()):
        if isinstance(value, tuple):
            effective[key] = list(value)
    _write_json(out / "effective_config.json", effective)
    return out


def _load_gray(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def _resize_policy(args) -> data_mod.ResizePolicy | None:
    if args.input is None:
        return None
    h, w = args.input
    return data_mod.ResizePolicy(height=h, width=w, mode=getattr(args, "resize_mode", "stretch"))


def _train_config(args) -> training.TrainConfig:
    return training.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed
    )


def _cmd_inspect(args) -> int:
    model = _build_model(args.model, None, args.seed)
    summary = network.complexity_summary(model, args.input)
    audit = network.layer_audit(model.config) if isinstance(model, network.CfpNetM) else []
    print(f"model: {args.model}")
    print(f"parameters: {summary.parameter_count}")
    print(f"flops at {args.input[1]}x{args.input[0]} (macs): {summary.flops}")
    print(f"serialized size (bytes): {summary.serialized_size}")
    for stage, rf in summary.receptive_field_per_stage.items():
        print(f"receptive field {stage}: {rf}")
    for row in audit:
        width = "-" if row.out_channels is None else row.out_channels
        print(f"  layer {row.index:2d}  {row.kind:8s} {row.mode:28s} {width}")
    if args.out:
        out = _prepare_out(args, "inspect")
        _write_json(out / "complexity.json", summary)
        _write_csv(
            out / "complexity.csv",
            ["parameter_count", "flops", "serialized_size", "input_height", "input_width"],
            [[summary.parameter_count, summary.flops, summary.serialized_size, *summary.input_size]],
        )
        _write_json(out / "layer_audit.json", [dataclasses.asdict(r) for r in audit])
        _write_csv(
            out / "layer_audit.csv",
            ["index", "kind", "mode", "out_channels"],
            [[r.index, r.kind, r.mode, "" if r.out_channels is None else r.out_channels] for r in audit],
        )
    return 0


def _cmd_train(args) -> int:
    out = _prepare_out(args, "train")
    samples = data_mod.load_dataset(args.dataset, _resize_policy(args))
    if not samples:
        raise ValueError(f"dataset {args.dataset} is empty")
    val_count = max(1, len(samples) // 5) if len(samples) > 1 else 0
    train_set, val_set = samples[val_count:], samples[:val_count]
    model = _build_model(args.model, None, args.seed)
    result = training.train(model, train_set, val_set, _train_config(args))
    training.save_checkpoint(model, out / "checkpoint.pt")
    training.write_training_log(result.log, out / "training_log.csv")
    print(f"trained {len(train_set)} samples, best epoch {result.best_epoch}, "
          f"best val tanimoto {result.best_val_tanimoto:.4f}")
    return 0


def _cmd_cross_validate(args) -> int:
    out = _prepare_out(args, "cross-validate")
    samples = data_mod.load_dataset(args.dataset, _resize_policy(args))
    if not samples:
        raise ValueError(f"dataset {args.dataset} is empty")
    if args.grouped:
        plan = data_mod.grouped_split(samples)
    else:
        plan = data_mod.kfold_split([s.sample_id for s in samples], args.k, seed=args.seed)
    report = evalbench.cross_validate(samples, plan, None, _train_config(args))
    _write_json(out / "crossval_report.json", report)
    _write_csv(
        out / "crossval_report.csv",
        ["fold", "mean_tanimoto_pct"],
        [[i + 1, f"{v:.4f}"] for i, v in enumerate(report.fold_values)]
        + [["mean", f"{report.mean:.4f}"], ["std", f"{report.std:.6f}"]],
    )
    if report.per_group:
        _write_csv(
            out / "per_group.csv",
            ["group", "mean_tanimoto_pct"],
            [[g, f"{v:.4f}"] for g, v in report.per_group.items()],
        )
    print(f"{report.k}-fold mean tanimoto {report.mean:.2f}% (std {report.std:.4f})")
    return 0


def _cmd_predict(args) -> int:
    out = _prepare_out(args, "predict")
    samples = data_mod.load_dataset(args.dataset, _resize_policy(args))
    if not samples:
        raise ValueError(f"dataset {args.dataset} is empty")
    model = _build_model(args.model, None, args.seed)
    training.load_checkpoint(model, args.checkpoint)
    preds = training.predict(model, np.stack([s.image for s in samples]), batch_size=args.batch)
    for sample, pred in zip(samples, preds):
        Image.fromarray((pred * 255.0).round().astype(np.uint8)).save(out / f"{sample.sample_id}.png")
    print(f"wrote {len(samples)} prediction maps to {out}")
    return 0


def _cmd_benchmark(args) -> int:
    model = _build_model(args.model, None, args.seed)
    report = evalbench.benchmark_fps(model, args.input, n_frames=args.frames, warmup=args.warmup)
    print(f"{args.model}: {report.mean_fps:.2f} fps over {report.frames} frames "
          f"at {args.input[1]}x{args.input[0]} (p50 {report.latency_ms_p50:.2f} ms)")
    if args.out:
        out = _prepare_out(args, "benchmark")
        _write_json(out / "speed_report.json", report)
    return 0


def _cmd_metrics(args) -> int:
    a = _load_gray(args.image_a)
    b = _load_gray(args.image_b)
    values = {
        "jaccard": metrics.jaccard(metrics.binarize(a), metrics.binarize(b)),
        "tanimoto": metrics.tanimoto(a, b),
        "mae": metrics.mae(a, b),
    }
    print(json.dumps(values, indent=2, sort_keys=True))
    if args.out:
        out = _prepare_out(args, "metrics")
        _write_json(out / "metrics.json", values)
    return 0


def _cmd_stability(args) -> int:
    out = _prepare_out(args, "stability")
    records = metrics.stability_experiment(
        sizes=tuple(args.sizes), object_ratios=tuple(args.ratios), perturbation=args.perturbation
    )
    _write_csv(
        out / "stability.csv",
        ["size", "ratio", "metric", "value"],
        [[r["size"], r["ratio"], r["metric"], f"{r['value']:.6f}"] for r in records],
    )
    print(f"wrote {len(records)} sweep records to {out / 'stability.csv'}")
    return 0


def _cmd_synth(args) -> int:
    out = _prepare_out(args, "synth")
    samples = data_mod.generate_synthetic_dataset(
        n=args.n,
        image_size=args.size,
        object_ratio=args.ratio,
        seed=args.seed,
        kind=args.kind,
        group_count=args.groups,
    )
    data_mod.save_dataset(samples, out)
    print(f"wrote {len(samples)} synthetic samples to {out}")
    return 0


def _add_common(parser, *, out_required: bool) -> None:
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--out", required=out_required, default=None, help="output directory")
    parser.add_argument("--config", default=None, help="JSON config file with flag defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfpnet", description="Light-weight segmentation toolchain")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="layer audit and complexity report")
    p.add_argument("--model", choices=_MODELS, default="cfpnet-m")
    p.add_argument("--input", type=_parse_size, default=(192, 256), help="input size WxH")
    _add_common(p, out_required=False)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=_MODELS, default="cfpnet-m")
    p.add_argument("--input", type=_parse_size, default=None, help="resize WxH")
    p.add_argument("--resize-mode", choices=("stretch", "letterbox"), default="stretch")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=0.001)
    _add_common(p, out_required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("cross-validate", help="k-fold or grouped cross-validation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=_MODELS, default="cfpnet-m")
    p.add_argument("--input", type=_parse_size, default=None, help="resize WxH")
    p.add_argument("--resize-mode", choices=("stretch", "letterbox"), default="stretch")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--grouped", action="store_true", help="one fold per group label")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=0.001)
    _add_common(p, out_required=True)
    p.set_defaults(func=_cmd_cross_validate)

    p = sub.add_parser("predict", help="write sigmoid maps for a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model", choices=_MODELS, default="cfpnet-m")
    p.add_argument("--input", type=_parse_size, default=None, help="resize WxH")
    p.add_argument("--resize-mode", choices=("stretch", "letterbox"), default="stretch")
    p.add_argument("--batch", type=int, default=4)
    _add_common(p, out_required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("benchmark", help="sequential single-image FPS benchmark")
    p.add_argument("--model", choices=_MODELS, default="cfpnet-m")
    p.add_argument("--input", type=_parse_size, default=(192, 256), help="input size WxH")
    p.add_argument("--frames", type=int, default=500)
    p.add_argument("--warmup", type=int, default=20)
    _add_common(p, out_required=False)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("metrics", help="compare two 8-bit grayscale PNGs")
    p.add_argument("image_a")
    p.add_argument("image_b")
    _add_common(p, out_required=False)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("stability", help="size/ratio metric stability sweep")
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 192, 256])
    p.add_argument("--ratios", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.4, 0.5])
    p.add_argument("--perturbation", type=float, default=0.1)
    _add_common(p, out_required=True)
    p.set_defaults(func=_cmd_stability)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=_parse_size, default=(256, 256), help="image size WxH")
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--kind", choices=("blob", "curve"), default="blob")
    p.add_argument("--groups", type=int, default=0, help="assign N round-robin group labels")
    _add_common(p, out_required=True)
    p.set_defaults(func=_cmd_synth)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Pre-scan for --config and turn file entries into parser defaults."""
    path = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
    if path is None:
        return argv
    overrides = json.loads(Path(path).read_text())
    if not isinstance(overrides, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    defaults = {}
    for key, value in overrides.items():
        dest = key.replace("-", "_").replace(".", "_")
        if dest in ("input", "size") and isinstance(value, str):
            value = _parse_size(value)
        defaults[dest] = value
    for action in parser._subparsers._group_actions:  # set on every subparser
        for sub in action.choices.values():
            for sub_action in sub._actions:
                if sub_action.dest in defaults:
                    sub.set_defaults(**{sub_action.dest: defaults[sub_action.dest]})
                    sub_action.required = False
    return argv


def dispatch(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
