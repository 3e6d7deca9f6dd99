"""Command-line entry points.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 validation error,
5 numeric failure. Every command is deterministic for a fixed --seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .benchmark import (
    BenchmarkConfig,
    benchmark_classes,
    color_features,
    run_ablation_depth,
    run_ablation_embed_dim,
    run_benchmark,
    run_fold,
)
from .data import SceneSpec, generate, load_dataset, save_dataset
from .embeddings import LabelSet, load_table, save_table, vocab_from_features
from .evaluation import (
    ConfusionMatrix,
    chance_confusion,
    fb_iou,
    format_ablation_table,
    format_fold_table,
    miou,
    pixacc,
    write_ablation_csv,
    write_fold_report_csv,
)
from .model import (
    EncoderConfig,
    RegularizerConfig,
    init_parameters,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .render import (
    colorize_map,
    fit_to_model,
    label_color,
    load_image,
    map_to_size,
    save_png,
)
from .tensor import NumericError
from .training import TrainConfig, parse_train_config, train, write_history

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_NUMERIC = 5

DEPTH_CHOICES = (0, 1, 2, 4)


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _require_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"no such directory: {p}")
    return p


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    all_classes = benchmark_classes()
    if args.classes:
        wanted = [name.strip() for name in args.classes.split(",")]
        by_name = {c.name: c for c in all_classes}
        unknown = [n for n in wanted if n not in by_name]
        if unknown:
            raise ValueError(f"unknown class names: {', '.join(unknown)}")
        classes = tuple(by_name[n] for n in wanted)
    else:
        classes = all_classes
    spec = SceneSpec(
        height=args.size, width=args.size, classes=classes,
        shapes_per_image=(1, 3), seed=args.seed,
    )
    samples = generate(spec, args.count)
    save_dataset(samples, args.out)
    print(f"wrote {len(samples)} scenes ({args.size}x{args.size}, "
          f"{len(classes)} classes) to {args.out}")
    return EXIT_OK


def cmd_make_vocab(args) -> int:
    table = vocab_from_features(color_features(), args.dim, args.seed,
                                synonym_noise=args.sigma)
    save_table(table, args.out)
    print(f"wrote {len(table)} entries (dimension {args.dim}) to {args.out}")
    return EXIT_OK


def _training_config(args) -> TrainConfig:
    if args.config:
        cfg = parse_train_config(_require_file(args.config))
    else:
        cfg = TrainConfig(base_lr=0.005, max_steps=300, batch_size=2)
    overrides = {}
    if args.steps is not None:
        overrides["max_steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.lr is not None:
        overrides["base_lr"] = args.lr
    return replace(cfg, **overrides) if overrides else cfg


def cmd_train(args) -> int:
    table = load_table(_require_file(args.table))
    dataset = load_dataset(_require_dir(args.data))
    cfg = _training_config(args)
    h, w = dataset[0].image.shape[:2]
    model = init_parameters(
        EncoderConfig(height=h, width=w, embed_dim=table.dimension),
        RegularizerConfig(block_kind=args.block, depth=args.depth),
        seed=cfg.seed,
    )
    model, history = train(model, table, dataset, cfg)
    save_checkpoint(model, args.out)
    if args.history:
        write_history(history, args.history)
    final = history[-1].loss if history else float("nan")
    print(f"trained {cfg.max_steps} steps on {len(dataset)} scenes; "
          f"final loss {final:.6f}; checkpoint at {args.out}")
    return EXIT_OK


def _dataset_confusion(model, table, dataset) -> tuple[ConfusionMatrix, LabelSet]:
    labels = dataset[0].label_set
    cm = ConfusionMatrix(len(labels))
    for sample in dataset:
        if sample.label_set.labels != labels.labels:
            raise ValueError("dataset mixes label sets; cannot evaluate")
        out = predict(model, sample.image, labels, table)
        cm.add(sample.target, out.label_map)
    return cm, labels


def cmd_eval(args) -> int:
    if args.fold is not None:
        return _eval_zero_shot(args)
    if not (args.checkpoint and args.data and args.table):
        raise ValueError("eval needs either --fold or all of "
                         "--checkpoint/--table/--data")
    model = load_checkpoint(_require_file(args.checkpoint))
    table = load_table(_require_file(args.table))
    dataset = load_dataset(_require_dir(args.data))
    cm, labels = _dataset_confusion(model, table, dataset)
    mean, _ = miou(cm)
    chance, _ = miou(chance_confusion(cm, labels.other_index or 0))
    foreground = [i for i in range(len(labels)) if i != (labels.other_index or 0)]
    rows = [
        ("pixacc", pixacc(cm)),
        ("miou", mean),
        ("fb_iou", fb_iou(cm, foreground)),
        ("chance_miou", chance),
    ]
    if args.out:
        import csv as _csv
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["metric", "value"])
            for name, value in rows:
                writer.writerow([name, repr(value)])
    for name, value in rows:
        print(f"{name} = {value:.6f}")
    return EXIT_OK


def _eval_zero_shot(args) -> int:
    cfg = BenchmarkConfig(seed=args.seed if args.seed is not None else 0)
    if args.fold == "all":
        results = run_benchmark(cfg)
    else:
        index = int(args.fold)
        if not 0 <= index < cfg.fold_count:
            raise ValueError(f"fold must be 0..{cfg.fold_count - 1} or 'all'")
        results = [run_fold(cfg, index)]
    if args.out:
        write_fold_report_csv(results, args.out)
    print(format_fold_table(results))
    for r in results:
        print(f"fold {r.fold_index}: chance {r.chance_miou:.4f}, "
              f"ratio {r.miou / r.chance_miou:.2f}x")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = BenchmarkConfig(
        image_size=48, train_scenes=24, eval_scenes=12,
        train_steps=args.steps, batch_size=1,
        seed=args.seed if args.seed is not None else 0,
        embed_dim=16,
    )
    if args.what == "depth":
        rows = run_ablation_depth(cfg)
        write_ablation_csv(rows, args.out)
        print(format_ablation_table(rows))
    else:
        rows = run_ablation_embed_dim(cfg, dims=(16, 64, 128))
        import csv as _csv
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["dim", "pixacc", "miou"])
            for r in rows:
                writer.writerow([r.dim, repr(r.pixacc), repr(r.miou)])
        for r in rows:
            print(f"dim {r.dim}: pixacc {r.pixacc:.4f}, miou {r.miou:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(_require_file(args.checkpoint))
    table = load_table(_require_file(args.table))
    names = [n.strip() for n in args.labels.split(",") if n.strip()]
    labels = LabelSet.parse(names, other=args.other)
    image = load_image(_require_file(args.image))
    oh, ow = image.shape[:2]
    fitted = fit_to_model(image, model.encoder.height, model.encoder.width)
    out = predict(model, fitted, labels, table)
    label_map = map_to_size(out.label_map, oh, ow)
    save_png(colorize_map(label_map, labels), args.out)
    legend_path = Path(str(args.out) + ".legend.txt")
    lines = []
    for i, name in enumerate(labels):
        r, g, b = label_color(name)
        lines.append(f"{i}\t{name}\t#{r:02x}{g:02x}{b:02x}")
    legend_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    print(f"wrote {args.out} and {legend_path}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    if not args.checkpoint or not args.table:
        raise ValueError("serve needs --checkpoint and --table "
                         "(or LANGSEG_CHECKPOINT / LANGSEG_TABLE)")
    app = create_app(_require_file(args.checkpoint), _require_file(args.table))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="langseg",
        description="Desk-scale language-driven segmentation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=24)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", default=None,
                   help="comma-separated subset of the built-in class names")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("make-vocab", help="write a color-grounded label table")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=24)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--sigma", type=float, default=0.0,
                   help="synonym tangent noise")
    p.set_defaults(func=cmd_make_vocab)

    p = sub.add_parser("train", help="optimize a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="key = value training file")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--block", choices=("depthwise", "bottleneck"),
                   default="bottleneck")
    p.add_argument("--depth", type=int, choices=DEPTH_CHOICES, default=2)
    p.add_argument("--history", default=None, help="per-step loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint, or run a zero-shot fold")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--table", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--fold", default=None,
                   help="zero-shot fold index, or 'all'")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep block depth or embedding width")
    p.add_argument("--out", required=True)
    p.add_argument("--what", choices=("depth", "embed"), default="depth")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("predict", help="segment one image against given labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--labels", required=True,
                   help='comma-separated, e.g. "sky,road,house,plant"')
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="colored PNG path")
    p.add_argument("--other", default=None,
                   help="label to treat as background (default: literal 'other')")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--checkpoint",
                   default=os.environ.get("LANGSEG_CHECKPOINT"))
    p.add_argument("--table", default=os.environ.get("LANGSEG_TABLE"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int,
                   default=int(os.environ.get("LANGSEG_PORT", "8077")))
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
