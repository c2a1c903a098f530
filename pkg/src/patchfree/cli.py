"""``patchfree`` command line: gen-synthetic, train, predict, evaluate, inspect.

Training writes ``<checkpoint>.json`` next to the checkpoint with the model
and split settings; ``predict`` and ``evaluate`` read it back. A ``--config``
JSON file may supply any long flag (dashes as underscores); explicit flags
win over both.
"""
import argparse
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as D
from .checkpoint import load_into
from .errors import ConfigError, DomainError, FormatError, NumericError, ShapeError, UsageError
from .freenet import (DEFAULT_PATCH_SIZE, FreeNetConfig, PatchClassifier, build, count_flops,
                      count_flops_patch_based, count_params, padded_size, predict_labels, summary)
from .metrics import ConfusionMatrix, report_csv, report_text
from .trainer import OptimizerState, train

# class id -> RGB; id 0 (unlabeled) is black, ids above 16 wrap around
PALETTE = np.array([
    (0, 0, 0),
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
], dtype=np.uint8)

DEFAULTS = dict(beta=1.0, reduction_ratio=16, alpha=20, iters=1000, lr=1e-4, momentum=0.9,
                weight_decay=1e-4, seed=0, per_class_train=20, normalize=True, threads=1)


def render_ppm(labels, path):
    """Binary P6 image, one palette colour per class id."""
    labels = np.asarray(labels)
    h, w = labels.shape
    idx = np.where(labels == 0, 0, (labels.astype(np.int64) - 1) % 16 + 1)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(PALETTE[idx].tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        magic, dims, depth = (fh.readline() for _ in range(3))
        if magic.strip() != b"P6" or depth.strip() != b"255":
            raise FormatError(f"{path}: not an 8-bit P6 image")
        w, h = map(int, dims.split())
        return np.frombuffer(fh.read(), np.uint8).reshape(h, w, 3)


def sidecar_path(checkpoint):
    return str(checkpoint) + ".json"


def _resolve(args, *sources):
    """Fill ``None`` flags from the sources in order, then from DEFAULTS."""
    for key in DEFAULTS:
        if getattr(args, key, "absent") is None:
            for src in sources + (DEFAULTS,):
                if src.get(key) is not None:
                    setattr(args, key, src[key])
                    break
    return args


def _load_config(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _threads(n):
    return threadpool_limits(limits=int(n))


def _load_scene(prefix, normalize):
    paths = D.scene_paths(prefix)
    for key in ("hdr", "cube", "labels"):
        if not os.path.exists(paths[key]):
            raise UsageError(f"scene file not found: {paths[key]}")
    scene = D.load_scene_prefix(prefix)
    if normalize:
        scene.cube = D.normalize_bands(scene.cube)
    return scene


def _split(scene, per_class_train, seed):
    if scene.train_mask is not None and scene.test_mask is not None:
        return scene.train_mask, scene.test_mask
    return D.random_split(scene.labels, per_class_train, seed)


def cmd_gen_synthetic(args):
    if args.classes < 2:
        raise UsageError(f"--classes must be at least 2, got {args.classes}")
    if args.bands < args.classes:
        raise UsageError(f"--bands ({args.bands}) must be >= --classes ({args.classes})")
    scene = D.generate_synthetic_scene(args.height, args.width, args.bands, args.classes,
                                       args.noise, args.seed)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    if not os.access(out_dir, os.W_OK):
        raise UsageError(f"cannot write to {out_dir}")
    D.save_scene(scene, args.out)
    print(f"wrote {args.out}.hdr ({scene.bands} bands, {scene.height}x{scene.width})")
    for k, n in scene.class_counts().items():
        print(f"class {k}: {n}")
    return 0


def cmd_train(args):
    _resolve(args, _load_config(args.config))
    scene = _load_scene(args.scene, args.normalize)
    if args.bands is not None and args.bands != scene.bands:
        raise UsageError(f"--bands {args.bands} but scene has {scene.bands} bands")
    if args.classes is not None and args.classes < scene.num_classes:
        raise UsageError(f"--classes {args.classes} but scene has {scene.num_classes} classes")
    classes = args.classes or scene.num_classes
    scene.train_mask, scene.test_mask = _split(scene, args.per_class_train, args.seed)
    cfg = FreeNetConfig(scene.bands, classes, args.beta, args.reduction_ratio)
    model = build(cfg, args.seed)
    opt = OptimizerState(base_lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
                         max_iter=args.iters)
    with _threads(args.threads):
        report = train(model, scene, alpha=args.alpha, optimizer=opt, seed=args.seed,
                       checkpoint_path=args.checkpoint, log_file=args.log, echo=not args.quiet)
    side = dict(bands=scene.bands, classes=classes, beta=args.beta,
                reduction_ratio=args.reduction_ratio, alpha=args.alpha, iters=args.iters,
                lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay, seed=args.seed,
                per_class_train=args.per_class_train, normalize=args.normalize)
    with open(sidecar_path(args.checkpoint), "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=2)
    if report.losses:
        print(f"final loss {report.losses[-1]:.6f}")
    return 0


def _model_from_checkpoint(checkpoint, args):
    if not os.path.exists(checkpoint):
        raise UsageError(f"checkpoint not found: {checkpoint}")
    side = _load_config(sidecar_path(checkpoint)) if os.path.exists(sidecar_path(checkpoint)) else {}
    _resolve(args, _load_config(args.config), side)
    bands = side.get("bands")
    classes = side.get("classes")
    if bands is None or classes is None:
        raise UsageError(f"{sidecar_path(checkpoint)} is missing; cannot rebuild the model")
    model = build(FreeNetConfig(bands, classes, args.beta, args.reduction_ratio))
    return load_into(model, checkpoint), side


def cmd_predict(args):
    model, _ = _model_from_checkpoint(args.checkpoint, args)
    scene = _load_scene(args.scene, args.normalize)
    if scene.bands != model.config.in_bands:
        raise ShapeError(f"scene has {scene.bands} bands, checkpoint expects {model.config.in_bands}")
    with _threads(args.threads):
        pred = predict_labels(model, scene.cube)
    pred.astype("<u2").tofile(args.out + ".labels")
    render_ppm(pred, args.out + ".ppm")
    print(f"wrote {args.out}.labels and {args.out}.ppm ({scene.height}x{scene.width})")
    return 0


def cmd_evaluate(args):
    side = _load_config(sidecar_path(args.checkpoint)) if args.checkpoint else {}
    _resolve(args, _load_config(args.config), side)
    scene = D.load_scene_prefix(args.scene) if os.path.exists(args.scene + ".hdr") else None
    if scene is None:
        raise UsageError(f"scene file not found: {args.scene}.hdr")
    if not os.path.exists(args.prediction):
        raise UsageError(f"prediction raster not found: {args.prediction}")
    expected = 2 * scene.height * scene.width
    if os.path.getsize(args.prediction) != expected:
        raise ShapeError(f"{args.prediction} is {os.path.getsize(args.prediction)} bytes, expected "
                         f"{expected} for a {scene.height}x{scene.width} scene")
    pred = np.fromfile(args.prediction, "<u2").reshape(scene.labels.shape)
    if args.all_labeled:
        mask = scene.labels > 0
    else:
        _, mask = _split(scene, args.per_class_train, args.seed)
    if not mask.any():
        raise DomainError("test mask is empty; nothing to evaluate")
    classes = max(scene.num_classes, int(side.get("classes", 0)))
    cm = ConfusionMatrix(classes).accumulate(pred, scene.labels, mask)
    names = scene.class_names or None
    print(report_text(cm, names))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report_csv(cm, names))
    return 0


def cmd_inspect(args):
    _resolve(args, _load_config(args.config))
    cfg = FreeNetConfig(args.bands, args.classes, args.beta, args.reduction_ratio)
    model = build(cfg)
    h, w = padded_size(args.height), padded_size(args.width)
    print(summary(model, h, w))
    flops = count_flops(model, h, w)
    patch = count_flops_patch_based(PatchClassifier(cfg), args.patch_size, h * w)
    print(f"params {count_params(model):,} ({count_params(model) / 1e6:.3f} M)")
    print(f"FLOPs at {h}x{w}: {flops / 1e9:.2f} G")
    print(f"patch-based ({args.patch_size}x{args.patch_size}) FLOPs: {patch / 1e9:.2f} G")
    print(f"theoretical speedup: {patch / flops:.1f}x")
    return 0


def _shared(p):
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("--beta", type=float)
    p.add_argument("--reduction-ratio", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="BLAS threads (default 1 for bit-determinism)")
    p.add_argument("--per-class-train", type=int)
    p.add_argument("--no-normalize", dest="normalize", action="store_const", const=False)


def build_parser():
    parser = argparse.ArgumentParser(prog="patchfree", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic scene")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=8)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train FreeNet on a scene")
    p.add_argument("--scene", required=True, help="scene prefix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", help="also write the training log here")
    p.add_argument("--alpha", type=int)
    p.add_argument("--iters", "--max-iter", dest="iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--bands", type=int, help="expected band count (checked against the scene)")
    p.add_argument("--classes", type=int, help="model classes (default: from the scene)")
    p.add_argument("--quiet", action="store_true", help="no per-iteration log on stdout")
    _shared(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify every pixel of a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="prefix for .labels and .ppm")
    _shared(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction raster on the test split")
    p.add_argument("--scene", required=True)
    p.add_argument("--prediction", required=True, help="raw uint16 label raster")
    p.add_argument("--checkpoint", help="read split settings from its sidecar")
    p.add_argument("--csv", help="write the metrics as CSV")
    p.add_argument("--all-labeled", action="store_true", help="score every labeled pixel")
    _shared(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="per-layer shapes, params and FLOPs")
    p.add_argument("--bands", type=int, default=144)
    p.add_argument("--classes", type=int, default=15)
    p.add_argument("--height", type=int, default=349)
    p.add_argument("--width", type=int, default=1905)
    p.add_argument("--patch-size", type=int, default=DEFAULT_PATCH_SIZE)
    _shared(p)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DomainError, FormatError, ShapeError, NumericError,
            OSError) as exc:
        print(f"patchfree {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
