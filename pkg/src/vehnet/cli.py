"""Command-line surface: ``vehnet <command> [flags]``.

Every command returns exit code 0 on success. Failures print exactly one line
``vehnet: error: <command>: <ErrorType>: <message>`` to stderr and exit 1
(2 for bad usage).
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from pathlib import Path


from . import analytics, metrics, pipeline
from .classifier import POTSDAM, REJECTED, PatchClassifier, classify, train_classifier
from .formats import (read_image, read_instances, read_label_png, read_probmap, write_image,
                      write_instances, write_label_png, write_probmap, record_from_instance)
from .nncore import LrSchedule
from .objects import ExtractParams, StructuringElement, extract_objects
from .segmodel import EncoderDecoderSpec, SemanticMap, build_model, train_segmentation
from .serialization import load_classifier, load_segnet, save_classifier, save_segnet
from .synthdata import SCENE_CLASSES, SceneSpec, generate_dataset
from .tiling import predict_tile

log = logging.getLogger("vehnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _size(text: str) -> tuple[int, int]:
    h, _, w = text.lower().partition("x")
    return int(h), int(w)


def _data_dir(path: str, split: str) -> Path:
    root = Path(path)
    return root / split if (root / split).is_dir() else root


def _schedule(args) -> LrSchedule:
    return LrSchedule(args.lr, tuple(args.lr_drops), 10.0)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> None:
    spec = SceneSpec(seed=args.seed, size=args.size, vehicle_count=args.vehicles)
    pipeline.write_dataset(args.out, generate_dataset(spec, args.scenes))


def cmd_train_seg(args) -> None:
    windows, labels = pipeline.segmentation_windows(_data_dir(args.data, args.split), args.window,
                                                    args.stride)
    spec = EncoderDecoderSpec(block_channels=args.channels, convs_per_block=args.convs)
    model = build_model(spec, seed=args.seed)
    log.info("train-seg: %d windows of %dpx", len(windows), args.window)
    train_segmentation(model, windows, labels, args.epochs, args.batch, _schedule(args), seed=args.seed)
    save_segnet(args.out, model)


def cmd_train_cls(args) -> None:
    patches, labels = pipeline.classifier_samples(_data_dir(args.data, args.split), POTSDAM.names,
                                                  args.context, args.side)
    model = PatchClassifier(POTSDAM, args.side, seed=args.seed)
    log.info("train-cls: %d patches (%s)", len(patches),
             ", ".join(f"{POTSDAM.names[k]}={v}" for k, v in sorted(Counter(labels.tolist()).items())))
    report = train_classifier(model, patches, labels, args.epochs, args.batch, _schedule(args),
                              seed=args.seed)
    for w in report.warnings:
        log.warning(w)
    save_classifier(args.out, model)


def cmd_segment(args) -> None:
    model = load_segnet(args.model)
    tile = read_image(args.tile)
    sm = predict_tile(model, tile, args.window, args.stride, args.batch)
    write_probmap(args.out, sm.prob, sm.class_list)
    write_label_png(Path(args.out) / "labels.png", sm.labels(), sm.class_list)


def cmd_extract(args) -> None:
    class_list, prob = read_probmap(args.probmap)
    image = read_image(args.image)
    params = ExtractParams(args.target_class, StructuringElement.square(args.se), args.connectivity,
                           args.min_area, args.context)
    found = extract_objects(SemanticMap(class_list, prob), image, params)
    tile_id = args.tile_id or Path(args.image).stem
    write_instances(args.out, [record_from_instance(tile_id, inst) for inst, _ in found])


def cmd_classify(args) -> None:
    model = load_classifier(args.model)
    image = read_image(args.image)
    records = read_instances(args.instances)
    for r in records:
        patch = pipeline.vehicle_patch(image, r.bbox, args.context, model.input_side)
        result = classify(model, patch, args.reject)
        r.vehicle_class, r.confidence = result.label, result.confidence
    write_instances(args.out, records)


def _per_tile(records) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in records:
        counts.setdefault(r.tile_id, 0)
        if r.vehicle_class != REJECTED:
            counts[r.tile_id] += 1
    return counts


def cmd_count(args) -> None:
    pred = _per_tile(read_instances(args.instances))
    if args.gt:
        gt = _per_tile(read_instances(args.gt))
        tiles = sorted(set(gt) | set(pred))
        text = analytics.counting_report([(gt.get(t, 0), pred.get(t, 0)) for t in tiles], tiles).to_text()
    else:
        lines = ["tile_id,pred"] + [f"{t},{n}" for t, n in sorted(pred.items())]
        lines.append(f"total_pred={sum(pred.values())}")
        text = "\n".join(lines) + "\n"
    Path(args.out).write_text(text)


def cmd_heatmap(args) -> None:
    records = [r for r in read_instances(args.instances) if r.vehicle_class != REJECTED]
    if args.tile_id:
        records = [r for r in records if r.tile_id == args.tile_id]
    heat = analytics.density_heatmap([(r.centroid_x, r.centroid_y) for r in records], args.size,
                                     args.sigma, downscale=args.downscale)
    render = analytics.heatmap_to_rgb if args.color == "rgb" else analytics.heatmap_to_gray
    write_image(args.out, render(heat))


def cmd_eval(args) -> None:
    pred = read_label_png(args.pred, SCENE_CLASSES)
    gt = read_label_png(args.gt, SCENE_CLASSES)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    ignore = [c for group in args.ignore for c in group.split(",") if c]
    unknown = [c for c in ignore if c not in SCENE_CLASSES]
    if unknown:
        raise ValueError(f"unknown class in --ignore: {unknown}")
    mask = metrics.boundary_ignore_mask(gt, args.erode) if args.erode else None
    cm = metrics.confusion(pred, gt, SCENE_CLASSES, ignore_classes=ignore, ignore_mask=mask)
    Path(args.out).write_text(metrics.derive_report(cm).to_keyvalue())


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vehnet", description="Vehicle segmentation, extraction, classification and counting.")
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    s = add("synth", "generate a synthetic train/val/test dataset")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=_size, default=(192, 192), help="scene size HxW")
    s.add_argument("--vehicles", type=_ints, default=(8, 14), help="vehicle count range lo,hi")
    s.set_defaults(func=cmd_synth)

    s = add("train-seg", "train the encoder-decoder segmentation model")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, required=True)
    s.add_argument("--batch", type=int, default=10)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--lr-drops", type=_ints, default=(3, 8))
    s.add_argument("--out", required=True)
    s.add_argument("--window", type=int, default=128)
    s.add_argument("--stride", type=int, default=32)
    s.add_argument("--channels", type=_ints, default=(16, 32, 64))
    s.add_argument("--convs", type=int, default=2)
    s.add_argument("--split", default="train")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_seg)

    s = add("train-cls", "train the vehicle patch classifier")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, required=True)
    s.add_argument("--batch", type=int, required=True)
    s.add_argument("--lr", type=float, default=0.001)
    s.add_argument("--lr-drops", type=_ints, default=(30,))
    s.add_argument("--out", required=True)
    s.add_argument("--side", type=int, default=32)
    s.add_argument("--context", type=int, default=16)
    s.add_argument("--split", default="train")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_cls)

    s = add("segment", "sliding-window segmentation of one tile")
    s.add_argument("--model", required=True)
    s.add_argument("--tile", required=True)
    s.add_argument("--window", type=int, default=128)
    s.add_argument("--stride", type=int, default=64)
    s.add_argument("--out", required=True)
    s.add_argument("--batch", type=int, default=16)
    s.set_defaults(func=cmd_segment)

    s = add("extract", "vehicle instances from a probability map")
    s.add_argument("--probmap", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--min-area", type=int, default=32)
    s.add_argument("--context", type=int, default=16)
    s.add_argument("--se", type=int, default=3)
    s.add_argument("--connectivity", type=int, default=8, choices=(4, 8))
    s.add_argument("--out", required=True)
    s.add_argument("--class", dest="target_class", default="car")
    s.add_argument("--tile-id", default=None)
    s.set_defaults(func=cmd_extract)

    s = add("classify", "assign a vehicle class to each instance")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--instances", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--context", type=int, default=16)
    s.add_argument("--reject", type=float, default=None, help="reject below this confidence")
    s.set_defaults(func=cmd_classify)

    s = add("count", "per-tile vehicle counts and counting error")
    s.add_argument("--instances", required=True)
    s.add_argument("--gt", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_count)

    s = add("heatmap", "vehicle density heat map")
    s.add_argument("--instances", required=True)
    s.add_argument("--size", type=_size, required=True)
    s.add_argument("--sigma", type=float, default=48.0)
    s.add_argument("--out", required=True)
    s.add_argument("--downscale", type=int, default=1)
    s.add_argument("--color", choices=("gray", "rgb"), default="gray")
    s.add_argument("--tile-id", default=None)
    s.set_defaults(func=cmd_heatmap)

    s = add("eval", "pixel metrics of a predicted label map")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--ignore", action="append", default=[])
    s.add_argument("--erode", type=int, default=3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)
    return p


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"vehnet: error: usage: {_one_line(exc)}", file=sys.stderr)
        return 2
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        print(f"vehnet: error: {args.command}: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
