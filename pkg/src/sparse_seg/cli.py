"""``sparse-seg`` command line: stats, split, patchify, train, eval, predict, overlay."""

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from . import data, metrics, render
from .config import ConfigError, load_config, override
from .model import build_network, load_weights, save_weights
from .train import train

log = logging.getLogger("sparse_seg")


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args):
    cfg = load_config(args.config)
    return override(
        cfg, seed=args.seed,
        paths__manifest=getattr(args, "manifest", None),
        paths__patches=getattr(args, "patches", None),
        optimizer__learning_rate=getattr(args, "learning_rate", None),
        optimizer__epochs=getattr(args, "epochs", None),
        evaluation__test_fraction=getattr(args, "test_fraction", None))


def _manifest(cfg):
    if not cfg.paths.manifest:
        raise ConfigError("no manifest given (use --manifest or paths.manifest)")
    return data.load_manifest(cfg.paths.manifest, root=cfg.paths.root)


def cmd_stats(args):
    cfg = _config(args)
    rows = data.sparsity_stats(_manifest(cfg))
    print(data.format_sparsity(rows))


def cmd_split(args):
    cfg = _config(args)
    train_m, test_m = data.split(_manifest(cfg), cfg.evaluation.test_fraction, cfg.seed)
    out = _out_dir(args.out)
    train_m.save(out / "train.csv")
    test_m.save(out / "test.csv")
    print(f"train {len(train_m)} -> {out / 'train.csv'}")
    print(f"test {len(test_m)} -> {out / 'test.csv'}")


def cmd_patchify(args):
    cfg = _config(args)
    patches = data.patchify(_manifest(cfg), cfg.patch, depth=cfg.architecture.depth)
    data.save_patches(patches, args.out)
    print(f"{len(patches)} patches -> {args.out}")


def cmd_train(args):
    cfg = _config(args)
    if cfg.paths.patches:
        images, masks = data.load_patches(cfg.paths.patches)
    else:
        patches = data.patchify(_manifest(cfg), cfg.patch, depth=cfg.architecture.depth)
        images, masks = patches.images, patches.masks
    net = build_network(cfg.architecture, seed=cfg.seed)
    model_path = Path(args.out or cfg.paths.model)
    loss_path = Path(args.loss_log or cfg.paths.loss_log)
    for p in (model_path, loss_path):
        p.parent.mkdir(parents=True, exist_ok=True)
    weights = cfg.evaluation.class_weights
    net, history = train(net, images, masks, cfg.optimizer, seed=cfg.seed,
                         class_weights=weights, loss_log=loss_path)
    save_weights(net, model_path)
    log.info("trained %d iterations in %.2f min", len(history.rows), history.minutes)
    print(f"{len(history.rows)} iterations, final loss {history.rows[-1][2]:.6g} -> {model_path}")


def cmd_eval(args):
    cfg = _config(args)
    net = load_weights(args.model)
    manifest = _manifest(cfg)
    timing = cfg.evaluation.record_timing
    result = metrics.evaluate(net, manifest, timing=timing)
    if timing and args.train_minutes is not None:
        result.report["train_minutes"] = args.train_minutes
    out = _out_dir(args.out)
    metrics.emit_report(result.report, out / Path(cfg.paths.report).name)
    metrics.write_per_image_csv(result.rows, out / Path(cfg.paths.per_image).name)
    overlay_dir = _out_dir(out / cfg.paths.overlay_dir)
    for i, pred in enumerate(result.predictions):
        image, truth = manifest.load(i)
        stem = Path(manifest.pairs[i][0]).stem
        render.save_png(overlay_dir / f"{stem}_compare.png",
                        render.overlay_comparison(image, pred, truth))
    r = result.report
    print(f"mean_iou {r['display']['mean_iou']} weighted_iou {r['display']['weighted_iou']} "
          f"over {r['images']} images -> {out}")


def cmd_predict(args):
    cfg = _config(args)
    net = load_weights(args.model)
    out = _out_dir(args.out)
    if args.image:
        items = [(Path(p).stem, data.read_image(p)) for p in args.image]
    else:
        manifest = _manifest(cfg)
        items = [(Path(img).stem, data.read_image(manifest.root / img))
                 for img, _ in manifest.pairs]
    for stem, image in items:
        pred = metrics.segment_image(net, image)
        data.write_mask(out / f"{stem}_pred.png", pred)
        render.save_png(out / f"{stem}_overlay.png", render.overlay_prediction(image, pred))
    print(f"{len(items)} predictions -> {out}")


def cmd_overlay(args):
    image = data.read_image(args.image)
    pred = data.read_mask(args.pred)
    if args.truth:
        rgb = render.overlay_comparison(image, pred, data.read_mask(args.truth))
    else:
        rgb = render.overlay_prediction(image, pred)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    render.save_png(args.out, rgb)
    print(f"-> {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sparse-seg", description="Binary segmentation of sparse damage in photos.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--version", action="version", version=f"sparse-seg {__version__}")
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)
        return p

    p = add("stats", cmd_stats, "Print background/ROI pixel statistics of a manifest.")
    p.add_argument("--manifest")

    p = add("split", cmd_split, "Write train.csv and test.csv manifests.")
    p.add_argument("--manifest")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--out", required=True, help="output directory")

    p = add("patchify", cmd_patchify, "Materialize random crop/rotation patches.")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train", cmd_train, "Train a network; writes weights and a loss CSV.")
    p.add_argument("--manifest")
    p.add_argument("--patches", help="directory written by 'patchify'")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="weights file")
    p.add_argument("--loss-log")

    p = add("eval", cmd_eval, "Evaluate on a test manifest; writes report, CSV and overlays.")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest")
    p.add_argument("--train-minutes", type=float)
    p.add_argument("--out", required=True, help="output directory")

    p = add("predict", cmd_predict, "Write predicted masks and prediction overlays.")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest")
    p.add_argument("--image", nargs="*")
    p.add_argument("--out", required=True, help="output directory")

    p = add("overlay", cmd_overlay, "Render an overlay from existing prediction/truth PNGs.")
    p.add_argument("--image", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth")
    p.add_argument("--out", required=True, help="output PNG")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # surfaced as one parsable line
        message = " ".join(str(exc).split())
        print(f"sparse-seg: error: {type(exc).__name__}: {message}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
