"""``vseg`` command-line interface: preprocess, train, predict, evaluate, roc."""
from __future__ import annotations

import argparse
import csv
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, kernels
from ._accel import apply_thread_cap
from .config import OPTIONS, resolve
from .dataset import load_split, sample_patches, train_val_split
from .errors import IngestionError, TrainingDivergedError, VsegError
from .imageio import read_image, read_kv, write_kv, write_png, write_vmap, to_uint8
from .inference import binarize, predict_image
from .metrics import mean_report, report, report_from_pixels, write_metrics_csv, write_roc_csv
from .network import TrainConfig, build_network, load_checkpoint, save_checkpoint, train
from .preprocess import (NormalizationStats, PreprocessParams, extract_green, manifest_items,
                         params_dict, preprocess_pipeline, to_network_input)
from .tensor import make_rng

log = logging.getLogger("vseg")

STATS_FILE = "stats.txt"
MANIFEST_FILE = "run_manifest.txt"


# ---------------------------------------------------------------- helpers

def _split_dirs(path, wanted):
    """Resolve ``path`` to ``[(split_name, split_dir)]``.

    ``path`` is either a DRIVE root containing split folders or a single split
    folder (one that holds ``images/`` directly).
    """
    path = Path(path)
    if not path.is_dir():
        raise IngestionError(f"missing input directory: {path}")
    if (path / "images").is_dir():
        return [(path.name, path)]
    found = [(s, path / s) for s in wanted if (path / s / "images").is_dir()]
    if not found:
        raise IngestionError(f"no DRIVE split ({', '.join(wanted)}) with an images/ folder under {path}")
    return found


def _load(path, wanted):
    out = []
    for name, d in _split_dirs(path, wanted):
        recs = load_split(d.parent, d.name)
        for r in recs:
            r.split = name
        out.append((name, recs))
    return out


def _prep_params(cfg) -> PreprocessParams:
    return PreprocessParams(clahe_tiles=tuple(cfg["clahe_tiles"]), clahe_clip=cfg["clahe_clip"],
                            gamma=cfg["gamma"], stats_mode=cfg["stats_mode"])


def _params_from_meta(meta) -> PreprocessParams:
    p = meta["preprocess"]
    return PreprocessParams(tuple(p["clahe_tiles"]), p["clahe_clip"], p["gamma"], p["stats_mode"])


def _stats_from_meta(meta):
    s = meta.get("stats")
    return NormalizationStats(s["mean"], s["std"]) if s else None


def write_manifest(out_dir, command, cfg, extra=None):
    items = {"command": command, "vseg_version": __version__, "python": platform.python_version(),
             "numpy": np.__version__, "kernel_backend": kernels.BACKEND}
    try:
        import numba
        items["numba"] = numba.__version__
    except ImportError:
        pass
    for k, v in cfg.items():
        items[f"config.{k}"] = "x".join(map(str, v)) if k == "clahe_tiles" else v
    items.update(extra or {})
    write_kv(Path(out_dir) / MANIFEST_FILE, items)


def _require_files(paths):
    missing = [str(p) for p in paths if not Path(p).is_file() or Path(p).stat().st_size == 0]
    if missing:
        raise VsegError(f"expected outputs were not written: {', '.join(missing)}")


# ---------------------------------------------------------------- commands

def cmd_preprocess(in_dir, out_dir, cfg) -> int:
    out_dir = Path(out_dir)
    params = _prep_params(cfg)
    splits = _load(in_dir, ("training", "test"))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, "preprocess", cfg, {"input": in_dir})
    fit = dict(splits).get("training", splits[0][1])
    stats = NormalizationStats.from_data([extract_green(r.image) for r in fit])
    written = []
    for name, recs in splits:
        for r in recs:
            pre = preprocess_pipeline(r.image, stats, params)
            png = out_dir / name / f"{r.id}.png"
            write_png(png, to_uint8(pre.values))
            write_kv(out_dir / name / f"{r.id}.manifest.txt", manifest_items(pre.manifest))
            written.append(png)
    _require_files(written)
    # written last so its presence marks a complete preprocessing run
    write_kv(out_dir / STATS_FILE, {"mean": repr(stats.mean), "std": repr(stats.std),
                                    "fit_split": fit[0].split, "fit_images": len(fit),
                                    **{k: ("x".join(map(str, v)) if isinstance(v, list) else v)
                                       for k, v in params_dict(params).items()}})
    print(f"preprocessed {len(written)} images into {out_dir}")
    return 0


def cmd_train(cfg) -> int:
    data, prep, out = cfg.get("data"), cfg.get("prep"), cfg.get("out")
    if not data or not prep or not out:
        raise VsegError("train needs --data, --prep and --out")
    prep, out = Path(prep), Path(out)
    stats_path = prep / STATS_FILE
    if not stats_path.is_file():
        raise VsegError(f"missing prerequisite: normalization stats file {stats_path} "
                        f"(run `vseg preprocess` first)")
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "train", cfg, {"data": data, "prep": prep})
    s = read_kv(stats_path)
    stats = NormalizationStats(float(s["mean"]), float(s["std"]))
    name, recs = _load(data, ("training",))[0]
    for r in recs:
        png = prep / name / f"{r.id}.png"
        if not png.is_file():
            raise VsegError(f"missing prerequisite: preprocessed image {png}")
        r.prep = read_image(png).astype(np.float32) / np.float32(255.0)
    tc = TrainConfig(lr=cfg["lr"], momentum=cfg["momentum"], epochs=cfg["epochs"],
                     batch_size=cfg["batch_size"], dropout=cfg["dropout"], rho=cfg["rho"],
                     seed=cfg["seed"], patches=cfg["patches"], val_fraction=cfg["val_fraction"])
    rng = make_rng(cfg["seed"])
    patches = sample_patches(recs, tc.patches, rng, use_fov=cfg["use_fov"])
    train_set, val_set = train_val_split(patches, tc.val_fraction, rng)
    net = build_network(tc.seed, dropout=tc.dropout)
    loss_csv = out / "loss.csv"
    ckpt = out / "model.vseg"

    def write_losses(epoch, hist):
        with open(loss_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "train_loss", "val_loss", "train_loss_per_pixel"))
            for e, (tl, vl) in enumerate(zip(hist.train_loss, hist.val_loss), 1):
                w.writerow((e, repr(tl), "" if vl is None else repr(vl), repr(tl / 784.0)))

    try:
        hist = train(net, train_set, val_set, tc, dump_dir=out / "diverged", on_epoch=write_losses)
    except TrainingDivergedError as exc:
        print(f"error: {exc}; state dumped to {exc.dump_path}", file=sys.stderr)
        return 3
    prep_params = PreprocessParams(tuple(int(v) for v in s["clahe_tiles"].split("x")),
                                   float(s["clahe_clip"]), float(s["gamma"]), s["stats_mode"])
    meta = {"format": "vseg-checkpoint", "vseg_version": __version__,
            "stats": {"mean": stats.mean, "std": stats.std},
            "preprocess": params_dict(prep_params), "config": asdict(tc),
            "history": hist.as_dict(), "epoch": tc.epochs, "seed": tc.seed,
            "train_patches": len(train_set), "val_patches": len(val_set)}
    save_checkpoint(net, ckpt, meta)
    _require_files([ckpt, loss_csv, out / MANIFEST_FILE])
    load_checkpoint(ckpt)
    print(f"trained {tc.epochs} epochs; checkpoint {ckpt}")
    return 0


def _network_input(net, rgb):
    meta = net.metadata
    pre = preprocess_pipeline(rgb, _stats_from_meta(meta), _params_from_meta(meta))
    return to_network_input(pre)


def cmd_predict(checkpoint, image, out, cfg, fov_path=None, raw=False) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "predict", cfg, {"checkpoint": checkpoint, "image": image})
    net = load_checkpoint(checkpoint)
    rgb = read_image(image)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)
    fov = None
    if fov_path:
        fov = (read_image(fov_path) >= 128).astype(np.uint8)
        if fov.ndim == 3:
            fov = fov.max(axis=2)
    pmap = predict_image(net, _network_input(net, rgb), cfg["stride"], fov, cfg["aggregate"])
    seg = binarize(pmap, cfg["threshold"])
    stem = Path(image).stem
    files = [out / f"{stem}_prob.png", out / f"{stem}_seg.png"]
    write_png(files[0], to_uint8(pmap.prob))
    write_png(files[1], seg.mask * np.uint8(255))
    if raw:
        files.append(out / f"{stem}_prob.vmap")
        write_vmap(files[-1], pmap.prob)
    _require_files(files)
    print(f"wrote {', '.join(str(f) for f in files)}")
    return 0


def _evaluate(checkpoint, test_dir, cfg, save_maps_to=None):
    net = load_checkpoint(checkpoint)
    name, recs = _load(test_dir, ("test",))[0]
    per_image, all_scores, all_labels = [], [], []
    for r in recs:
        pmap = predict_image(net, _network_input(net, r.image), cfg["stride"], r.fov, cfg["aggregate"])
        per_image.append(report(f"{name}/{r.id}", pmap.prob, r.vessel, r.fov, cfg["threshold"]))
        keep = r.fov.astype(bool)
        all_scores.append(pmap.prob[keep])
        all_labels.append(r.vessel[keep])
        if save_maps_to is not None:
            write_png(Path(save_maps_to) / f"{r.id}_prob.png", to_uint8(pmap.prob))
            write_png(Path(save_maps_to) / f"{r.id}_seg.png",
                      binarize(pmap, cfg["threshold"]).mask * np.uint8(255))
    pooled = report_from_pixels("pooled", np.concatenate(all_scores), np.concatenate(all_labels),
                                cfg["threshold"], keep_roc=True)
    return per_image, pooled


def cmd_evaluate(checkpoint, test_dir, out, cfg, save_maps=False) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "evaluate", cfg, {"checkpoint": checkpoint, "test_dir": test_dir})
    per_image, pooled = _evaluate(checkpoint, test_dir, cfg, out / "maps" if save_maps else None)
    files = [out / "metrics.csv", out / "roc.csv"]
    rows = per_image + [pooled]
    headline = pooled
    if cfg["summary"] == "per_image":
        headline = mean_report("per_image_mean", per_image)
        rows.append(headline)
    write_metrics_csv(files[0], rows)
    if pooled.roc is None:
        raise VsegError("pooled test pixels contain a single class; ROC is undefined")
    write_roc_csv(files[1], pooled.roc, cfg["roc_max_points"])
    _require_files(files)
    print(f"{headline.name}: accuracy={headline.accuracy:.4f} auc={headline.auc} "
          f"precision={headline.precision} sensitivity={headline.sensitivity} "
          f"specificity={headline.specificity}")
    return 0


def cmd_roc(checkpoint, test_dir, out, cfg) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "roc", cfg, {"checkpoint": checkpoint, "test_dir": test_dir})
    _, pooled = _evaluate(checkpoint, test_dir, cfg)
    if pooled.roc is None:
        raise VsegError("pooled test pixels contain a single class; ROC is undefined")
    write_roc_csv(out / "roc.csv", pooled.roc, cfg["roc_max_points"])
    _require_files([out / "roc.csv"])
    print(f"pooled AUC {pooled.auc:.4f}; ROC written to {out / 'roc.csv'}")
    return 0


# ---------------------------------------------------------------- argparse

def _add_config_flags(p):
    p.add_argument("--config", help="flat key=value config file (overrides defaults)")
    for key, opt in OPTIONS.items():
        flag = "--" + key.replace("_", "-")
        default = "x".join(map(str, opt.default)) if key == "clahe_tiles" else opt.default
        note = " [invented default]" if opt.invented else ""
        p.add_argument(flag, dest=key, default=None, metavar=key.upper(),
                       help=f"{opt.help} (default: {default}){note}")


def build_parser():
    ap = argparse.ArgumentParser(prog="vseg", description=__doc__)
    ap.add_argument("--version", action="version", version=f"vseg {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="preprocess a DRIVE tree and compute normalization stats")
    p.add_argument("input", help="DRIVE root or a single split directory")
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("train", help="train a network on preprocessed DRIVE training images")
    p.add_argument("--data", help="DRIVE root or training split directory")
    p.add_argument("--prep", help="output directory of `vseg preprocess`")
    p.add_argument("--out", help="run directory for checkpoint, loss CSV and manifest")
    _add_config_flags(p)

    p = sub.add_parser("predict", help="segment a single fundus image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    p.add_argument("--fov", help="optional field-of-view mask image")
    p.add_argument("--raw", action="store_true", help="also write the float map as a .vmap file")
    _add_config_flags(p)

    for name, text in (("evaluate", "per-image and pooled metrics on a DRIVE test split"),
                       ("roc", "pooled ROC curve on a DRIVE test split")):
        p = sub.add_parser(name, help=text)
        p.add_argument("checkpoint")
        p.add_argument("test_dir", help="DRIVE root or test split directory")
        p.add_argument("--out", required=True)
        if name == "evaluate":
            p.add_argument("--save-maps", action="store_true", help="also write per-image prediction PNGs")
        _add_config_flags(p)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    apply_thread_cap()
    flags = {k: getattr(args, k) for k in OPTIONS if getattr(args, k, None) is not None}
    for k in ("data", "prep", "out"):
        if getattr(args, k, None) is not None:
            flags[k] = getattr(args, k)
    try:
        cfg = resolve(args.config, flags)
        if args.command == "preprocess":
            return cmd_preprocess(args.input, cfg["out"], cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "predict":
            return cmd_predict(args.checkpoint, args.image, cfg["out"], cfg, args.fov, args.raw)
        if args.command == "evaluate":
            return cmd_evaluate(args.checkpoint, args.test_dir, cfg["out"], cfg, args.save_maps)
        return cmd_roc(args.checkpoint, args.test_dir, cfg["out"], cfg)
    except VsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
