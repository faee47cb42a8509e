"""Command-line entry point: ``callosity <subcommand> ...``.

Every subcommand writes ``run.json`` (resolved arguments, seed, outputs and
headline results) into its output directory; ``callosity --replay run.json``
re-executes it. Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CallosityError, ConfigError, DataError, NumericError

log = logging.getLogger("callosity")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".ppm", ".pgm"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- data plumbing ----------------------------------------------------------------

def load_data(source: str, part: str = "train", image_root=None, shape=None):
    """``(images [n,h,w,c], labels, classes)`` from an MNIST IDX directory, an
    ``.npz`` with ``images``/``labels`` arrays, or a ``filename,label`` manifest."""
    from .datasets import load_manifest, load_mnist_dir

    path = Path(source)
    if path.is_dir():
        ds = load_mnist_dir(path, part, dtype=np.float64)
        return ds.images, ds.labels, ds.classes
    if path.suffix == ".npz":
        if not path.exists():
            raise DataError(f"{path}: file not found")
        with np.load(path) as z:
            if "images" not in z or "labels" not in z:
                raise DataError(f"{path}: expected arrays 'images' and 'labels'")
            images = z["images"].astype(np.float64)
            labels = z["labels"].astype(np.int64)
        if images.ndim == 3:
            images = images[..., None]
        classes = tuple(str(c) for c in range(int(labels.max()) + 1)) if len(labels) else ()
        return images, labels, classes
    if path.suffix == ".csv":
        ds = load_manifest(path, image_root or path.parent)
        size = None if shape is None else shape[0]
        gray = shape is not None and shape[2] == 1
        images = ds.load_images(grayscale=gray, size=size)
        if images.ndim == 3:
            images = images[..., None]
        return images, ds.labels, ds.classes
    raise DataError(f"{source}: expected an IDX directory, a .npz file or a .csv manifest")


def load_single_image(path, shape):
    from .imaging import read_image, resize, to_grayscale

    img = read_image(path)
    if img.shape[:2] != shape[:2]:
        img = resize(img, shape[0], shape[1])
    if shape[2] == 1:
        img = to_grayscale(img)[..., None]
    return img


def resolve_checkpoint(path):
    """Checkpoint file and its ``network.json`` sidecar (a run directory also works)."""
    from .layers import load_network_spec

    p = Path(path)
    ckpt = p / "model.ckpt" if p.is_dir() else p
    if not ckpt.exists():
        raise DataError(f"{ckpt}: checkpoint not found")
    spec_path = ckpt.parent / "network.json"
    if not spec_path.exists():
        raise DataError(f"{spec_path}: network config sidecar not found")
    return ckpt, load_network_spec(spec_path)


def write_manifest(out_dir: Path, args, outputs, results):
    record = {
        "tool": "callosity",
        "version": __version__,
        "command": args.command,
        "seed": args.seed,
        "threads": args.threads,
        "args": {k: v for k, v in vars(args).items() if k not in ("func", "replay")},
        "outputs": sorted(str(Path(o).name) for o in outputs),
        "results": results,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = out_dir / "run.json"
    path.write_text(json.dumps(record, indent=2, default=str) + "\n")
    return path


# -- subcommands ----------------------------------------------------------------------

def cmd_preprocess(args):
    from .imaging import preprocess, read_image, write_image, write_synthetic_corpus

    in_dir, out_dir = Path(args.input), Path(args.output)
    if args.synthetic:
        write_synthetic_corpus(in_dir, args.synthetic, args.seed)
    if not in_dir.is_dir():
        raise DataError(f"{in_dir}: input directory not found")
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    counts = {"success": 0, "fallback": 0, "failed": 0}
    outputs = []
    for p in files:
        try:
            img = read_image(p)
        except DataError as e:
            outcome_diag = {"status": "failed", "error": str(e)}
            counts["failed"] += 1
        else:
            outcome = preprocess(img, args.out_size, flip=args.flip)
            outcome_diag = outcome.diagnostics()
            counts[outcome.status] += 1
            if outcome.passport is not None:
                write_image(out_dir / f"{p.stem}.png", outcome.passport.image)
                write_image(out_dir / f"{p.stem}_mask.pgm", outcome.passport.mask.astype(float))
                outputs += [out_dir / f"{p.stem}.png", out_dir / f"{p.stem}_mask.pgm"]
        side = out_dir / f"{p.stem}.json"
        side.write_text(json.dumps({"source": p.name, **outcome_diag}, indent=2) + "\n")
        outputs.append(side)
    summary = {"processed": len(files), **counts}
    print(f"processed {len(files)}: {counts['success']} success, {counts['fallback']} fallback, "
          f"{counts['failed']} failed")
    write_manifest(out_dir, args, outputs, summary)
    if args.strict and counts["failed"]:
        raise DataError(f"{counts['failed']} image(s) failed preprocessing (--strict)")
    return 0


def cmd_train(args):
    from .layers import Network, load_network_spec, save_checkpoint, save_network_spec
    from .optimize import TrainConfig, train_loop

    spec = load_network_spec(args.net)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(lr=args.lr, decay_rate=args.decay_rate, decay_steps=args.decay_steps,
                      batch_size=args.batch_size, max_steps=args.max_steps, optimizer=args.optimizer,
                      weight_decay=args.weight_decay, seed=args.seed, eval_every=args.eval_every,
                      checkpoint_every=args.checkpoint_every,
                      checkpoint_path=str(out / "model.ckpt"))
    images, labels, _ = load_data(args.data, "train", args.image_root, spec.input_shape)
    if images.shape[1:] != spec.input_shape:
        raise DataError(f"data shape {images.shape[1:]} does not match network input {spec.input_shape}")
    val = None
    if args.val_data:
        vx, vy, _ = load_data(args.val_data, "test", args.image_root, spec.input_shape)
        val = (vx.astype(args.dtype), vy)
    net = Network(spec, dtype=args.dtype, seed=args.seed)
    save_network_spec(spec, out / "network.json")
    save_checkpoint(net, out / "model.ckpt")

    def progress(rec):
        va = "" if rec["val_accuracy"] is None else f" val_acc {rec['val_accuracy']:.4f}"
        print(f"step {rec['step']} lr {rec['lr']:.3g} loss {rec['loss']:.4f} "
              f"train_acc {rec['train_accuracy']:.3f}{va}", flush=True)

    t0 = time.perf_counter()
    try:
        history = train_loop(net, images.astype(args.dtype), labels, cfg, val=val,
                             progress=None if args.quiet else progress)
    except NumericError:
        save_checkpoint(net, out / "model.ckpt")  # parameters were rolled back
        raise
    finally:
        wall = time.perf_counter() - t0
    save_checkpoint(net, out / "model.ckpt")
    history.to_csv(out / "history.csv")
    results = {"steps": len(history), "wall_seconds": wall,
               "final_loss": history.records[-1]["loss"] if len(history) else None,
               "val_accuracy": history.records[-1]["val_accuracy"] if len(history) else None,
               "train_config": cfg.to_dict()}
    write_manifest(out, args, [out / "model.ckpt", out / "network.json", out / "history.csv"], results)
    print(f"trained {len(history)} steps in {wall:.1f}s -> {out / 'model.ckpt'}")
    return 0


def confusion_matrix(true, pred, n_classes):
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(true), np.asarray(pred)), 1)
    return m


def cmd_eval(args):
    from .layers import load_checkpoint

    ckpt, spec = resolve_checkpoint(args.checkpoint)
    net = load_checkpoint(ckpt, spec, dtype=args.dtype)
    images, labels, classes = load_data(args.data, args.part, args.image_root, spec.input_shape)
    if images.shape[1:] != spec.input_shape:
        raise DataError(f"data shape {images.shape[1:]} does not match network input {spec.input_shape}")
    k = spec.num_classes
    if len(labels) and labels.max() >= k:
        raise DataError(f"labels reach {labels.max()} but the network has {k} classes")
    pred = net.predict(images.astype(args.dtype))
    acc = float(np.mean(pred == labels))
    cm = confusion_matrix(labels, pred, k)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "confusion.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + list(range(k)))
        for i, row in enumerate(cm):
            w.writerow([i] + row.tolist())
    write_manifest(out, args, [out / "confusion.csv"], {"accuracy": acc, "n": len(labels)})
    print(f"accuracy {acc:.4f} on {len(labels)} samples")
    return 0


def cmd_knn(args):
    from .baseline import VARIANTS, BaselineConfig, baseline_pipeline, features_from_images
    from .datasets import SplitSpec, split_indices, stratified_subsample, LabeledDataset

    ks = tuple(int(k) for k in args.ks.split(","))
    variants = tuple(args.variants.split(",")) if args.variants else VARIANTS
    config = BaselineConfig(ks=ks, variants=variants, pca_components=args.pca,
                            raw_metric="minkowski" if args.p != 2 else "euclidean", minkowski_p=args.p)
    src = Path(args.data)

    def sub(x, y, n):
        if not n or n >= len(y):
            return x, y
        ds = LabeledDataset(tuple(range(len(y))), y, tuple(range(int(y.max()) + 1)), images=x)
        ds = stratified_subsample(ds, n, args.seed)
        return ds.images, ds.labels

    if src.is_dir():
        trx, try_, _ = load_data(src, "train")
        vax, vay, _ = load_data(src, "test")
    else:
        x, y, _ = load_data(src, "train", args.image_root)
        tr, va = split_indices(y, SplitSpec(args.train_fraction, args.seed))
        trx, try_, vax, vay = x[tr], y[tr], x[va], y[va]
    trx, try_ = sub(trx, try_, args.n_train)
    vax, vay = sub(vax, vay, args.n_test)
    ftr, fva = features_from_images(trx), features_from_images(vax)

    reports = [baseline_pipeline(ftr, try_, fva, vay, config) for _ in range(args.repeats)]
    first = reports[0]
    spread = {f"k={k} {v}": float(np.ptp([r.accuracy[(k, v)] for r in reports]))
              for k in ks for v in variants}
    if any(s != 0 for s in spread.values()):
        raise NumericError(f"repeated runs disagree: {spread}")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    first.to_tsv(out / "report.tsv")
    print(first.format())
    print(f"runs={args.repeats} sigma=0 n_train={len(try_)} n_val={len(vay)}")
    results = {"accuracy": {f"k={k} {v}": a for (k, v), a in first.accuracy.items()},
               "repeats": args.repeats, "sigma": 0.0, **first.details}
    write_manifest(out, args, [out / "report.tsv"], results)
    return 0


def _image_for(args, spec):
    if args.image:
        return load_single_image(args.image, spec.input_shape), None
    if args.data is None:
        raise ConfigError("give --image PATH or --data SOURCE --index I")
    images, labels, _ = load_data(args.data, args.part, None, spec.input_shape)
    if not 0 <= args.index < len(images):
        raise ConfigError(f"--index {args.index} outside [0, {len(images)})")
    return images[args.index], int(labels[args.index])


def cmd_saliency(args):
    from .interpret import export_saliency, saliency
    from .layers import load_checkpoint

    ckpt, spec = resolve_checkpoint(args.checkpoint)
    net = load_checkpoint(ckpt, spec)
    image, label = _image_for(args, spec)
    target = args.target if args.target is not None else int(net.predict(image[None])[0])
    sm = saliency(net, image, target, args.box, args.stride, args.fill)
    out = Path(args.output)
    written = export_saliency(sm, out, image)
    results = {"target": target, "label": label, "p0": sm.p0, "box": sm.box, "stride": sm.stride,
               "grid": list(sm.grid_shape), "max_heat": float(sm.heat.max()),
               "min_heat": float(sm.heat.min())}
    write_manifest(out, args, written, results)
    print(f"saliency grid {sm.grid_shape[0]}x{sm.grid_shape[1]} (box {sm.box}, stride {sm.stride}), "
          f"target {target}, p0 {sm.p0:.4f}")
    return 0


def cmd_activations(args):
    from .interpret import dead_neuron_report, dump_activations, export_activations
    from .layers import load_checkpoint

    ckpt, spec = resolve_checkpoint(args.checkpoint)
    net = load_checkpoint(ckpt, spec)
    image, _ = _image_for(args, spec)
    dump = dump_activations(net, image)
    out = Path(args.output)
    written = export_activations(dump, out)
    results = {"layers": [{"index": la.index, "kind": la.kind, "depth": la.depth} for la in dump.layers]}
    if args.probes:
        probes, _, _ = load_data(args.probes, args.part, None, spec.input_shape)
        if args.n_probes:
            probes = probes[: args.n_probes]
        report = dead_neuron_report(net, probes)
        path = out / "dead_neurons.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["layer", "channel", "activation_rate", "dead"])
            for u in report:
                w.writerow([u.layer, u.channel, repr(u.rate), int(u.dead)])
        written.append(path)
        results["dead_units"] = sum(u.dead for u in report)
        results["units"] = len(report)
    write_manifest(out, args, written, results)
    for la in dump.layers:
        print(f"layer {la.index} {la.kind}: {la.raw.shape[0]}x{la.raw.shape[1]}x{la.depth}")
    return 0


def cmd_report(args):
    from .optimize import History

    rows = []
    for d in args.runs:
        d = Path(d)
        manifest = d / "run.json"
        if not manifest.exists():
            raise DataError(f"{manifest}: no run manifest")
        rec = json.loads(manifest.read_text())
        row = {"run": str(d), "command": rec["command"], "seed": rec["seed"]}
        res = rec.get("results", {})
        for key in ("accuracy", "final_loss", "val_accuracy", "steps", "wall_seconds", "processed"):
            if key in res and not isinstance(res[key], dict):
                row[key] = res[key]
        hist = d / "history.csv"
        if hist.exists():
            h = History.from_csv(hist)
            if len(h):
                tail = h.records[-min(100, len(h)):]
                row["train_accuracy_last100"] = float(np.mean([r["train_accuracy"] for r in tail]))
        rows.append(row)
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    print("\t".join(keys))
    for r in rows:
        print("\t".join("" if r.get(k) is None else (f"{r[k]:.4f}" if isinstance(r[k], float) else str(r[k]))
                        for k in keys))
    if args.output:
        with open(args.output, "w", newline="") as f:
            w = csv.DictWriter(f, keys, delimiter="\t")
            w.writeheader()
            w.writerows(rows)
    return 0


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="callosity", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=42, help="seed for every random choice (default 42)")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads (1 = bit-reproducible)")
    p.add_argument("--replay", metavar="RUN_JSON", help="re-run the command recorded in a run manifest")
    p.add_argument("--replay-out", metavar="DIR", help="with --replay: write into DIR instead")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"callosity {__version__}")
    sp = p.add_subparsers(dest="command", parser_class=_Parser)

    pre = sp.add_parser("preprocess", help="passport crops from a directory of images")
    pre.add_argument("input")
    pre.add_argument("output")
    pre.add_argument("--out-size", type=int, default=256)
    pre.add_argument("--flip", action="store_true", help="add a half turn after derotation")
    pre.add_argument("--strict", action="store_true", help="exit 2 if any image fails")
    pre.add_argument("--synthetic", type=int, default=0, metavar="N",
                     help="first write N seeded synthetic scenes into INPUT")
    pre.set_defaults(func=cmd_preprocess)

    tr = sp.add_parser("train", help="train a network")
    tr.add_argument("--data", required=True, help="IDX directory, .npz or .csv manifest")
    tr.add_argument("--val-data")
    tr.add_argument("--image-root")
    tr.add_argument("--net", default="mnist", help="preset name or JSON config")
    tr.add_argument("--output", "-o", required=True)
    tr.add_argument("--max-steps", type=int, default=1000)
    tr.add_argument("--batch-size", type=int, default=50)
    tr.add_argument("--lr", type=float, default=1e-4)
    tr.add_argument("--decay-rate", type=float, default=0.95)
    tr.add_argument("--decay-steps", type=int, default=1000)
    tr.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    tr.add_argument("--weight-decay", type=float, default=0.0)
    tr.add_argument("--eval-every", type=int, default=0)
    tr.add_argument("--checkpoint-every", type=int, default=0)
    tr.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sp.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    ev.add_argument("--checkpoint", required=True, help="model.ckpt or a run directory")
    ev.add_argument("--data", required=True)
    ev.add_argument("--part", default="test", choices=["train", "test"])
    ev.add_argument("--image-root")
    ev.add_argument("--output", "-o", required=True)
    ev.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    ev.set_defaults(func=cmd_eval)

    kn = sp.add_parser("knn", help="kNN baselines (RAW / PCA / PCA+LDA)")
    kn.add_argument("--data", required=True)
    kn.add_argument("--image-root")
    kn.add_argument("--output", "-o", required=True)
    kn.add_argument("--ks", default="1,3,5")
    kn.add_argument("--variants", default=None, help="comma list (default: all)")
    kn.add_argument("--p", type=float, default=2.0, help="Minkowski exponent for RAW")
    kn.add_argument("--pca", type=float, default=0.95, help="variance fraction (<1) or component count")
    kn.add_argument("--train-fraction", type=float, default=0.8)
    kn.add_argument("--n-train", type=int, default=0, help="stratified train subsample size")
    kn.add_argument("--n-test", type=int, default=0)
    kn.add_argument("--repeats", type=int, default=1)
    kn.set_defaults(func=cmd_knn)

    for name, func, helptext in (("saliency", cmd_saliency, "occlusion saliency map"),
                                 ("activations", cmd_activations, "per-layer activation dumps")):
        q = sp.add_parser(name, help=helptext)
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--image")
        q.add_argument("--data")
        q.add_argument("--part", default="test", choices=["train", "test"])
        q.add_argument("--index", type=int, default=0)
        q.add_argument("--output", "-o", required=True)
        if name == "saliency":
            q.add_argument("--target", type=int, default=None, help="class (default: predicted)")
            q.add_argument("--box", type=int, default=None)
            q.add_argument("--stride", type=int, default=None)
            q.add_argument("--fill", default="zero", choices=["zero", "mean"])
        else:
            q.add_argument("--probes", help="dataset for the dead-unit report")
            q.add_argument("--n-probes", type=int, default=0)
        q.set_defaults(func=func)

    rp = sp.add_parser("report", help="summarise run directories")
    rp.add_argument("runs", nargs="+")
    rp.add_argument("--output", "-o")
    rp.set_defaults(func=cmd_report)
    return p


def _replay_namespace(parser, args):
    rec = json.loads(Path(args.replay).read_text())
    ns = parser.parse_args([rec["command"]] + _required_stub(rec))
    for k, v in rec["args"].items():
        setattr(ns, k, v)
    if args.replay_out:
        for key in ("output",):
            if getattr(ns, key, None) is not None:
                setattr(ns, key, args.replay_out)
    ns.replay = None
    return ns


def _required_stub(rec):
    # placeholders that satisfy argparse; every value is overwritten from the manifest
    a = rec["args"]
    if rec["command"] == "preprocess":
        return [a["input"], a["output"]]
    if rec["command"] == "report":
        return list(a["runs"])
    stub = ["--output", a["output"]]
    for key in ("data", "checkpoint"):
        if key in a and a[key] is not None:
            stub += [f"--{key}", str(a[key])]
    return stub


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.replay:
            args = _replay_namespace(parser, args)
        if not args.command:
            parser.print_help()
            return 1
        from threadpoolctl import threadpool_limits

        with threadpool_limits(args.threads):
            return args.func(args)
    except CallosityError as e:
        print(f"callosity {args.command or ''}: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as e:
        print(f"callosity: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
