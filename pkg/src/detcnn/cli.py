"""Command line front end.

Subcommands:

    train        fit a model, leave a run directory behind
    explain      activation-map overlay for one image of a trained run
    compare      classify two run directories (bit-identical / close / diverged)
    perturb      crop or fill a rectangle of a PPM image
    fingerprint  print the weight fingerprint of a run

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.

Numeric knobs resolve CLI flag > DET_* environment variable > default:
DET_SEED, DET_THREADS, DET_EPOCHS, DET_BATCH, DET_PDIM, DET_LR.
"""

import argparse
import os
import sys

from . import gradcam, harness, zoo
from .data import (
    load_dataset,
    read_image,
    split_train_val,
    synth_blobs,
    write_image,
)
from .errors import ConfigError, DataError, EngineError, NumericAbort
from .tensor import Tensor, bilinear_resize
from .threads import get_threads
from .training import TrainConfig, metrics_lines, train
from .zoo import SeedSet


def _resolve(cli_value, env_name, default, cast):
    if cli_value is not None:
        return cli_value
    raw = os.environ.get(env_name, "")
    if raw:
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"{env_name}={raw!r} is not a valid value")
    return default


def _add_train(sub):
    p = sub.add_parser("train", help="train a model into a run directory")
    p.add_argument("--model", required=True, choices=zoo.MODEL_NAMES)
    p.add_argument("--out", required=True, metavar="RUNDIR")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", metavar="DIR",
                     help="two-class PPM tree, optionally split into"
                          " train/ and val/ subtrees")
    src.add_argument("--synth", type=int, metavar="N",
                     help="generate N synthetic blob images (N % 4 == 0)")
    p.add_argument("--synth-seed", type=int, default=11,
                   help="stream seed for --synth (default 11)")
    p.add_argument("--pdim", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None,
                   help="shuffle-order seed (default 1001)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--kernel-seed", type=int, default=1)
    p.add_argument("--pointwise-seed", type=int, default=2)
    p.add_argument("--dropout-seed", type=int, default=7001)
    p.add_argument("--augment-seed", type=int, default=1)


def _add_explain(sub):
    p = sub.add_parser("explain", help="write an activation-map overlay")
    p.add_argument("--run", required=True, metavar="RUNDIR")
    p.add_argument("--image", required=True, metavar="PPM")
    p.add_argument("--out", required=True, metavar="PPM")
    p.add_argument("--class-index", type=int, default=1, choices=(0, 1))
    p.add_argument("--layer", default="last",
                   help="node id of a conv layer, or 'last' (default)")
    p.add_argument("--cam-txt", default=None, metavar="TXT",
                   help="also dump the raw grid as text")


def _add_compare(sub):
    p = sub.add_parser("compare", help="compare two run directories")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", required=True)
    p.add_argument("--image", default=None, metavar="PPM",
                   help="also print both prediction tables for this image")


def _add_perturb(sub):
    p = sub.add_parser("perturb", help="crop or fill an image rectangle")
    p.add_argument("--image", required=True, metavar="PPM")
    p.add_argument("--out", required=True, metavar="PPM")
    op = p.add_mutually_exclusive_group(required=True)
    op.add_argument("--crop", metavar="X0,Y0,X1,Y1",
                    help="delete the rows and columns of the rectangle,"
                         " then resize back")
    op.add_argument("--fill", metavar="X0,Y0,X1,Y1",
                    help="paint the rectangle with --value")
    p.add_argument("--value", default="0,0,0", metavar="R,G,B")


def _add_fingerprint(sub):
    p = sub.add_parser("fingerprint", help="print a run's weight fingerprint")
    p.add_argument("--run", required=True, metavar="RUNDIR")


def _parse_ints(text: str, n: int, what: str):
    parts = text.split(",")
    if len(parts) != n:
        raise ConfigError(f"{what} needs {n} comma-separated integers,"
                          f" got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{what}: {text!r} is not all integers")


def _load_training_data(args, pdim):
    if args.synth is not None:
        ds = synth_blobs(args.synth, pdim, args.synth_seed)
        return split_train_val(ds)
    root = args.data
    train_dir = os.path.join(root, "train")
    val_dir = os.path.join(root, "val")
    if os.path.isdir(train_dir) and os.path.isdir(val_dir):
        return load_dataset(train_dir, pdim), load_dataset(val_dir, pdim)
    return split_train_val(load_dataset(root, pdim))


def _cmd_train(args) -> int:
    pdim = _resolve(args.pdim, "DET_PDIM", zoo.DEFAULT_PDIM, int)
    cfg = TrainConfig(
        epochs=_resolve(args.epochs, "DET_EPOCHS", 12, int),
        batch_size=_resolve(args.batch_size, "DET_BATCH", 32, int),
        learning_rate=_resolve(args.lr, "DET_LR", 1e-3, float),
        seed=_resolve(args.seed, "DET_SEED", 1001, int),
        threads=_resolve(args.threads, "DET_THREADS", 1, int),
    )
    seeds = SeedSet(
        global_seed=cfg.seed,
        kernel=args.kernel_seed,
        pointwise=args.pointwise_seed,
        dropout=args.dropout_seed,
        augmentation=args.augment_seed,
    )
    graph = zoo.build_model(args.model, pdim, seeds)
    train_ds, val_ds = _load_training_data(args, pdim)
    records = train(graph, train_ds, val_ds, cfg)
    manifest = harness.build_manifest(
        graph, cfg, records, train_ds, val_ds,
        threads_effective=get_threads()[1],
    )
    harness.write_run_dir(args.out, graph, manifest, records)
    sys.stdout.write(metrics_lines(records))
    print(f"fingerprint {manifest.get('fingerprint.weights')}")
    print(f"run written to {args.out}")
    return 0


def _image_for(graph, path: str) -> Tensor:
    img = read_image(path)
    pdim = graph.input_shape[0]
    if img.shape[:2] != (pdim, pdim):
        img = bilinear_resize(img, pdim, pdim)
    return img


def _cmd_explain(args) -> int:
    graph, _ = harness.load_run(args.run)
    img = _image_for(graph, args.image)
    layer = args.layer
    if layer == "last":
        layer = gradcam.last_conv_node(graph)
    cam = gradcam.grad_cam(graph, img, layer, args.class_index)
    write_image(args.out, gradcam.render_overlay(img, cam))
    if args.cam_txt:
        with open(args.cam_txt, "w") as fh:
            fh.write(gradcam.cam_to_text(cam))
    print(f"layer {cam.layer_id} class {cam.class_index}"
          f" score {cam.score:.8f}")
    print(f"overlay written to {args.out}")
    return 0


def _cmd_compare(args) -> int:
    report = harness.compare_runs(args.run_a, args.run_b)
    sys.stdout.write(report.render())
    if args.image:
        for tag, run_dir in (("a", args.run_a), ("b", args.run_b)):
            graph, manifest = harness.load_run(run_dir)
            classes = tuple(
                manifest.get("data.classes", "0,1").split(",")
            )
            rows = harness.prediction_table(
                graph, _image_for(graph, args.image), classes
            )
            print(f"predictions ({tag}: {run_dir})")
            sys.stdout.write(harness.format_prediction_table(rows))
            if tag == "a":
                rows_a = rows
        sys.stdout.write(harness.rank_shift_report(rows_a, rows))
    return 0


def _cmd_perturb(args) -> int:
    img = read_image(args.image)
    if args.crop is not None:
        x0, y0, x1, y1 = _parse_ints(args.crop, 4, "--crop")
        spec = gradcam.PerturbSpec("crop", y0=y0, x0=x0, y1=y1, x1=x1)
    else:
        x0, y0, x1, y1 = _parse_ints(args.fill, 4, "--fill")
        value = _parse_ints(args.value, 3, "--value")
        spec = gradcam.PerturbSpec("fill", y0=y0, x0=x0, y1=y1, x1=x1,
                                   value=value)
    write_image(args.out, gradcam.apply_perturb(img, spec))
    print(f"perturbed image written to {args.out}")
    return 0


def _cmd_fingerprint(args) -> int:
    graph, _ = harness.load_run(args.run)
    print(harness.fingerprint(graph))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "explain": _cmd_explain,
    "compare": _cmd_compare,
    "perturb": _cmd_perturb,
    "fingerprint": _cmd_fingerprint,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="detcnn",
        description="deterministic CNN training and explanation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_explain(sub)
    _add_compare(sub)
    _add_perturb(sub)
    _add_fingerprint(sub)
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericAbort as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return 4
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, EngineError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
