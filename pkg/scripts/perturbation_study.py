#!/usr/bin/env python3
"""Occlusion study: train on synthetic blobs, pick one validation image,
then fill or crop the region the activation map points at and report how
the prediction ranking and the map itself move.

Usage: python3 scripts/perturbation_study.py [workdir]
"""

import os
import sys
import tempfile

import numpy as np

from detcnn import gradcam, harness, zoo
from detcnn.data import split_train_val, synth_blobs, write_image
from detcnn.tensor import Tensor
from detcnn.training import TrainConfig, train

PDIM = 48
SYNTH_SEED = 11


def main():
    work = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(
        prefix="perturb-study-"
    )
    os.makedirs(work, exist_ok=True)
    print(f"work dir: {work}")

    train_ds, val_ds = split_train_val(synth_blobs(32, PDIM, SYNTH_SEED))
    graph = zoo.build_model("convnet", PDIM, zoo.SeedSet())
    cfg = TrainConfig(epochs=3, batch_size=4)
    records = train(graph, train_ds, val_ds, cfg)
    print(f"final val accuracy: {records[-1].val_acc:.4f}")

    image = Tensor(val_ds.x[0])
    classes = val_ds.classes
    # deepest conv whose map still has enough cells to localize anything
    layer = None
    for node in graph.nodes:
        if node.cfg.kind in ("conv2d", "separable_conv2d") \
                and node.out_shape[0] >= 4:
            layer = node.id
    if layer is None:
        layer = gradcam.last_conv_node(graph)
    cam = gradcam.grad_cam(graph, image, layer, class_index=1)
    base = harness.prediction_table(graph, image, classes)
    print(f"\nbaseline ({classes[val_ds.y[0]]} image, map layer {layer}):")
    print(harness.format_prediction_table(base))

    # occlude the hottest map cell, scaled up to pixel coordinates
    gh, gw = cam.grid.shape
    flat = int(np.argmax(cam.grid.data))
    cy, cx = divmod(flat, gw)
    sy, sx = PDIM // gh, PDIM // gw
    y0, x0 = cy * sy, cx * sx
    y1, x1 = min(PDIM, y0 + 2 * sy), min(PDIM, x0 + 2 * sx)

    for kind in ("fill", "crop"):
        spec = (
            gradcam.PerturbSpec("fill", y0, x0, y1, x1, value=(127, 127, 127))
            if kind == "fill"
            else gradcam.PerturbSpec("crop", y0, x0, y1, x1)
        )
        pert = gradcam.apply_perturb(image, spec)
        write_image(os.path.join(work, f"{kind}.ppm"), pert)
        table = harness.prediction_table(graph, pert, classes)
        cam2 = gradcam.grad_cam(graph, pert, layer, class_index=1)
        sim = harness.cam_similarity(cam, cam2)
        print(f"after {kind} of rows {y0}:{y1}, cols {x0}:{x1}:")
        print(harness.format_prediction_table(table))
        print(harness.rank_shift_report(base, table))
        print(f"map overlap iou={sim.iou:.3f}"
              f" centre shift={sim.com_shift:.3f} cells\n")

    write_image(
        os.path.join(work, "overlay.ppm"),
        gradcam.render_overlay(image, cam),
    )
    print(f"artifacts in {work}")


if __name__ == "__main__":
    main()
