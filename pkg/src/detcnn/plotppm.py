"""Tiny deterministic line plot of training curves, written as binary PPM.

Everything is integer raster math (Bresenham segments on a fixed canvas),
so the image bytes are a pure function of the metric values. Accuracies are
drawn on a fixed 0..1 scale; losses are scaled by the maximum loss in the
run so both curve families share the canvas.
"""

import numpy as np

WIDTH = 640
HEIGHT = 400
MARGIN = 40

BG = (255, 255, 255)
FRAME = (70, 70, 70)
COLORS = {
    "train_loss": (230, 120, 0),
    "val_loss": (180, 0, 0),
    "train_acc": (0, 90, 200),
    "val_acc": (0, 160, 60),
}


def _put(img, y, x, color):
    if 0 <= y < img.shape[0] and 0 <= x < img.shape[1]:
        img[y, x] = color


def _line(img, y0, x0, y1, x1, color):
    dy = abs(y1 - y0)
    dx = abs(x1 - x0)
    sy = 1 if y0 < y1 else -1
    sx = 1 if x0 < x1 else -1
    err = dx - dy
    y, x = y0, x0
    while True:
        _put(img, y, x, color)
        if y == y1 and x == x1:
            return
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
        # defensive: the step above always moves toward the endpoint


def _frame(img):
    top, bot = MARGIN, HEIGHT - MARGIN
    left, right = MARGIN, WIDTH - MARGIN
    _line(img, top, left, top, right, FRAME)
    _line(img, bot, left, bot, right, FRAME)
    _line(img, top, left, bot, left, FRAME)
    _line(img, top, right, bot, right, FRAME)


def _to_px(values, lo, hi, n):
    """Map n samples of [lo, hi] onto canvas (x, y) integer pairs.

    Non-finite samples pin to the bottom edge and everything clamps into
    the frame, so a run that produced nan/inf metrics still plots.
    """
    top, bot = MARGIN, HEIGHT - MARGIN
    left, right = MARGIN, WIDTH - MARGIN
    span = max(hi - lo, 1e-12)
    pts = []
    for i, v in enumerate(values):
        fx = i / max(n - 1, 1)
        fy = (float(v) - lo) / span
        if not np.isfinite(fy):
            fy = 0.0
        fy = min(max(fy, 0.0), 1.0)
        x = left + int(round(fx * (right - left)))
        y = bot - int(round(fy * (bot - top)))
        pts.append((y, x))
    return pts


def render_metrics(records) -> np.ndarray:
    """Plot the four metric curves; returns a [H, W, 3] uint8 canvas."""
    img = np.empty((HEIGHT, WIDTH, 3), dtype=np.uint8)
    img[:] = BG
    _frame(img)
    if not records:
        return img
    series = {
        "train_loss": [r.train_loss for r in records],
        "val_loss": [r.val_loss for r in records],
        "train_acc": [r.train_acc for r in records],
        "val_acc": [r.val_acc for r in records],
    }
    finite_losses = [
        v for v in series["train_loss"] + series["val_loss"]
        if np.isfinite(v)
    ]
    loss_hi = max(finite_losses, default=1e-9)
    loss_hi = max(loss_hi, 1e-9)
    n = len(records)
    for key, vals in series.items():
        hi = 1.0 if key.endswith("acc") else loss_hi
        pts = _to_px(vals, 0.0, hi, n)
        color = COLORS[key]
        if n == 1:
            y, x = pts[0]
            for oy in (-1, 0, 1):
                for ox in (-1, 0, 1):
                    _put(img, y + oy, x + ox, color)
            continue
        for (y0, x0), (y1, x1) in zip(pts, pts[1:]):
            _line(img, y0, x0, y1, x1, color)
    return img


def write_metrics_plot(path: str, records):
    from .data import write_image
    from .tensor import Tensor

    img = render_metrics(records)
    write_image(path, Tensor(img.astype(np.float32), copy=False))
