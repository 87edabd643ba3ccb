"""Class-activation maps from gradients, plus image perturbations.

The map for (image, target layer, class) is:

    alpha_k = spatial mean of d(score)/dA_k        (A = target activations)
    M       = relu(sum_k alpha_k * A_k)
    grid    = M / max(M)        (all-zero M stays all-zero)

where score is the model's sigmoid output for class 1 and its negation for
class 0, evaluated in inference mode. The normalized grid is scale-free: in
exact arithmetic, multiplying the target activations by any c > 0 leaves it
unchanged, which the tests check to float32 tolerance.

Perturbations deliberately damage an image to probe an explanation: crop
deletes the rows and columns crossing a rectangle and resizes the remainder
back (the grid must keep at least one row and column), fill paints the
rectangle with a constant color.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Ctx
from .tensor import Tensor, bilinear_resize
from .tensor import reduce as treduce


@dataclass(frozen=True)
class CamMap:
    grid: Tensor  # [gh, gw] float32 in [0, 1]
    layer_id: str
    class_index: int
    score: float  # sigmoid output of the model on the image


def last_conv_node(graph) -> str:
    """Default explanation target: the last convolutional node."""
    for node in reversed(graph.nodes):
        if node.cfg.kind in ("conv2d", "separable_conv2d"):
            return node.id
    raise ConfigError("graph has no convolutional node")


def grad_cam(graph, image: Tensor, layer_id: str, class_index: int) -> CamMap:
    """Compute the activation map of one image at one feature layer."""
    if class_index not in (0, 1):
        raise ConfigError(f"class_index must be 0 or 1, got {class_index}")
    if image.rank != 3:
        raise ShapeError(f"grad_cam needs one [H,W,C] image, got {image.shape}")
    node = graph.by_id.get(layer_id)
    if node is None:
        raise ConfigError(f"unknown layer {layer_id!r}")
    if len(node.out_shape) != 3:
        raise ConfigError(
            f"layer {layer_id!r} has no spatial feature map"
        )
    x = Tensor(image.data[None], copy=False)
    out, fcache = graph.forward(x, Ctx("infer"))
    if out.shape != (1, 1):
        raise ShapeError(f"expected scalar model output, got {out.shape}")
    score = out.item()
    sign = 1.0 if class_index == 1 else -1.0
    gout = Tensor(np.full((1, 1), sign, dtype=out.dtype), copy=False)
    _, act_grad = graph.backward(fcache, gout, until_node=layer_id)
    acts = fcache[layer_id][0]
    alpha = treduce("mean", act_grad, (0, 1, 2)).data  # [K]
    weighted = acts.data * alpha
    m = treduce("sum", Tensor(weighted, copy=False), (0, 3))
    m = Tensor(np.maximum(m.data, m.dtype.type(0)), copy=False)
    peak = treduce("max", m, (0, 1)).item()
    if peak > 0.0:
        grid = m.data / m.dtype.type(peak)
    else:
        grid = m.data
    return CamMap(
        grid=Tensor(grid.astype(np.float32), copy=False),
        layer_id=layer_id,
        class_index=class_index,
        score=score,
    )


def colormap(grid: np.ndarray) -> np.ndarray:
    """Map [0,1] values to 0..255 RGB along blue-cyan-yellow-red.

    Piecewise-linear ramps with breakpoints at 0, 1/3, 2/3, 1:
        r = clip(3t - 1, 0, 1), g = clip(min(3t, 3 - 3t), 0, 1),
        b = clip(2 - 3t, 0, 1), each scaled by 255.
    """
    t = grid.astype(np.float32)
    three = np.float32(3.0)
    one = np.float32(1.0)
    r = np.clip(three * t - one, 0.0, 1.0)
    g = np.clip(np.minimum(three * t, three - three * t), 0.0, 1.0)
    b = np.clip(np.float32(2.0) - three * t, 0.0, 1.0)
    rgb = np.stack([r, g, b], axis=-1)
    return rgb * np.float32(255.0)


def render_overlay(image: Tensor, cam: CamMap, alpha: float = 0.4) -> Tensor:
    """Blend the colorized map over an image (both 0..255 float32).

    The cam grid is bilinearly upsampled to the image size, colorized, and
    mixed as out = image*(1-alpha) + color*alpha.
    """
    if image.rank != 3 or image.shape[2] != 3:
        raise ShapeError(f"render_overlay needs [H,W,3], got {image.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    h, w, _ = image.shape
    gh, gw = cam.grid.shape
    up = bilinear_resize(
        Tensor(cam.grid.data.reshape(gh, gw, 1), copy=False), h, w
    )
    color = colormap(up.data[:, :, 0])
    af = np.float32(alpha)
    out = image.data * (np.float32(1.0) - af) + color * af
    return Tensor(out, copy=False)


def cam_to_text(cam: CamMap) -> str:
    """Grid as plain text: one row per line, shortest-roundtrip floats."""
    lines = [
        f"layer={cam.layer_id} class={cam.class_index}"
        f" score={float(np.float32(cam.score))!r}"
    ]
    for row in cam.grid.data:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PerturbSpec:
    """Rectangle [y0:y1, x0:x1) to crop away or fill with a constant."""

    kind: str  # "crop" or "fill"
    y0: int
    x0: int
    y1: int
    x1: int
    value: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("crop", "fill"):
            raise ConfigError(f"perturb kind must be crop or fill, got"
                              f" {self.kind!r}")
        if not (self.y0 < self.y1 and self.x0 < self.x1):
            raise ConfigError("perturb rectangle must be non-empty")
        if min(self.y0, self.x0) < 0:
            raise ConfigError("perturb rectangle must be non-negative")
        if len(self.value) != 3:
            raise ConfigError("fill value must have 3 channels")


def apply_perturb(image: Tensor, spec: PerturbSpec) -> Tensor:
    """Apply a perturbation, returning an image of the original size.

    crop removes the rectangle's rows and columns entirely (the remainder
    closes up) and bilinearly resizes back to the original dimensions; it
    must leave at least one row and one column. fill overwrites the
    rectangle with the constant value.
    """
    if image.rank != 3 or image.shape[2] != 3:
        raise ShapeError(f"perturb needs [H,W,3], got {image.shape}")
    h, w, _ = image.shape
    if spec.y1 > h or spec.x1 > w:
        raise ConfigError(
            f"rectangle {spec.y0},{spec.x0}..{spec.y1},{spec.x1} exceeds"
            f" image {h}x{w}"
        )
    if spec.kind == "fill":
        out = image.data.copy()
        out[spec.y0:spec.y1, spec.x0:spec.x1] = np.asarray(
            spec.value, dtype=np.float32
        )
        return Tensor(out, copy=False)
    rows = np.concatenate(
        [np.arange(0, spec.y0), np.arange(spec.y1, h)]
    ).astype(np.int64)
    cols = np.concatenate(
        [np.arange(0, spec.x0), np.arange(spec.x1, w)]
    ).astype(np.int64)
    if rows.size == 0 or cols.size == 0:
        raise ConfigError("crop must leave at least one row and one column")
    kept = np.ascontiguousarray(image.data[rows][:, cols])
    return bilinear_resize(Tensor(kept, copy=False), h, w)
