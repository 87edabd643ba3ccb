"""Tensor container and deterministic whole-array operations.

A Tensor is an immutable, C-contiguous numpy array of rank 1..4 with positive
dimensions, dtype float32 (or float64 for shadow-precision checks). All ops
here are defined with a fixed evaluation order so results are bit-identical
across runs, platforms, and thread counts:

  * elementwise ops map one numpy ufunc expression over the array; the only
    broadcast allowed is a rank-1 operand over the last axis (bias style),
  * sum/mean reduce in ascending flat-index order per output element, using
    cumulative-sum sweeps (never pairwise or tree reductions),
  * bilinear resampling uses half-pixel centers, edge clamping, and one fixed
    blend expression.

Nothing in this module calls into BLAS.
"""

import numpy as np

from . import dmath
from .errors import ShapeError

MAX_RANK = 4
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def validate_shape(shape) -> tuple:
    try:
        dims = tuple(int(d) for d in shape)
    except TypeError:
        raise ShapeError(f"shape must be a sequence of ints, got {shape!r}")
    if not 1 <= len(dims) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"dimensions must be positive, got {dims}")
    return dims


class Tensor:
    """Immutable container around a contiguous float array.

    Construction copies by default; pass copy=False only for arrays created
    locally that no other reference can mutate. The underlying buffer is
    marked read-only either way.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None, copy: bool = True):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        validate_shape(arr.shape)
        if copy or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), copy=False)

    def reshape(self, shape) -> "Tensor":
        dims = validate_shape(shape)
        if int(np.prod(dims)) != self.size:
            raise ShapeError(f"cannot reshape {self.shape} to {dims}")
        return Tensor(self.data.reshape(dims), copy=False)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs size-1 tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    @staticmethod
    def zeros(shape, dtype=np.float32) -> "Tensor":
        return Tensor(np.zeros(validate_shape(shape), dtype=dtype), copy=False)

    @staticmethod
    def full(shape, value, dtype=np.float32) -> "Tensor":
        return Tensor(
            np.full(validate_shape(shape), value, dtype=dtype), copy=False
        )


def bits_equal(a: Tensor, b: Tensor) -> bool:
    """True iff shape, dtype and every bit of the payload match."""
    return (
        a.shape == b.shape
        and a.dtype == b.dtype
        and a.data.tobytes() == b.data.tobytes()
    )


_UNARY = {
    "relu": lambda x: np.maximum(x, np.asarray(0, dtype=x.dtype)),
    "sigmoid": dmath.sigmoid,
    "exp": dmath.exp,
    "log": dmath.log,
    "sqrt": dmath.sqrt,
}
_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: Tensor, b: Tensor = None) -> Tensor:
    """Apply a named elementwise op.

    Binary ops accept b with the same shape as a, or rank-1 b matching a's
    last axis (broadcast over leading axes). Any other shape pair is an error
    naming both shapes; there is no silent general broadcasting.
    """
    if op in _UNARY:
        if b is not None:
            raise ShapeError(f"op {op!r} is unary")
        return Tensor(_UNARY[op](a.data), copy=False)
    if op not in _BINARY:
        raise ShapeError(f"unknown elementwise op {op!r}")
    if b is None:
        raise ShapeError(f"op {op!r} needs two operands")
    if b.dtype != a.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if b.shape != a.shape and b.shape != (a.shape[-1],):
        raise ShapeError(
            f"cannot broadcast {b.shape} onto {a.shape}: shapes must match "
            f"or b must be rank-1 over the last axis"
        )
    return Tensor(_BINARY[op](a.data, b.data), copy=False)


def _ordered_sum(data: np.ndarray, axes: tuple) -> np.ndarray:
    """Sum over axes in ascending flat-index order per output element.

    The reduced elements of each output are accumulated strictly in the order
    they appear in the original row-major layout (tested against a scalar
    Python loop): a streaming column sweep when the reduced axes lead, a
    per-row sweep when they trail, and a transpose into the trailing layout
    otherwise. The transpose fixes kept/reduced relative order, so per-output
    element order still matches the original flat order.
    """
    from . import kernels

    nd = data.ndim
    kept = tuple(i for i in range(nd) if i not in axes)
    red_len = 1
    for i in axes:
        red_len *= data.shape[i]
    kept_len = data.size // red_len
    out = np.empty(kept_len, dtype=data.dtype)
    if axes == tuple(range(len(axes))):
        kernels.colsum(data.reshape(red_len, kept_len), out)
    elif kept == tuple(range(len(kept))):
        kernels.rowsum(data.reshape(kept_len, red_len), out)
    else:
        perm = kept + axes
        flat = np.ascontiguousarray(np.transpose(data, perm)).reshape(
            kept_len, red_len
        )
        kernels.rowsum(flat, out)
    return out


def reduce(op: str, t: Tensor, axes) -> Tensor:
    """Reduce over a set of axes with op in {sum, mean, max}.

    Empty axes returns an identity copy. Reduced axes are dropped from the
    result shape; reducing everything yields shape (1,). mean divides the
    ordered sum by the element count in one rounding.
    """
    if op not in ("sum", "mean", "max"):
        raise ShapeError(f"unknown reduce op {op!r}")
    axes = tuple(int(a) for a in axes)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axes {axes}")
    axes = tuple(sorted(axes))
    if any(a < 0 or a >= t.rank for a in axes):
        raise ShapeError(f"axes {axes} out of range for rank {t.rank}")
    if not axes:
        return Tensor(t.data)
    kept_shape = tuple(
        d for i, d in enumerate(t.shape) if i not in axes
    ) or (1,)
    if op == "max":
        # max is order-insensitive (including nan propagation), so the numpy
        # reduction is safe as-is.
        out = np.max(t.data, axis=axes)
    else:
        out = _ordered_sum(t.data, axes)
        if op == "mean":
            count = 1
            for a in axes:
                count *= t.shape[a]
            out = out / np.asarray(count, dtype=t.dtype)
    return Tensor(out.reshape(kept_shape), copy=False)


def bilinear_gather(
    img: np.ndarray, sy: np.ndarray, sx: np.ndarray
) -> np.ndarray:
    """Sample img [H,W,C] at float64 coordinates (sy, sx), each [h,w].

    Coordinates are clamped to the valid pixel range (edge replication), the
    four neighbours are gathered, and the blend runs in the image dtype with
    the fixed expression
        top = a*(1-fx) + b*fx;  bot = c*(1-fx) + d*fx
        out = top*(1-fy) + bot*fy
    """
    h, w = img.shape[0], img.shape[1]
    sy = np.clip(sy, 0.0, float(h - 1))
    sx = np.clip(sx, 0.0, float(w - 1))
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0).astype(img.dtype)[..., None]
    fx = (sx - x0).astype(img.dtype)[..., None]
    one = np.asarray(1, dtype=img.dtype)
    a = img[y0, x0]
    b = img[y0, x1]
    c = img[y1, x0]
    d = img[y1, x1]
    top = a * (one - fx) + b * fx
    bot = c * (one - fx) + d * fx
    return top * (one - fy) + bot * fy


def bilinear_resize(t: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize [H,W,C] to [out_h,out_w,C] with half-pixel-center bilinear
    sampling: source = (dest + 0.5) * in/out - 0.5, coordinates in float64.
    """
    if t.rank != 3:
        raise ShapeError(f"bilinear_resize expects [H,W,C], got {t.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be positive, got {out_h}x{out_w}")
    h, w = t.shape[0], t.shape[1]
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    grid_y = np.repeat(sy[:, None], out_w, axis=1)
    grid_x = np.repeat(sx[None, :], out_h, axis=0)
    return Tensor(bilinear_gather(t.data, grid_y, grid_x), copy=False)
