"""Layers as pure forward/backward pairs.

A layer is (LayerConfig, LayerState): the config is a frozen hyperparameter
record, the state holds parameter tensors ("params", trainable) and running
buffers ("buffers", not trainable). forward(cfg, state, x, ctx) returns
(y, cache); backward(cfg, state, cache, gy, want_input_grad) returns
(gx_or_None, param_grads). Batch norm additionally refreshes its moving
stats inside a train-mode forward, the one sanctioned state mutation.

Everything is float32 NHWC end to end (float64 passes through unchanged for
shadow-precision gradient checks). Randomness comes only from counter-based
streams derived from the layer seed plus (epoch, batch), so a layer's output
is a pure function of (input, params, seeds, ctx):

  dropout    dropout/<seed>/e<E>/b<B>, counter = flat element index,
             keep iff u >= rate, kept values scaled by 1/(1-rate)
  flip       augment/flip/<seed>/e<E>/b<B>, one draw per image, flip iff
             u < 0.5 (width axis reversal)
  rotation   augment/rotation/<seed>/e<E>/b<B>, one draw per image,
             theta = (2u-1) * factor * 2*pi
  zoom       augment/zoom/<seed>/e<E>/b<B>, two draws per image (height
             scale then width scale), s = 1 + (2u-1) * factor; s > 1
             magnifies content

Augmentation layers are identity at inference. Warps use inverse mapping
about the image centre with the engine's own sin/cos, bilinear sampling,
and edge clamping; coordinates are computed in float64, blending in the
image dtype.
"""

from dataclasses import dataclass, field

import numpy as np

from . import dmath, kernels
from .errors import ConfigError, ShapeError
from .rng import DetRng, InitSpec, glorot_uniform
from .tensor import Tensor, bilinear_gather
from .tensor import reduce as treduce

_TWO_PI = 6.283185307179586


@dataclass(frozen=True)
class LayerConfig:
    kind: str
    filters: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: str = "valid"
    use_bias: bool = True
    rate: float = 0.0
    factor: float = 0.0
    scale: float = 1.0
    eps: float = 1e-3
    momentum: float = 0.99
    seed: int = 0
    pointwise_seed: int = 0


@dataclass
class LayerState:
    """Parameter tensors (trainable) and running buffers (not trainable)."""

    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Ctx:
    """Execution context: mode plus the (epoch, batch) stream coordinates."""

    mode: str = "infer"
    epoch: int = 0
    batch: int = 0

    def __post_init__(self):
        if self.mode not in ("train", "infer"):
            raise ConfigError(f"mode must be train or infer, got {self.mode!r}")

    @property
    def train(self) -> bool:
        return self.mode == "train"


def _positive(name, value, minimum=1):
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")


def _check_padding(padding):
    if padding not in ("valid", "same"):
        raise ConfigError(f"padding must be valid or same, got {padding!r}")


def conv2d(filters, kernel_size, stride=1, padding="valid", use_bias=True,
           seed=0) -> LayerConfig:
    _positive("filters", filters)
    _positive("kernel_size", kernel_size)
    _positive("stride", stride)
    _check_padding(padding)
    return LayerConfig(kind="conv2d", filters=filters,
                       kernel_size=kernel_size, stride=stride,
                       padding=padding, use_bias=use_bias, seed=seed)


def separable_conv2d(filters, kernel_size, stride=1, padding="same",
                     use_bias=False, seed=0, pointwise_seed=0) -> LayerConfig:
    _positive("filters", filters)
    _positive("kernel_size", kernel_size)
    _positive("stride", stride)
    _check_padding(padding)
    return LayerConfig(kind="separable_conv2d", filters=filters,
                       kernel_size=kernel_size, stride=stride,
                       padding=padding, use_bias=use_bias, seed=seed,
                       pointwise_seed=pointwise_seed)


def dense(units, use_bias=True, seed=0) -> LayerConfig:
    _positive("units", units)
    return LayerConfig(kind="dense", filters=units, use_bias=use_bias,
                       seed=seed)


def batch_norm(eps=1e-3, momentum=0.99) -> LayerConfig:
    if not 0.0 < eps:
        raise ConfigError(f"eps must be > 0, got {eps}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    return LayerConfig(kind="batch_norm", eps=eps, momentum=momentum)


def maxpool(pool_size, stride=None, padding="valid") -> LayerConfig:
    _positive("pool_size", pool_size)
    stride = pool_size if stride is None else stride
    _positive("stride", stride)
    _check_padding(padding)
    return LayerConfig(kind="maxpool", kernel_size=pool_size, stride=stride,
                       padding=padding)


def relu() -> LayerConfig:
    return LayerConfig(kind="relu")


def sigmoid() -> LayerConfig:
    return LayerConfig(kind="sigmoid")


def flatten() -> LayerConfig:
    return LayerConfig(kind="flatten")


def global_avg_pool() -> LayerConfig:
    return LayerConfig(kind="global_avg_pool")


def dropout(rate, seed=0) -> LayerConfig:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    return LayerConfig(kind="dropout", rate=rate, seed=seed)


def rescale(scale) -> LayerConfig:
    return LayerConfig(kind="rescale", scale=scale)


def random_flip(seed=0) -> LayerConfig:
    return LayerConfig(kind="random_flip", seed=seed)


def random_rotation(factor, seed=0) -> LayerConfig:
    if factor < 0.0:
        raise ConfigError(f"rotation factor must be >= 0, got {factor}")
    return LayerConfig(kind="random_rotation", factor=factor, seed=seed)


def random_zoom(factor, seed=0) -> LayerConfig:
    if not 0.0 <= factor < 1.0:
        raise ConfigError(f"zoom factor must be in [0, 1), got {factor}")
    return LayerConfig(kind="random_zoom", factor=factor, seed=seed)


def add() -> LayerConfig:
    return LayerConfig(kind="add")


def conv_out_size(in_size: int, k: int, stride: int, padding: str) -> int:
    """Output length of one spatial axis.

    valid: floor((in - k)/stride) + 1, requiring in >= k.
    same:  ceil(in/stride), input padded with zeros split top/bottom with the
           extra cell at the bottom/right.
    """
    if padding == "valid":
        if in_size < k:
            raise ShapeError(
                f"valid padding needs input >= kernel, got {in_size} < {k}"
            )
        return (in_size - k) // stride + 1
    return -(-in_size // stride)


def pad_before(in_size: int, k: int, stride: int, padding: str) -> int:
    """Top/left zero-padding margin for one spatial axis."""
    if padding == "valid":
        return 0
    out = -(-in_size // stride)
    total = max((out - 1) * stride + k - in_size, 0)
    return total // 2


# ---------------------------------------------------------------------------
# shape inference + parameter construction


def _conv_shapes(cfg, in_shape):
    if len(in_shape) != 3:
        raise ShapeError(f"conv needs [H,W,C] input, got {in_shape}")
    h, w, _ = in_shape
    oh = conv_out_size(h, cfg.kernel_size, cfg.stride, cfg.padding)
    ow = conv_out_size(w, cfg.kernel_size, cfg.stride, cfg.padding)
    return (oh, ow, cfg.filters)


def out_shape(cfg: LayerConfig, in_shape: tuple) -> tuple:
    """Per-item output shape (batch axis excluded)."""
    k = cfg.kind
    if k in ("conv2d", "separable_conv2d"):
        return _conv_shapes(cfg, in_shape)
    if k == "maxpool":
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool needs [H,W,C] input, got {in_shape}")
        h, w, c = in_shape
        oh = conv_out_size(h, cfg.kernel_size, cfg.stride, cfg.padding)
        ow = conv_out_size(w, cfg.kernel_size, cfg.stride, cfg.padding)
        return (oh, ow, c)
    if k == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense needs [F] input, got {in_shape}")
        return (cfg.filters,)
    if k == "flatten":
        n = 1
        for d in in_shape:
            n *= d
        return (n,)
    if k == "global_avg_pool":
        if len(in_shape) != 3:
            raise ShapeError(f"gap needs [H,W,C] input, got {in_shape}")
        return (in_shape[2],)
    # shape-preserving kinds
    return tuple(in_shape)


def init_state(cfg: LayerConfig, in_shape: tuple, layer_id: str) -> LayerState:
    """Create the layer's parameters for the given input shape.

    Initializer streams are keyed "init/<layer>/<param>" under the layer's
    init seed, so a parameter's values depend only on (seed, layer id, shape),
    never on what else the model contains.
    """
    st = LayerState()
    k = cfg.kind

    def glorot(param, seed, fan_in, fan_out, shape):
        spec = InitSpec(seed=seed, fan_in=fan_in, fan_out=fan_out)
        st.params[param] = glorot_uniform(
            spec, shape, f"init/{layer_id}/{param}"
        )

    if k == "conv2d":
        cin = in_shape[-1]
        ks = cfg.kernel_size
        glorot("kernel", cfg.seed, ks * ks * cin, ks * ks * cfg.filters,
               (ks, ks, cin, cfg.filters))
        if cfg.use_bias:
            st.params["bias"] = Tensor.zeros((cfg.filters,))
    elif k == "separable_conv2d":
        cin = in_shape[-1]
        ks = cfg.kernel_size
        glorot("depthwise", cfg.seed, ks * ks, ks * ks, (ks, ks, cin))
        glorot("pointwise", cfg.pointwise_seed, cin, cfg.filters,
               (cin, cfg.filters))
        if cfg.use_bias:
            st.params["bias"] = Tensor.zeros((cfg.filters,))
    elif k == "dense":
        fin = in_shape[-1]
        glorot("kernel", cfg.seed, fin, cfg.filters, (fin, cfg.filters))
        if cfg.use_bias:
            st.params["bias"] = Tensor.zeros((cfg.filters,))
    elif k == "batch_norm":
        c = in_shape[-1]
        st.params["gamma"] = Tensor.full((c,), 1.0)
        st.params["beta"] = Tensor.zeros((c,))
        st.buffers["moving_mean"] = Tensor.zeros((c,))
        st.buffers["moving_var"] = Tensor.full((c,), 1.0)
    return st


# ---------------------------------------------------------------------------
# forward/backward implementations


def _want_dtype(x, state):
    for t in list(state.params.values()) + list(state.buffers.values()):
        if t.dtype != x.dtype:
            raise ShapeError(
                f"dtype mismatch: input {x.dtype} vs param {t.dtype}"
            )


def _pads(cfg, h, w):
    pt = pad_before(h, cfg.kernel_size, cfg.stride, cfg.padding)
    pl = pad_before(w, cfg.kernel_size, cfg.stride, cfg.padding)
    return pt, pl


def _fwd_conv2d(cfg, state, x, ctx):
    _want_dtype(x, state)
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d needs NHWC input, got {x.shape}")
    w = state.params["kernel"].data
    if xd.shape[3] != w.shape[2]:
        raise ShapeError(
            f"conv2d channels {xd.shape[3]} != kernel cin {w.shape[2]}"
        )
    n, h, wd, _ = xd.shape
    oh, ow, co = _conv_shapes(cfg, xd.shape[1:])
    pt, pl = _pads(cfg, h, wd)
    y = np.empty((n, oh, ow, co), dtype=xd.dtype)
    kernels.conv2d_fwd(xd, w, cfg.stride, pt, pl, y)
    if cfg.use_bias:
        y = y + state.params["bias"].data
    return Tensor(y, copy=False), (xd, pt, pl)


def _bwd_conv2d(cfg, state, cache, gy, want_gx):
    xd, pt, pl = cache
    gyd = gy.data
    w = state.params["kernel"].data
    dw = np.empty_like(w)
    kernels.conv2d_bwd_weights(xd, gyd, cfg.stride, pt, pl, dw)
    grads = {"kernel": Tensor(dw, copy=False)}
    if cfg.use_bias:
        grads["bias"] = treduce("sum", gy, (0, 1, 2))
    gx = None
    if want_gx:
        dx = np.empty_like(xd)
        kernels.conv2d_bwd_input(gyd, w, cfg.stride, pt, pl, dx)
        gx = Tensor(dx, copy=False)
    return gx, grads


def _fwd_separable(cfg, state, x, ctx):
    _want_dtype(x, state)
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"separable_conv2d needs NHWC, got {x.shape}")
    dwk = state.params["depthwise"].data
    pwk = state.params["pointwise"].data
    if xd.shape[3] != dwk.shape[2]:
        raise ShapeError(
            f"sepconv channels {xd.shape[3]} != depthwise c {dwk.shape[2]}"
        )
    n, h, wd, cin = xd.shape
    oh, ow, co = _conv_shapes(cfg, xd.shape[1:])
    pt, pl = _pads(cfg, h, wd)
    mid = np.empty((n, oh, ow, cin), dtype=xd.dtype)
    kernels.depthwise_fwd(xd, dwk, cfg.stride, pt, pl, mid)
    mid2 = mid.reshape(n * oh * ow, cin)
    y2 = np.empty((n * oh * ow, co), dtype=xd.dtype)
    kernels.matmul(mid2, pwk, y2)
    y = y2.reshape(n, oh, ow, co)
    if cfg.use_bias:
        y = y + state.params["bias"].data
    return Tensor(y, copy=False), (xd, mid, pt, pl)


def _bwd_separable(cfg, state, cache, gy, want_gx):
    xd, mid, pt, pl = cache
    n, oh, ow, cin = mid.shape
    co = gy.shape[-1]
    gy2 = gy.data.reshape(n * oh * ow, co)
    mid2 = mid.reshape(n * oh * ow, cin)
    pwk = state.params["pointwise"].data
    dpw = np.empty_like(pwk)
    kernels.matmul(np.ascontiguousarray(mid2.T), gy2, dpw)
    gmid2 = np.empty_like(mid2)
    kernels.matmul(gy2, np.ascontiguousarray(pwk.T), gmid2)
    gmid = gmid2.reshape(mid.shape)
    dwk = state.params["depthwise"].data
    ddw = np.empty_like(dwk)
    kernels.depthwise_bwd_weights(xd, gmid, cfg.stride, pt, pl, ddw)
    grads = {
        "depthwise": Tensor(ddw, copy=False),
        "pointwise": Tensor(dpw, copy=False),
    }
    if cfg.use_bias:
        grads["bias"] = treduce("sum", gy, (0, 1, 2))
    gx = None
    if want_gx:
        dx = np.empty_like(xd)
        kernels.depthwise_bwd_input(gmid, dwk, cfg.stride, pt, pl, dx)
        gx = Tensor(dx, copy=False)
    return gx, grads


def _fwd_dense(cfg, state, x, ctx):
    _want_dtype(x, state)
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"dense needs [N,F] input, got {x.shape}")
    w = state.params["kernel"].data
    if xd.shape[1] != w.shape[0]:
        raise ShapeError(f"dense features {xd.shape[1]} != kernel {w.shape[0]}")
    y = np.empty((xd.shape[0], w.shape[1]), dtype=xd.dtype)
    kernels.matmul(xd, w, y)
    if cfg.use_bias:
        y = y + state.params["bias"].data
    return Tensor(y, copy=False), (xd,)


def _bwd_dense(cfg, state, cache, gy, want_gx):
    (xd,) = cache
    gyd = gy.data
    w = state.params["kernel"].data
    dw = np.empty_like(w)
    kernels.matmul(np.ascontiguousarray(xd.T), gyd, dw)
    grads = {"kernel": Tensor(dw, copy=False)}
    if cfg.use_bias:
        grads["bias"] = treduce("sum", gy, (0,))
    gx = None
    if want_gx:
        dx = np.empty_like(xd)
        kernels.matmul(gyd, np.ascontiguousarray(w.T), dx)
        gx = Tensor(dx, copy=False)
    return gx, grads


def _bn_axes(xd):
    if xd.ndim == 4:
        return (0, 1, 2)
    if xd.ndim == 2:
        return (0,)
    raise ShapeError(f"batch_norm needs NHWC or [N,F] input, got {xd.shape}")


def _fwd_batch_norm(cfg, state, x, ctx):
    """Normalize over all but the channel axis.

    Train mode uses biased batch statistics and refreshes the moving stats
    with moving = moving*momentum + batch*(1-momentum) (float32, one
    rounding per op). Inference normalizes with the moving stats. The
    normalization expression is fixed:
        xc = x - mean;  s = sqrt(var + eps);  y = (xc/s)*gamma + beta
    """
    _want_dtype(x, state)
    xd = x.data
    axes = _bn_axes(xd)
    dt = xd.dtype
    gamma = state.params["gamma"].data
    beta = state.params["beta"].data
    eps = dt.type(cfg.eps)
    if ctx.train:
        mean = treduce("mean", x, axes).data
        xc = xd - mean
        var = _mean_of(xc * xc, axes, dt)
        s = np.sqrt(var + eps)
        xn = xc / s
        y = xn * gamma + beta
        mom = dt.type(cfg.momentum)
        om = dt.type(1.0) - mom
        state.buffers["moving_mean"] = Tensor(
            state.buffers["moving_mean"].data * mom + mean * om, copy=False
        )
        state.buffers["moving_var"] = Tensor(
            state.buffers["moving_var"].data * mom + var * om, copy=False
        )
        return Tensor(y, copy=False), ("train", xn, s, axes)
    mean = state.buffers["moving_mean"].data
    var = state.buffers["moving_var"].data
    s = np.sqrt(var + eps)
    xn = (xd - mean) / s
    y = xn * gamma + beta
    return Tensor(y, copy=False), ("infer", xn, s, axes)


def _mean_of(arr, axes, dt):
    count = 1
    for a in axes:
        count *= arr.shape[a]
    total = treduce("sum", Tensor(arr, copy=False), axes).data
    return total / dt.type(count)


def _bwd_batch_norm(cfg, state, cache, gy, want_gx):
    """Standard batch-norm gradient.

    Train mode (batch statistics participate):
        dxn = gy*gamma; a = sum(dxn)/M; b = sum(dxn*xn)/M
        gx = (dxn - a - xn*b) / s
    Inference mode (stats are constants): gx = gy*gamma/s.
    """
    mode, xn, s, axes = cache
    gyd = gy.data
    gamma = state.params["gamma"].data
    dgamma = treduce("sum", Tensor(gyd * xn, copy=False), axes)
    dbeta = treduce("sum", gy, axes)
    grads = {"gamma": dgamma, "beta": dbeta}
    gx = None
    if want_gx:
        dt = gyd.dtype
        dxn = gyd * gamma
        if mode == "train":
            count = 1
            for a in axes:
                count *= gyd.shape[a]
            mf = dt.type(count)
            a = treduce("sum", Tensor(dxn, copy=False), axes).data / mf
            b = treduce("sum", Tensor(dxn * xn, copy=False), axes).data / mf
            gx = Tensor(((dxn - a) - xn * b) / s, copy=False)
        else:
            gx = Tensor(dxn / s, copy=False)
    return gx, grads


def _fwd_maxpool(cfg, state, x, ctx):
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"maxpool needs NHWC input, got {x.shape}")
    n, h, w, c = xd.shape
    oh = conv_out_size(h, cfg.kernel_size, cfg.stride, cfg.padding)
    ow = conv_out_size(w, cfg.kernel_size, cfg.stride, cfg.padding)
    pt, pl = _pads(cfg, h, w)
    y = np.empty((n, oh, ow, c), dtype=xd.dtype)
    arg = np.empty((n, oh, ow, c), dtype=np.int64)
    kernels.maxpool_fwd(xd, cfg.kernel_size, cfg.stride, pt, pl, y, arg)
    return Tensor(y, copy=False), (arg, xd.shape)


def _bwd_maxpool(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    arg, in_shape = cache
    dx = np.zeros(in_shape, dtype=gy.dtype)
    kernels.maxpool_bwd(gy.data, arg, dx)
    return Tensor(dx, copy=False), {}


def _fwd_relu(cfg, state, x, ctx):
    mask = x.data > 0
    y = np.where(mask, x.data, x.dtype.type(0))
    return Tensor(y, copy=False), (mask,)


def _bwd_relu(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    (mask,) = cache
    return Tensor(np.where(mask, gy.data, gy.dtype.type(0)), copy=False), {}


def _fwd_sigmoid(cfg, state, x, ctx):
    y = dmath.sigmoid(x.data)
    return Tensor(y, copy=False), (y,)


def _bwd_sigmoid(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    (y,) = cache
    one = gy.dtype.type(1)
    return Tensor(gy.data * y * (one - y), copy=False), {}


def _fwd_flatten(cfg, state, x, ctx):
    xd = x.data
    n = xd.shape[0]
    return Tensor(xd.reshape(n, xd.size // n), copy=False), (xd.shape,)


def _bwd_flatten(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    (shape,) = cache
    return Tensor(gy.data.reshape(shape), copy=False), {}


def _fwd_gap(cfg, state, x, ctx):
    if x.rank != 4:
        raise ShapeError(f"global_avg_pool needs NHWC input, got {x.shape}")
    y = treduce("mean", x, (1, 2))
    return y, (x.shape,)


def _bwd_gap(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    (shape,) = cache
    n, h, w, c = shape
    per = gy.data / gy.dtype.type(h * w)
    dx = np.broadcast_to(per[:, None, None, :], shape)
    return Tensor(np.ascontiguousarray(dx), copy=False), {}


def _fwd_dropout(cfg, state, x, ctx):
    if not ctx.train or cfg.rate == 0.0:
        return x, (None,)
    rng = DetRng(cfg.seed, f"dropout/{cfg.seed}/e{ctx.epoch}/b{ctx.batch}")
    u = rng.uniform(x.size).data.reshape(x.shape)
    dt = x.dtype
    scale = dt.type(1.0) / (dt.type(1.0) - dt.type(cfg.rate))
    mask = np.where(u >= np.float32(cfg.rate), scale, dt.type(0)).astype(dt)
    return Tensor(x.data * mask, copy=False), (mask,)


def _bwd_dropout(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    (mask,) = cache
    if mask is None:
        return gy, {}
    return Tensor(gy.data * mask, copy=False), {}


def _fwd_rescale(cfg, state, x, ctx):
    sc = x.dtype.type(cfg.scale)
    return Tensor(x.data * sc, copy=False), (None,)


def _bwd_rescale(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    sc = gy.dtype.type(cfg.scale)
    return Tensor(gy.data * sc, copy=False), {}


def _aug_rng(cfg, op, ctx):
    label = f"augment/{op}/{cfg.seed}/e{ctx.epoch}/b{ctx.batch}"
    return DetRng(cfg.seed, label)


def _fwd_random_flip(cfg, state, x, ctx):
    if not ctx.train:
        return x, (None,)
    if x.rank != 4:
        raise ShapeError(f"random_flip needs NHWC input, got {x.shape}")
    u = _aug_rng(cfg, "flip", ctx).uniform(x.shape[0]).data
    flip = u < np.float32(0.5)
    y = x.data.copy()
    for i in np.nonzero(flip)[0]:
        y[i] = x.data[i, :, ::-1, :]
    return Tensor(y, copy=False), (flip,)


def _bwd_random_flip(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    (flip,) = cache
    if flip is None:
        return gy, {}
    dx = gy.data.copy()
    for i in np.nonzero(flip)[0]:
        dx[i] = gy.data[i, :, ::-1, :]
    return Tensor(dx, copy=False), {}


def _warp_fwd(x, sy, sx):
    n = x.shape[0]
    y = np.empty_like(x.data)
    for i in range(n):
        y[i] = bilinear_gather(x.data[i], sy[i], sx[i])
    return y


def _warp_bwd(gy, sy, sx, in_shape):
    """Scatter bilinear-sample gradients back to the source grid.

    np.add.at applies updates strictly in element order, so collisions
    accumulate in a fixed row-major sequence per image.
    """
    n, h, w, _ = in_shape
    dt = gy.dtype
    dx = np.zeros(in_shape, dtype=dt)
    one = dt.type(1)
    for i in range(n):
        cy = np.clip(sy[i], 0.0, float(h - 1))
        cx = np.clip(sx[i], 0.0, float(w - 1))
        y0 = np.floor(cy).astype(np.int64)
        x0 = np.floor(cx).astype(np.int64)
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        fy = (cy - y0).astype(dt)[..., None]
        fx = (cx - x0).astype(dt)[..., None]
        g = gy.data[i]
        np.add.at(dx[i], (y0, x0), g * ((one - fx) * (one - fy)))
        np.add.at(dx[i], (y0, x1), g * (fx * (one - fy)))
        np.add.at(dx[i], (y1, x0), g * ((one - fx) * fy))
        np.add.at(dx[i], (y1, x1), g * (fx * fy))
    return dx


def _dest_offsets(h, w):
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    dy = np.arange(h, dtype=np.float64)[:, None] - cy
    dx = np.arange(w, dtype=np.float64)[None, :] - cx
    return cy, cx, dy, dx


def _fwd_random_rotation(cfg, state, x, ctx):
    if not ctx.train:
        return x, (None, None)
    if x.rank != 4:
        raise ShapeError(f"random_rotation needs NHWC input, got {x.shape}")
    n, h, w, _ = x.shape
    u = _aug_rng(cfg, "rotation", ctx).uniform(n).data.astype(np.float64)
    theta = (2.0 * u - 1.0) * (cfg.factor * _TWO_PI)
    ct = dmath.cos(theta)
    st = dmath.sin(theta)
    cy, cx, dy, dx = _dest_offsets(h, w)
    # inverse mapping: src = centre + R(-theta) . (dest - centre)
    sy = cy + (ct[:, None, None] * dy - st[:, None, None] * dx)
    sx = cx + (st[:, None, None] * dy + ct[:, None, None] * dx)
    return Tensor(_warp_fwd(x, sy, sx), copy=False), (sy, sx)


def _fwd_random_zoom(cfg, state, x, ctx):
    if not ctx.train:
        return x, (None, None)
    if x.rank != 4:
        raise ShapeError(f"random_zoom needs NHWC input, got {x.shape}")
    n, h, w, _ = x.shape
    u = _aug_rng(cfg, "zoom", ctx).uniform(2 * n).data.astype(np.float64)
    u = u.reshape(n, 2)
    sh = 1.0 + (2.0 * u[:, 0] - 1.0) * cfg.factor
    sw = 1.0 + (2.0 * u[:, 1] - 1.0) * cfg.factor
    cy, cx, dy, dx = _dest_offsets(h, w)
    sy = cy + dy[None, :, :] / sh[:, None, None]
    sx = cx + dx[None, :, :] / sw[:, None, None]
    return Tensor(_warp_fwd(x, sy, sx), copy=False), (sy, sx)


def _bwd_warp(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    sy, sx = cache
    if sy is None:
        return gy, {}
    return Tensor(_warp_bwd(gy, sy, sx, gy.shape), copy=False), {}


def _fwd_add(cfg, state, xs, ctx):
    a, b = xs
    if a.shape != b.shape or a.dtype != b.dtype:
        raise ShapeError(f"add needs matching tensors, got {a.shape}/{b.shape}")
    return Tensor(a.data + b.data, copy=False), (None,)


def _bwd_add(cfg, state, cache, gy, want_gx):
    if not want_gx:
        return None, {}
    return (gy, gy), {}


FORWARD = {
    "conv2d": _fwd_conv2d,
    "separable_conv2d": _fwd_separable,
    "dense": _fwd_dense,
    "batch_norm": _fwd_batch_norm,
    "maxpool": _fwd_maxpool,
    "relu": _fwd_relu,
    "sigmoid": _fwd_sigmoid,
    "flatten": _fwd_flatten,
    "global_avg_pool": _fwd_gap,
    "dropout": _fwd_dropout,
    "rescale": _fwd_rescale,
    "random_flip": _fwd_random_flip,
    "random_rotation": _fwd_random_rotation,
    "random_zoom": _fwd_random_zoom,
    "add": _fwd_add,
}

BACKWARD = {
    "conv2d": _bwd_conv2d,
    "separable_conv2d": _bwd_separable,
    "dense": _bwd_dense,
    "batch_norm": _bwd_batch_norm,
    "maxpool": _bwd_maxpool,
    "relu": _bwd_relu,
    "sigmoid": _bwd_sigmoid,
    "flatten": _bwd_flatten,
    "global_avg_pool": _bwd_gap,
    "dropout": _bwd_dropout,
    "rescale": _bwd_rescale,
    "random_flip": _bwd_random_flip,
    "random_rotation": _bwd_warp,
    "random_zoom": _bwd_warp,
    "add": _bwd_add,
}


def forward(cfg, state, x, ctx):
    try:
        fn = FORWARD[cfg.kind]
    except KeyError:
        raise ConfigError(f"unknown layer kind {cfg.kind!r}")
    return fn(cfg, state, x, ctx)


def backward(cfg, state, cache, gy, want_input_grad=True):
    try:
        fn = BACKWARD[cfg.kind]
    except KeyError:
        raise ConfigError(f"unknown layer kind {cfg.kind!r}")
    return fn(cfg, state, cache, gy, want_input_grad)
