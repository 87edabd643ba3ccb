"""The two reference architectures.

Both are binary classifiers over [pdim, pdim, 3] images in the 0..255 value
range: augmentation (flip / rotate 0.1 / zoom 0.2) runs in train mode only,
a 1/255 rescale feeds the conv stack, and a single sigmoid unit ends it.

convnet: five 3x3 valid-padding conv+relu stages (32/64/128/256/256), 2x2
max-pool after the first four, then flatten, dropout 0.5, dense 1. A stage
whose spatial input is smaller than its kernel switches to same padding, a
family rule that keeps small working resolutions buildable; at pdim >= 78
nothing ever switches, and at the default 180 the trace ends 9 -> 7 with a
12544-wide flatten (991,041 trainable parameters).

mini_xception: a 5x5 valid entry conv (32, no bias), then five residual
blocks for sizes 32/64/128/256/512. Each block is bn-relu-sepconv twice, a
3x3 stride-2 same max-pool, and a 1x1 stride-2 conv residual added to the
pool output (718,849 trainable parameters at any pdim). The "gpu" variant
replaces each separable conv with a dense 3x3 conv and drops the residual
connections, leaving plain bn-relu-conv chains.
"""

from dataclasses import asdict, dataclass

from . import layers as L
from .errors import ConfigError
from .graph import ModelGraph

DEFAULT_PDIM = 180


@dataclass(frozen=True)
class SeedSet:
    """Every stream seed the models use. The split keeps components
    independent: reseeding one leaves the draws of the others untouched.
    """

    global_seed: int = 1001
    kernel: int = 1
    pointwise: int = 2
    dropout: int = 7001
    augmentation: int = 1

    def as_meta(self) -> dict:
        return {f"seed_{k}": v for k, v in asdict(self).items()}


def _augment_and_rescale(g: ModelGraph, seeds: SeedSet):
    g.add("flip", L.random_flip(seed=seeds.augmentation))
    g.add("rotation", L.random_rotation(0.1, seed=seeds.augmentation))
    g.add("zoom", L.random_zoom(0.2, seed=seeds.augmentation))
    g.add("rescale", L.rescale(1.0 / 255.0))


def build_convnet(pdim: int = DEFAULT_PDIM, seeds: SeedSet = None) -> ModelGraph:
    if pdim < 48:
        raise ConfigError(f"convnet needs pdim >= 48, got {pdim}")
    seeds = seeds or SeedSet()
    meta = {"model": "convnet", "pdim": pdim, **seeds.as_meta()}
    g = ModelGraph("convnet", (pdim, pdim, 3), meta)
    _augment_and_rescale(g, seeds)
    h = pdim
    stages = [(32, True), (64, True), (128, True), (256, True), (256, False)]
    for i, (filters, pool) in enumerate(stages, start=1):
        padding = "valid" if h >= 3 else "same"
        g.add(f"conv{i}", L.conv2d(filters, 3, padding=padding,
                                   seed=seeds.kernel))
        g.add(f"relu{i}", L.relu())
        h = L.conv_out_size(h, 3, 1, padding)
        if pool:
            g.add(f"pool{i}", L.maxpool(2))
            h = L.conv_out_size(h, 2, 2, "valid")
    g.add("flatten", L.flatten())
    g.add("dropout", L.dropout(0.5, seed=seeds.dropout))
    g.add("dense", L.dense(1, seed=seeds.kernel))
    g.add("sigmoid", L.sigmoid())
    return g


def build_mini_xception(
    pdim: int = DEFAULT_PDIM, seeds: SeedSet = None, variant: str = "cpu_det"
) -> ModelGraph:
    if variant not in ("cpu_det", "gpu_det"):
        raise ConfigError(f"unknown variant {variant!r}")
    if pdim < 32:
        raise ConfigError(f"mini_xception needs pdim >= 32, got {pdim}")
    seeds = seeds or SeedSet()
    build_name = (
        "mini_xception" if variant == "cpu_det" else "mini_xception_gpu"
    )
    meta = {
        "model": build_name,
        "pdim": pdim,
        "variant": variant,
        **seeds.as_meta(),
    }
    g = ModelGraph("mini_xception", (pdim, pdim, 3), meta)
    _augment_and_rescale(g, seeds)
    g.add("entry_conv", L.conv2d(32, 5, use_bias=False, seed=seeds.kernel))
    previous = "entry_conv"
    for size in (32, 64, 128, 256, 512):
        b = f"block{size}"
        g.add(f"{b}_bn1", L.batch_norm(), [previous])
        g.add(f"{b}_relu1", L.relu())
        if variant == "cpu_det":
            g.add(f"{b}_sep1", L.separable_conv2d(
                size, 3, seed=seeds.kernel, pointwise_seed=seeds.pointwise))
        else:
            g.add(f"{b}_conv1", L.conv2d(size, 3, padding="same",
                                         use_bias=False, seed=seeds.kernel))
        g.add(f"{b}_bn2", L.batch_norm())
        g.add(f"{b}_relu2", L.relu())
        if variant == "cpu_det":
            g.add(f"{b}_sep2", L.separable_conv2d(
                size, 3, seed=seeds.kernel, pointwise_seed=seeds.pointwise))
        else:
            g.add(f"{b}_conv2", L.conv2d(size, 3, padding="same",
                                         use_bias=False, seed=seeds.kernel))
        g.add(f"{b}_pool", L.maxpool(3, stride=2, padding="same"))
        if variant == "cpu_det":
            g.add(f"{b}_res", L.conv2d(size, 1, stride=2, padding="same",
                                       use_bias=False, seed=seeds.kernel),
                  [previous])
            g.add(f"{b}_add", L.add(), [f"{b}_pool", f"{b}_res"])
            previous = f"{b}_add"
        else:
            previous = f"{b}_pool"
    g.add("gap", L.global_avg_pool(), [previous])
    g.add("dropout", L.dropout(0.5, seed=seeds.dropout))
    g.add("dense", L.dense(1, seed=seeds.kernel))
    g.add("sigmoid", L.sigmoid())
    return g


_BUILDERS = {
    "convnet": lambda pdim, seeds: build_convnet(pdim, seeds),
    "mini_xception": lambda pdim, seeds: build_mini_xception(pdim, seeds),
    "mini_xception_gpu": lambda pdim, seeds: build_mini_xception(
        pdim, seeds, variant="gpu_det"
    ),
}

MODEL_NAMES = tuple(sorted(_BUILDERS))


def build_model(name: str, pdim: int, seeds: SeedSet = None) -> ModelGraph:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ConfigError(
            f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}"
        )
    return builder(pdim, seeds or SeedSet())
