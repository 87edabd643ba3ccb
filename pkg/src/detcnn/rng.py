"""Counter-based splittable random streams.

Every random draw in the engine is a pure function of (seed, label, counter),
so any stream can be replayed from its coordinates alone: no hidden global
state, no draw-order coupling between components. Streams are derived by
hashing a text label (FNV-1a 64) into the seed and running the splitmix64
finalizer over key + counter * GOLDEN. Uniform floats keep the top 24 bits of
the mixed word, which map exactly onto the float32 grid k * 2^-24 in [0, 1).

Label conventions used across the engine (one stream per purpose; the stream
seed is the matching component seed):
  init/<layer>/<param>            weight init, counter = element index
  dropout/<seed>/e<E>/b<B>        one mask element per counter
  augment/<op>/<seed>/e<E>/b<B>   per-image draws, fixed draws per image
  shuffle/epoch-<E>               epoch shuffle
  synth/<seed>                    synthetic dataset generation
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensor import Tensor

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix_int(z: int) -> int:
    """splitmix64 finalizer on a python int (mod 2^64)."""
    z &= _MASK
    z = (z ^ (z >> 30)) * _MIX1 & _MASK
    z = (z ^ (z >> 27)) * _MIX2 & _MASK
    return z ^ (z >> 31)


def _fnv1a(label: str) -> int:
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = (h ^ byte) * _FNV_PRIME & _MASK
    return h


def _mix_array(z: np.ndarray) -> np.ndarray:
    # uint64 array ops wrap silently; scalars would warn, hence np.uint64
    # constants applied to arrays only.
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, label: str) -> int:
    """Derive the 64-bit stream key for (seed, label)."""
    if not 0 <= seed <= _MASK:
        raise ConfigError(f"seed must fit in uint64, got {seed}")
    return _mix_int(seed ^ _fnv1a(label))


@dataclass
class DetRng:
    """One random stream, identified by (seed, label); counter advances as
    values are drawn. Reconstructing with the same coordinates replays the
    stream exactly.
    """

    seed: int
    label: str
    counter: int = 0
    _key: int = field(init=False, repr=False)

    def __post_init__(self):
        if self.counter < 0:
            raise ConfigError(f"counter must be >= 0, got {self.counter}")
        object.__setattr__(self, "_key", stream_key(self.seed, self.label))

    def split(self, sub: str) -> "DetRng":
        """Child stream with an extended label and a fresh counter."""
        return DetRng(self.seed, f"{self.label}/{sub}")

    def raw(self, n: int) -> np.ndarray:
        """Next n mixed 64-bit words as a uint64 array."""
        if n < 0:
            raise ConfigError(f"draw count must be >= 0, got {n}")
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self._key) + idx * np.uint64(GOLDEN)
        return _mix_array(z)

    def uniform(self, n: int) -> Tensor:
        """n floats in [0, 1) on the 2^-24 grid (exact in float32)."""
        bits = self.raw(n) >> np.uint64(40)
        vals = bits.astype(np.float32) * np.float32(2.0 ** -24)
        return Tensor(vals, copy=False)

    @property
    def state(self) -> tuple:
        return (self.seed, self.label, self.counter)

    @staticmethod
    def from_state(state: tuple) -> "DetRng":
        seed, label, counter = state
        return DetRng(int(seed), str(label), int(counter))


@dataclass(frozen=True)
class InitSpec:
    """Weight-initializer description: scheme plus the fan pair that sets the
    Glorot limit. fan_in/fan_out follow the parameter kind (dense: in/out
    features; conv kernel: k*k*cin / k*k*cout; depthwise: k*k / k*k;
    pointwise: cin / cout).
    """

    seed: int
    fan_in: int
    fan_out: int
    kind: str = "glorot_uniform"

    def __post_init__(self):
        if self.kind != "glorot_uniform":
            raise ConfigError(f"unknown init kind {self.kind!r}")
        if self.seed < 0 or self.seed > _MASK:
            raise ConfigError(f"init seed must fit in uint64, got {self.seed}")
        if self.fan_in < 1 or self.fan_out < 1:
            raise ConfigError(
                f"fans must be >= 1, got ({self.fan_in}, {self.fan_out})"
            )


def glorot_uniform(spec: InitSpec, shape, label: str) -> Tensor:
    """Glorot-uniform tensor for (spec.seed, label).

    limit = sqrt(6 / (fan_in + fan_out)) computed in float64 and rounded to
    float32 once; values = (u * 2 - 1) * limit over the uniform stream, filled
    in row-major element order.
    """
    dims = tuple(int(d) for d in shape)
    n = 1
    for d in dims:
        n *= d
    limit = np.float32(np.sqrt(6.0 / (spec.fan_in + spec.fan_out)))
    rng = DetRng(spec.seed, label)
    u = rng.uniform(n).data
    vals = (u * np.float32(2.0) - np.float32(1.0)) * limit
    return Tensor(vals.reshape(dims), copy=False)


def shuffle_permutation(rng: DetRng, n: int) -> np.ndarray:
    """Deterministic Fisher-Yates permutation of range(n).

    Walks i from n-1 down to 1 swapping with j = draw mod (i+1); draw k of
    the stream serves index i = n-1-k. The modulo bias is below 2^-40 for
    realistic n and is accepted as documented.
    """
    if n < 0:
        raise ConfigError(f"permutation size must be >= 0, got {n}")
    perm = np.arange(n, dtype=np.int64)
    if n < 2:
        return perm
    draws = rng.raw(n - 1)
    for k in range(n - 1):
        i = n - 1 - k
        j = int(draws[k]) % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm
