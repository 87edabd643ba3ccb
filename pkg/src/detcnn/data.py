"""Images and datasets.

Image I/O is binary PPM (P6, maxval 255) only: a format simple enough to
parse and emit byte-identically everywhere, with no compression or library
variance. Pixels live as float32 in the 0..255 range end to end; the model's
own rescale layer divides by 255.

A Dataset is item-ordered and carries a content digest (SHA-256 over each
item's label byte and resized float32 pixel bytes, in order) that the run
manifest records, so two runs can prove they saw identical inputs.
"""

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .rng import DetRng
from .tensor import Tensor, bilinear_resize


def decode_ppm(data: bytes) -> Tensor:
    """Parse binary PPM bytes to a [H,W,3] float32 tensor in 0..255.

    Header comments (#...) are allowed; only maxval 255 is supported. The
    payload must hold exactly 3*W*H bytes.
    """
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos:pos + 1] != b"\n":
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("ppm: truncated header")
        return data[start:pos]

    if token() != b"P6":
        raise DataError("ppm: not a P6 file")
    try:
        w = int(token())
        h = int(token())
        maxval = int(token())
    except ValueError:
        raise DataError("ppm: malformed header field")
    if w < 1 or h < 1:
        raise DataError(f"ppm: bad dimensions {w}x{h}")
    if maxval != 255:
        raise DataError(f"ppm: unsupported maxval {maxval}, need 255")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise DataError(
            f"ppm: payload has {len(payload)} bytes, need {3 * w * h}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return Tensor(arr.astype(np.float32), copy=False)


def encode_ppm(t: Tensor) -> bytes:
    """[H,W,3] float tensor (0..255 domain) to binary PPM bytes.

    Values are rounded half-to-even and clipped to 0..255, making encoding
    a pure function of the tensor bits.
    """
    if t.rank != 3 or t.shape[2] != 3:
        raise DataError(f"encode_ppm needs [H,W,3], got {t.shape}")
    h, w, _ = t.shape
    vals = np.clip(np.rint(t.data), 0.0, 255.0).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + vals.tobytes()


def read_image(path: str) -> Tensor:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}")
    try:
        return decode_ppm(raw)
    except DataError as e:
        raise DataError(f"{path}: {e}")


def write_image(path: str, t: Tensor):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(t))


@dataclass
class Dataset:
    x: np.ndarray  # [N, H, W, 3] float32, 0..255
    y: np.ndarray  # [N] int64, 0/1
    names: list
    classes: tuple
    digest: str

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        x = np.ascontiguousarray(self.x[idx])
        y = np.ascontiguousarray(self.y[idx])
        return Dataset(
            x=x,
            y=y,
            names=[self.names[i] for i in idx],
            classes=self.classes,
            digest=dataset_digest(x, y),
        )


def dataset_digest(x: np.ndarray, y: np.ndarray) -> str:
    """SHA-256 over (label byte, float32 pixel bytes) per item, in order."""
    h = hashlib.sha256()
    for i in range(x.shape[0]):
        h.update(bytes([int(y[i]) & 0xFF]))
        h.update(np.ascontiguousarray(x[i], dtype="<f4").tobytes())
    return h.hexdigest()


def _make(x_list, y_list, names, classes) -> Dataset:
    x = np.ascontiguousarray(np.stack(x_list), dtype=np.float32)
    y = np.asarray(y_list, dtype=np.int64)
    return Dataset(x, y, names, classes, dataset_digest(x, y))


def load_dataset(root: str, pdim: int) -> Dataset:
    """Load a two-class image tree: root/<class0>/*.ppm, root/<class1>/*.ppm.

    Class directories are ordered lexicographically (labels 0 and 1), files
    likewise within each class: the item order, and with it the digest, is a
    pure function of the tree. Every image is resized to [pdim, pdim] with
    the engine's bilinear resampler; any unreadable file is a hard error.
    """
    if pdim < 1:
        raise ConfigError(f"pdim must be >= 1, got {pdim}")
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} is not a directory")
    dirs = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if len(dirs) != 2:
        raise DataError(
            f"dataset root must hold exactly 2 class dirs, found {dirs}"
        )
    xs, ys, names = [], [], []
    for label, d in enumerate(dirs):
        files = sorted(
            f for f in os.listdir(os.path.join(root, d))
            if f.endswith(".ppm")
        )
        if not files:
            raise DataError(f"class dir {d!r} has no .ppm files")
        for f in files:
            img = read_image(os.path.join(root, d, f))
            if img.shape[:2] != (pdim, pdim):
                img = bilinear_resize(img, pdim, pdim)
            xs.append(img.data)
            ys.append(label)
            names.append(f"{d}/{f}")
    return _make(xs, ys, names, (dirs[0], dirs[1]))


def synth_blobs(n: int, pdim: int, seed: int) -> Dataset:
    """Generate n blob images: even items are class 0 (dark background,
    bright disc), odd items class 1 (bright background, dark disc).

    All draws come from stream "synth/<seed>" with 8 counters reserved per
    image (background level, disc level, centre x, centre y, radius, three
    spare). Backgrounds are uniform in [20, 60] or [200, 240], discs the
    other range; centres in the middle half of the frame; radius in
    [pdim/8, pdim/4]. The disc covers under 20% of the frame, so the class
    mean separates at the 130 grey level by construction.
    """
    if n < 1:
        raise ConfigError(f"synth size must be >= 1, got {n}")
    if pdim < 8:
        raise ConfigError(f"synth pdim must be >= 8, got {pdim}")
    u = DetRng(seed, f"synth/{seed}").uniform(8 * n).data.astype(np.float64)
    yy = np.arange(pdim, dtype=np.float64)[:, None]
    xx = np.arange(pdim, dtype=np.float64)[None, :]
    xs, ys, names = [], [], []
    for i in range(n):
        u0, u1, u2, u3, u4 = u[8 * i:8 * i + 5]
        label = i % 2
        lo = 20.0 + u0 * 40.0
        hi = 200.0 + u1 * 40.0
        bg, fg = (lo, hi) if label == 0 else (hi, lo)
        cx = (0.25 + 0.5 * u2) * pdim
        cy = (0.25 + 0.5 * u3) * pdim
        r = (0.125 + 0.125 * u4) * pdim
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        plane = np.where(mask, np.float32(fg), np.float32(bg))
        img = np.repeat(plane[:, :, None], 3, axis=2).astype(np.float32)
        xs.append(img)
        ys.append(label)
        names.append(f"synth-{i:05d}")
    return _make(xs, ys, names, ("bright_blob", "dark_blob"))


def split_train_val(ds: Dataset):
    """Fixed split: first 3/4 of the items train, final 1/4 validates.

    Requires a multiple of 4 so both sides stay label-balanced under the
    alternating synthetic labels.
    """
    if ds.n % 4 != 0 or ds.n < 4:
        raise ConfigError(
            f"split needs a positive multiple of 4 items, got {ds.n}"
        )
    cut = 3 * ds.n // 4
    return ds.take(range(cut)), ds.take(range(cut, ds.n))
