"""Weight container: a tiny, fully specified binary format.

Layout (all integers little-endian):

    magic   4 bytes  b"DCW1"
    u32     version, currently 1
    u32     tensor count
    per tensor:
        u16     name length, then that many UTF-8 bytes
        u8      flags: bit 0 set = trainable
        u8      dtype tag: 0 = float32, 1 = float64
        u8      rank
        u32[r]  dims
        raw     payload, '<f4'/'<f8' C-order bytes
    sha256  32 bytes over everything above

Tensors appear in the graph's canonical registry order (trainables first,
then buffers), so the file is byte-identical for bit-identical models.
Loading verifies the digest before touching any tensor, and a mismatch
against the target graph's registry (names, order, shapes, dtypes) is an
error rather than a partial load.
"""

import hashlib
import struct

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    ChecksumMismatch,
    TensorMismatch,
    Truncated,
)
from .tensor import Tensor

MAGIC = b"DCW1"
VERSION = 1
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: "<f4", 1: "<f8"}


def pack_tensors(rows) -> bytes:
    """Serialize [(name, Tensor, trainable)] to container bytes."""
    out = [MAGIC, struct.pack("<II", VERSION, len(rows))]
    for name, t, trainable in rows:
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise TensorMismatch(f"tensor name too long: {name!r}")
        flags = 1 if trainable else 0
        tag = _TAGS[t.dtype]
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<BBB", flags, tag, t.rank))
        out.append(struct.pack(f"<{t.rank}I", *t.shape))
        out.append(t.data.astype(_DTYPES[tag], copy=False).tobytes())
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncated(
                f"file ends at byte {len(self.buf)}, needed {self.pos + n}"
            )
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b


def unpack_tensors(data: bytes):
    """Parse container bytes to [(name, Tensor, trainable)], verifying the
    trailing digest first."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not a DCW1 weight container")
    if len(data) < 44:
        raise Truncated("container shorter than header plus digest")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch("container digest does not match contents")
    rd = _Reader(body)
    rd.take(4)
    version, count = struct.unpack("<II", rd.take(8))
    if version != VERSION:
        raise BadVersion(f"unsupported container version {version}")
    rows = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", rd.take(2))
        name = rd.take(nlen).decode("utf-8")
        flags, tag, rank = struct.unpack("<BBB", rd.take(3))
        if tag not in _DTYPES:
            raise TensorMismatch(f"unknown dtype tag {tag} for {name!r}")
        if not 1 <= rank <= 4:
            raise TensorMismatch(f"bad rank {rank} for {name!r}")
        dims = struct.unpack(f"<{rank}I", rd.take(4 * rank))
        n = 1
        for d in dims:
            n *= d
        itemsize = 4 if tag == 0 else 8
        payload = rd.take(n * itemsize)
        arr = np.frombuffer(payload, dtype=_DTYPES[tag]).reshape(dims)
        rows.append((name, Tensor(arr), bool(flags & 1)))
    if rd.pos != len(body):
        raise TensorMismatch(
            f"{len(body) - rd.pos} trailing bytes after declared tensors"
        )
    return rows


def save_weights(graph, path: str):
    """Write the graph's registry to path in canonical order."""
    with open(path, "wb") as fh:
        fh.write(pack_tensors(graph.registry()))


def load_weights(graph, path: str):
    """Load a container into the graph, in place.

    The file must carry exactly the graph's registry: same tensor names in
    the same canonical order, same shapes, same trainable flags. Values are
    assigned bit-for-bit.
    """
    with open(path, "rb") as fh:
        rows = unpack_tensors(fh.read())
    reg = graph.registry()
    if len(rows) != len(reg):
        raise TensorMismatch(
            f"file has {len(rows)} tensors, model has {len(reg)}"
        )
    for (fname, ft, ftr), (gname, gt, gtr) in zip(rows, reg):
        if fname != gname:
            raise TensorMismatch(f"tensor {fname!r}, expected {gname!r}")
        if ftr != gtr:
            raise TensorMismatch(f"{fname!r}: trainable flag mismatch")
        if ft.shape != gt.shape:
            raise TensorMismatch(
                f"{fname!r}: shape {ft.shape}, expected {gt.shape}"
            )
        if ft.dtype != gt.dtype:
            raise TensorMismatch(
                f"{fname!r}: dtype {ft.dtype}, expected {gt.dtype}"
            )
    for fname, ft, _ in rows:
        graph.set_tensor(fname, ft)
