"""Reproducibility harness: fingerprints, run manifests, run comparison.

A training run leaves a directory with five artifacts:

    weights.dcw    the model tensors (canonical order, digest-protected)
    manifest.txt   flat "key = value" lines, sorted by key: config echo,
                   seeds, dataset digests, environment capture, per-epoch
                   metrics, weight fingerprint, wall time
    epochs.ndtxt   per-epoch metric lines, byte-identical across reruns
    arch.txt       the architecture rendering, used for equality checks
    metrics.ppm    a small plot of the metric curves

compare_runs() reads two such directories and classifies them as
bit-identical (equal weight fingerprints), numerically-close (every weight
differs by less than 1e-4), or diverged, alongside config/metric/excerpt
details, so "same result?" has one canonical answer.
"""

import hashlib
import os
import platform
import socket
import struct
import sys
from dataclasses import dataclass, field

import numpy as np

from . import plotppm, weights_io, zoo
from .errors import ConfigError, DataError
from .layers import Ctx
from .tensor import Tensor
from .tensor import reduce as treduce
from .training import TrainConfig, metrics_lines
from .zoo import SeedSet

CLOSE_TOL = 1e-4

WEIGHTS_FILE = "weights.dcw"
MANIFEST_FILE = "manifest.txt"
EPOCHS_FILE = "epochs.ndtxt"
ARCH_FILE = "arch.txt"
PLOT_FILE = "metrics.ppm"


def fingerprint(graph) -> str:
    """SHA-256 over the canonical weight stream.

    Per tensor (trainables first, then buffers, registry order): UTF-8 name,
    a NUL, rank as one byte, dims as little-endian u32, then the raw
    little-endian payload. Two models share a fingerprint iff every weight
    bit matches.
    """
    h = hashlib.sha256()
    for name, t, _ in graph.registry():
        h.update(name.encode("utf-8"))
        h.update(b"\0")
        h.update(struct.pack("<B", t.rank))
        h.update(struct.pack(f"<{t.rank}I", *t.shape))
        tag = "<f4" if t.dtype == np.float32 else "<f8"
        h.update(t.data.astype(tag, copy=False).tobytes())
    return h.hexdigest()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(np.float32(v)))
    return str(v)


@dataclass
class RunManifest:
    entries: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for k in sorted(self.entries):
            v = str(self.entries[k]).replace("\n", " ")
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "RunManifest":
        entries = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            if " = " not in line:
                raise DataError(f"manifest: malformed line {line!r}")
            k, v = line.split(" = ", 1)
            entries[k] = v
        return RunManifest(entries)

    def get(self, key: str, default=None):
        return self.entries.get(key, default)


def _env_entries() -> dict:
    ent = {
        "env.hostname": socket.gethostname(),
        "env.platform": platform.platform(),
        "env.python": sys.version.split()[0],
        "env.numpy": np.__version__,
    }
    import numba

    ent["env.numba"] = numba.__version__
    for k in sorted(os.environ):
        if k.startswith("DET_") or k == "PYTHONHASHSEED":
            ent[f"env.{k}"] = os.environ[k]
    return ent


def build_manifest(graph, cfg: TrainConfig, records, train_ds, val_ds,
                   threads_effective: int) -> RunManifest:
    ent = {"engine.version": "1.0.0"}
    for k, v in graph.meta.items():
        if k.startswith("seed_"):
            ent[f"seeds.{k[5:]}"] = str(v)
        else:
            ent[f"model.{k}"] = str(v)
    ent["model.trainable_params"] = str(graph.count_trainable())
    ent["config.epochs"] = str(cfg.epochs)
    ent["config.batch_size"] = str(cfg.batch_size)
    ent["config.learning_rate"] = _fmt(cfg.learning_rate)
    ent["config.rho"] = _fmt(cfg.rho)
    ent["config.epsilon"] = _fmt(cfg.epsilon)
    ent["config.seed"] = str(cfg.seed)
    ent["config.threads_requested"] = str(cfg.threads)
    ent["config.threads_effective"] = str(threads_effective)
    ent["data.train_digest"] = train_ds.digest
    ent["data.val_digest"] = val_ds.digest
    ent["data.train_items"] = str(train_ds.n)
    ent["data.val_items"] = str(val_ds.n)
    ent["data.classes"] = ",".join(train_ds.classes)
    for r in records:
        p = f"epoch.{r.epoch:04d}"
        ent[f"{p}.train_loss"] = _fmt(r.train_loss)
        ent[f"{p}.train_acc"] = _fmt(r.train_acc)
        ent[f"{p}.val_loss"] = _fmt(r.val_loss)
        ent[f"{p}.val_acc"] = _fmt(r.val_acc)
    ent["fingerprint.weights"] = fingerprint(graph)
    ent["run.wall_time_s"] = repr(
        round(sum(r.wall_time_s for r in records), 3)
    )
    ent.update(_env_entries())
    return RunManifest(ent)


def write_run_dir(run_dir: str, graph, manifest: RunManifest, records):
    os.makedirs(run_dir, exist_ok=True)
    weights_io.save_weights(graph, os.path.join(run_dir, WEIGHTS_FILE))
    with open(os.path.join(run_dir, MANIFEST_FILE), "w") as fh:
        fh.write(manifest.to_text())
    with open(os.path.join(run_dir, EPOCHS_FILE), "w") as fh:
        fh.write(metrics_lines(records))
    with open(os.path.join(run_dir, ARCH_FILE), "w") as fh:
        fh.write(graph.describe())
    plotppm.write_metrics_plot(
        os.path.join(run_dir, PLOT_FILE), records
    )


def load_run(run_dir: str):
    """Rebuild the model of a run directory: architecture from the manifest,
    weights from the container. Returns (graph, manifest)."""
    mpath = os.path.join(run_dir, MANIFEST_FILE)
    wpath = os.path.join(run_dir, WEIGHTS_FILE)
    if not os.path.isfile(mpath) or not os.path.isfile(wpath):
        raise DataError(
            f"{run_dir!r} is not a trained run directory (needs"
            f" {MANIFEST_FILE} and {WEIGHTS_FILE})"
        )
    with open(mpath) as fh:
        manifest = RunManifest.from_text(fh.read())
    name = manifest.get("model.model")
    pdim = manifest.get("model.pdim")
    if name is None or pdim is None:
        raise DataError("manifest lacks model.model/model.pdim")
    seeds = SeedSet(
        global_seed=int(manifest.get("seeds.global_seed", 1001)),
        kernel=int(manifest.get("seeds.kernel", 1)),
        pointwise=int(manifest.get("seeds.pointwise", 2)),
        dropout=int(manifest.get("seeds.dropout", 7001)),
        augmentation=int(manifest.get("seeds.augmentation", 1)),
    )
    graph = zoo.build_model(name, int(pdim), seeds)
    weights_io.load_weights(graph, wpath)
    return graph, manifest


# ---------------------------------------------------------------------------
# run comparison


_COMPARE_PREFIXES = ("model.", "seeds.", "config.", "data.")


@dataclass
class CompareReport:
    verdict: str
    same_architecture: bool
    same_config: bool
    config_diffs: list
    metrics_identical: bool
    fingerprint_a: str
    fingerprint_b: str
    max_abs_diff: float
    worst_tensor: str
    excerpts: list  # (label, values_a, values_b)

    def render(self) -> str:
        lines = [
            f"verdict: {self.verdict}",
            f"architecture: {'same' if self.same_architecture else 'DIFFERENT'}",
            f"config: {'same' if self.same_config else 'DIFFERENT'}",
        ]
        for d in self.config_diffs:
            lines.append(f"  config diff: {d}")
        lines.append(
            "epoch metrics: "
            + ("byte-identical" if self.metrics_identical else "differ")
        )
        lines.append(f"fingerprint a: {self.fingerprint_a}")
        lines.append(f"fingerprint b: {self.fingerprint_b}")
        if self.same_architecture:
            lines.append(
                f"max weight delta: {self.max_abs_diff:.3e}"
                + (f" ({self.worst_tensor})" if self.worst_tensor else "")
            )
        for label, va, vb in self.excerpts:
            lines.append(f"{label}:")
            lines.append("  a: " + " ".join(f"{v:+.8f}" for v in va))
            lines.append("  b: " + " ".join(f"{v:+.8f}" for v in vb))
        return "\n".join(lines) + "\n"


def _stream_fingerprint(rows) -> str:
    h = hashlib.sha256()
    for name, t, _ in rows:
        h.update(name.encode("utf-8"))
        h.update(b"\0")
        h.update(struct.pack("<B", t.rank))
        h.update(struct.pack(f"<{t.rank}I", *t.shape))
        h.update(t.data.astype("<f4", copy=False).tobytes())
    return h.hexdigest()


def _excerpt_rows(rows):
    """(label, values) picks: the 3x3 [:, :, 0, 0] slice of the first conv
    kernel and the first 32 entries of the last matrix kernel."""
    out = []
    first_conv = next(
        (r for r in rows if r[2] and r[1].rank == 4), None
    )
    if first_conv is not None:
        name, t, _ = first_conv
        vals = [float(v) for v in t.data[:, :, 0, 0].reshape(-1)]
        out.append((f"{name}[:, :, 0, 0]", vals))
    last_mat = None
    for r in rows:
        if r[2] and r[1].rank == 2:
            last_mat = r
    if last_mat is not None:
        name, t, _ = last_mat
        vals = [float(v) for v in t.data[:32, 0].reshape(-1)]
        out.append((f"{name}[:32, 0]", vals))
    return out


def _read_text(path: str) -> str:
    if not os.path.isfile(path):
        raise DataError(f"missing run artifact {path!r}")
    with open(path) as fh:
        return fh.read()


def compare_runs(dir_a: str, dir_b: str) -> CompareReport:
    """Classify two run directories.

    bit-identical     equal weight fingerprints
    numerically-close same shapes, every weight within 1e-4 absolute
    diverged          same shapes, some weight off by 1e-4 or more
    architecture-mismatch   tensors don't line up at all

    Config, dataset digests, and epoch metric files are compared alongside;
    environment and timing keys are deliberately ignored.
    """
    arch_a = _read_text(os.path.join(dir_a, ARCH_FILE))
    arch_b = _read_text(os.path.join(dir_b, ARCH_FILE))
    man_a = RunManifest.from_text(_read_text(os.path.join(dir_a, MANIFEST_FILE)))
    man_b = RunManifest.from_text(_read_text(os.path.join(dir_b, MANIFEST_FILE)))
    metrics_same = (
        _read_text(os.path.join(dir_a, EPOCHS_FILE))
        == _read_text(os.path.join(dir_b, EPOCHS_FILE))
    )
    with open(os.path.join(dir_a, WEIGHTS_FILE), "rb") as fh:
        rows_a = weights_io.unpack_tensors(fh.read())
    with open(os.path.join(dir_b, WEIGHTS_FILE), "rb") as fh:
        rows_b = weights_io.unpack_tensors(fh.read())

    keys = sorted(
        k for k in set(man_a.entries) | set(man_b.entries)
        if k.startswith(_COMPARE_PREFIXES)
    )
    diffs = []
    for k in keys:
        va, vb = man_a.get(k), man_b.get(k)
        if va != vb:
            diffs.append(f"{k}: {va!r} vs {vb!r}")

    same_arch = arch_a == arch_b and [
        (n, t.shape) for n, t, _ in rows_a
    ] == [(n, t.shape) for n, t, _ in rows_b]
    fp_a = _stream_fingerprint(rows_a)
    fp_b = _stream_fingerprint(rows_b)

    max_diff = 0.0
    worst = ""
    if same_arch:
        for (name, ta, _), (_, tb, _) in zip(rows_a, rows_b):
            d = np.abs(
                ta.data.astype(np.float64) - tb.data.astype(np.float64)
            )
            m = float(np.max(d)) if d.size else 0.0
            if m > max_diff:
                max_diff = m
                worst = name
        if fp_a == fp_b:
            verdict = "bit-identical"
        elif max_diff < CLOSE_TOL:
            verdict = "numerically-close"
        else:
            verdict = "diverged"
    else:
        verdict = "architecture-mismatch"

    ex_a = dict(_excerpt_rows(rows_a))
    ex_b = dict(_excerpt_rows(rows_b))
    excerpts = [
        (label, ex_a[label], ex_b[label])
        for label in ex_a if label in ex_b
    ]
    return CompareReport(
        verdict=verdict,
        same_architecture=same_arch,
        same_config=not diffs,
        config_diffs=diffs,
        metrics_identical=metrics_same,
        fingerprint_a=fp_a,
        fingerprint_b=fp_b,
        max_abs_diff=max_diff,
        worst_tensor=worst,
        excerpts=excerpts,
    )


# ---------------------------------------------------------------------------
# prediction tables and explanation similarity


def prediction_table(graph, image: Tensor, classes=("0", "1")):
    """Class probabilities for one image, sorted by probability descending
    (ties broken by class index). Returns [(class_index, name, prob)]."""
    x = Tensor(image.data[None], copy=False)
    out, _ = graph.forward(x, Ctx("infer"))
    p1 = np.float32(out.item())
    p0 = np.float32(1.0) - p1
    rows = [(0, classes[0], float(p0)), (1, classes[1], float(p1))]
    rows.sort(key=lambda r: (-r[2], r[0]))
    return rows


def format_prediction_table(rows) -> str:
    lines = ["rank  class  probability"]
    for rank, (idx, name, prob) in enumerate(rows, start=1):
        lines.append(f"{rank:>4}  {name} (class {idx})  {prob:.8f}")
    return "\n".join(lines) + "\n"


def rank_shift_report(rows_a, rows_b) -> str:
    """How each class moved between two prediction tables."""
    pos_a = {idx: (rank, prob) for rank, (idx, _, prob)
             in enumerate(rows_a, start=1)}
    pos_b = {idx: (rank, prob) for rank, (idx, _, prob)
             in enumerate(rows_b, start=1)}
    names = {idx: name for idx, name, _ in rows_a}
    lines = []
    for idx in sorted(pos_a):
        ra, pa = pos_a[idx]
        rb, pb = pos_b[idx]
        move = "unchanged" if ra == rb else f"rank {ra} -> {rb}"
        lines.append(
            f"class {idx} ({names[idx]}): {move},"
            f" prob {pa:.8f} -> {pb:.8f}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CamSimilarity:
    iou: float        # overlap of the >= 0.5 regions; 1.0 if both empty
    com_shift: float  # centre-of-mass displacement in grid cells


def cam_similarity(a, b) -> CamSimilarity:
    """Compare two activation grids of the same shape."""
    ga, gb = a.grid.data, b.grid.data
    if ga.shape != gb.shape:
        raise ConfigError(
            f"grids must match, got {ga.shape} vs {gb.shape}"
        )
    ma = ga >= 0.5
    mb = gb >= 0.5
    union = int(np.count_nonzero(ma | mb))
    inter = int(np.count_nonzero(ma & mb))
    iou = 1.0 if union == 0 else inter / union
    return CamSimilarity(iou=iou, com_shift=_com_dist(ga, gb))


def _com(grid: np.ndarray):
    gh, gw = grid.shape
    g = grid.astype(np.float64)
    total = treduce("sum", Tensor(g, copy=False), (0, 1)).item()
    if total <= 0.0:
        return ((gh - 1) / 2.0, (gw - 1) / 2.0)
    ys = np.arange(gh, dtype=np.float64)[:, None]
    xs = np.arange(gw, dtype=np.float64)[None, :]
    cy = treduce("sum", Tensor(g * ys, copy=False), (0, 1)).item() / total
    cx = treduce("sum", Tensor(g * xs, copy=False), (0, 1)).item() / total
    return (cy, cx)


def _com_dist(ga: np.ndarray, gb: np.ndarray) -> float:
    ya, xa = _com(ga)
    yb, xb = _com(gb)
    return float(np.sqrt((ya - yb) ** 2 + (xa - xb) ** 2))
