"""Training loop: binary cross-entropy, RMSprop, per-epoch metrics.

All arithmetic on the float32 path uses fixed expressions (written out in
each docstring) so two runs with the same config and data are bit-identical.
Epoch shuffles come from the "shuffle/epoch-<E>" stream under the training
seed; the final partial batch is kept.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import dmath
from .errors import ConfigError, NumericAbort
from .layers import Ctx
from .rng import DetRng, shuffle_permutation
from .tensor import Tensor
from .tensor import reduce as treduce
from .threads import set_threads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-7
    seed: int = 1001
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(
                f"batch_size must be >= 1, got {self.batch_size}"
            )
        if not self.learning_rate > 0:
            raise ConfigError(
                f"learning_rate must be > 0, got {self.learning_rate}"
            )
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must be in [0, 1), got {self.rho}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_time_s: float


_CLIP_LO = np.float32(1e-7)
_CLIP_HI = np.float32(1.0 - 1e-7)


def bce_loss(pred: Tensor, target: Tensor):
    """Mean binary cross-entropy and its gradient w.r.t. pred.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs. Fixed
    expression per element (p clamped to pc, y the 0/1 target):
        loss_i = -(y*log(pc) + (1-y)*log(1-pc))
        grad_i = where(lo <= p <= hi, (pc - y) / (pc*(1-pc)), 0) / N
    The mean accumulates in ascending element order.
    """
    if pred.shape != target.shape:
        raise ConfigError(
            f"pred shape {pred.shape} != target shape {target.shape}"
        )
    p = pred.data
    y = target.data
    dt = p.dtype
    one = dt.type(1)
    lo = dt.type(_CLIP_LO)
    hi = dt.type(_CLIP_HI)
    pc = np.clip(p, lo, hi)
    l1 = dmath.log(pc)
    l2 = dmath.log(one - pc)
    a = y * l1
    b = (one - y) * l2
    per = -(a + b)
    loss = treduce("mean", Tensor(per, copy=False), range(pred.rank))
    n = dt.type(p.size)
    inside = (p >= lo) & (p <= hi)
    g0 = (pc - y) / (pc * (one - pc))
    grad = np.where(inside, g0, dt.type(0)) / n
    return loss, Tensor(grad, copy=False)


def accuracy(pred: Tensor, target: Tensor) -> float:
    """Fraction of correct binary predictions; p >= 0.5 counts as class 1
    (ties go up). Counting is integer-exact; one float32 division at the end.
    """
    p = pred.data.reshape(-1)
    y = target.data.reshape(-1)
    correct = int(np.count_nonzero((p >= 0.5) == (y >= 0.5)))
    return float(np.float32(correct) / np.float32(p.size))


def rmsprop_init(graph) -> dict:
    """Per-parameter mean-square accumulators, all zeros."""
    return {
        path: Tensor.zeros(t.shape, dtype=t.dtype)
        for path, t in graph.named_params()
    }


def rmsprop_step(graph, opt: dict, grads: dict, cfg: TrainConfig):
    """One RMSprop update over the registry order.

    Fixed float32 expressions per parameter (constants rounded once):
        ms' = rho*ms + (1-rho)*(g*g)
        p'  = p - lr * (g / (sqrt(ms') + eps))
    Updates graph parameters and opt state in place.
    """
    for path, param in graph.named_params():
        g = grads.get(path)
        if g is None:
            raise ConfigError(f"missing gradient for {path!r}")
        dt = param.dtype
        rho = dt.type(cfg.rho)
        om = dt.type(1) - rho
        lr = dt.type(cfg.learning_rate)
        eps = dt.type(cfg.epsilon)
        gd = g.data
        ms = opt[path].data
        ms2 = rho * ms + om * (gd * gd)
        newp = param.data - lr * (gd / (np.sqrt(ms2) + eps))
        opt[path] = Tensor(ms2, copy=False)
        graph.set_tensor(path, Tensor(newp, copy=False))


def _batch(ds, idx):
    xb = Tensor(ds.x[idx], copy=False)
    yb = Tensor(
        ds.y[idx].astype(np.float32).reshape(len(idx), 1), copy=False
    )
    return xb, yb


def _eval(graph, ds, batch_size: int):
    """Full-dataset loss/accuracy in inference mode, fixed batch walk."""
    n = ds.n
    total_loss = np.float32(0.0)
    correct = 0
    ctx = Ctx("infer")
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        xb, yb = _batch(ds, idx)
        pred, _ = graph.forward(xb, ctx)
        loss, _ = bce_loss(pred, yb)
        bs = np.float32(len(idx))
        total_loss = total_loss + np.float32(loss.item()) * bs
        p = pred.data.reshape(-1)
        correct += int(np.count_nonzero((p >= 0.5) == (yb.data.reshape(-1) >= 0.5)))
    return (
        float(total_loss / np.float32(n)),
        float(np.float32(correct) / np.float32(n)),
    )


def train(graph, train_ds, val_ds, cfg: TrainConfig):
    """Train the graph in place; returns the per-epoch records.

    Schedule: per epoch, one Fisher-Yates shuffle from stream
    "shuffle/epoch-<E>" under cfg.seed, consecutive batches of
    cfg.batch_size (final partial batch kept), forward in train mode with
    ctx (epoch, batch), BCE backward, RMSprop step. Train metrics average
    over the training batches as seen (with augmentation and dropout
    active); validation runs a clean inference pass after each epoch.
    A non-finite batch loss aborts with its (epoch, batch) coordinates.
    """
    set_threads(cfg.threads)
    opt = rmsprop_init(graph)
    records = []
    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        perm = shuffle_permutation(
            DetRng(cfg.seed, f"shuffle/epoch-{epoch}"), train_ds.n
        )
        total_loss = np.float32(0.0)
        correct = 0
        for bi, start in enumerate(range(0, train_ds.n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = _batch(train_ds, idx)
            ctx = Ctx("train", epoch=epoch, batch=bi)
            pred, fcache = graph.forward(xb, ctx)
            loss, lgrad = bce_loss(pred, yb)
            lval = loss.item()
            if not np.isfinite(lval):
                raise NumericAbort(epoch, bi, lval)
            grads, _ = graph.backward(fcache, lgrad)
            rmsprop_step(graph, opt, grads, cfg)
            bs = np.float32(len(idx))
            total_loss = total_loss + np.float32(lval) * bs
            p = pred.data.reshape(-1)
            correct += int(
                np.count_nonzero((p >= 0.5) == (yb.data.reshape(-1) >= 0.5))
            )
        train_loss = float(total_loss / np.float32(train_ds.n))
        train_acc = float(
            np.float32(correct) / np.float32(train_ds.n)
        )
        val_loss, val_acc = _eval(graph, val_ds, cfg.batch_size)
        records.append(EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            train_acc=train_acc,
            val_loss=val_loss,
            val_acc=val_acc,
            wall_time_s=time.monotonic() - t0,
        ))
    return records


def metrics_lines(records) -> str:
    """Render epoch records as the run-invariant metrics file.

    One line per epoch, fixed field order, shortest-roundtrip float text.
    Wall time is deliberately excluded so the file is byte-identical across
    reruns; timing lives in the run manifest instead.
    """
    lines = []
    for r in records:
        lines.append(
            f"epoch={r.epoch}"
            f" train_loss={float(np.float32(r.train_loss))!r}"
            f" train_acc={float(np.float32(r.train_acc))!r}"
            f" val_loss={float(np.float32(r.val_loss))!r}"
            f" val_acc={float(np.float32(r.val_acc))!r}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def parse_metrics_lines(text: str):
    """Inverse of metrics_lines."""
    records = []
    for line in text.splitlines():
        if not line.strip():
            continue
        kv = dict(part.split("=", 1) for part in line.split())
        records.append(EpochRecord(
            epoch=int(kv["epoch"]),
            train_loss=float(kv["train_loss"]),
            train_acc=float(kv["train_acc"]),
            val_loss=float(kv["val_loss"]),
            val_acc=float(kv["val_acc"]),
            wall_time_s=0.0,
        ))
    return records
