"""Model graph: named layer nodes wired into a DAG.

Nodes are added in topological order and executed in exactly that order, so
forward results and gradient accumulation have one canonical schedule. A
node's inputs name earlier nodes (or "input" for the graph input). Fan-out
is allowed; when several consumers feed gradients back to one producer, the
contributions are added in reverse execution order of the consumers, which
is as fixed as everything else.

The parameter registry orders tensors by (node position, parameter name),
trainables first, then buffers: weight files, fingerprints, and optimizer
walks all share this one ordering.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import ConfigError, EngineError, ShapeError
from .layers import Ctx, LayerConfig, LayerState
from .tensor import Tensor

INPUT = "input"


@dataclass
class Node:
    id: str
    cfg: LayerConfig
    state: LayerState
    inputs: list
    out_shape: tuple


class ModelGraph:
    def __init__(self, name: str, input_shape: tuple, meta: dict = None):
        if len(input_shape) < 1:
            raise ShapeError("input_shape must be non-empty")
        self.name = name
        self.input_shape = tuple(int(d) for d in input_shape)
        self.nodes: list[Node] = []
        self.by_id: dict[str, Node] = {}
        self.meta = dict(meta or {})

    # -- construction -------------------------------------------------------

    def add(self, node_id: str, cfg: LayerConfig, inputs=None) -> str:
        """Append a node. inputs defaults to the previously added node (or
        the graph input for the first). Parameters are created immediately,
        so adding order fixes both execution order and the registry.
        """
        if node_id == INPUT or node_id in self.by_id:
            raise ConfigError(f"duplicate or reserved node id {node_id!r}")
        if inputs is None:
            inputs = [self.nodes[-1].id] if self.nodes else [INPUT]
        inputs = list(inputs)
        if not inputs:
            raise ConfigError(f"node {node_id!r} needs at least one input")
        shapes = []
        for src in inputs:
            if src == INPUT:
                shapes.append(self.input_shape)
            elif src in self.by_id:
                shapes.append(self.by_id[src].out_shape)
            else:
                raise ConfigError(
                    f"node {node_id!r} references unknown input {src!r}"
                )
        if cfg.kind == "add":
            if len(shapes) != 2 or shapes[0] != shapes[1]:
                raise ShapeError(
                    f"add needs two same-shape inputs, got {shapes}"
                )
            oshape = shapes[0]
        else:
            if len(shapes) != 1:
                raise ConfigError(f"{cfg.kind} takes one input")
            oshape = layers.out_shape(cfg, shapes[0])
        state = layers.init_state(cfg, shapes[0], node_id)
        node = Node(node_id, cfg, state, inputs, tuple(oshape))
        self.nodes.append(node)
        self.by_id[node_id] = node
        return node_id

    @property
    def output_id(self) -> str:
        if not self.nodes:
            raise ConfigError("graph has no nodes")
        return self.nodes[-1].id

    # -- execution ----------------------------------------------------------

    def forward(self, x: Tensor, ctx: Ctx):
        """Run the graph on a batch; returns (output, fcache).

        fcache maps node id to (output tensor, layer cache) and is the
        explicit handle backward() consumes, so a backward pass can never
        observe stale activations. With DET_DEBUG_NAN=1 every node output is
        checked and the first non-finite one aborts with the node id.
        """
        if x.rank != len(self.input_shape) + 1:
            raise ShapeError(
                f"expected batched input of rank {len(self.input_shape) + 1},"
                f" got {x.shape}"
            )
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"input item shape {tuple(x.shape[1:])} != expected"
                f" {self.input_shape}"
            )
        debug = os.environ.get("DET_DEBUG_NAN") == "1"
        fcache = {}
        out = None
        for node in self.nodes:
            vals = []
            for src in node.inputs:
                vals.append(x if src == INPUT else fcache[src][0])
            arg = tuple(vals) if node.cfg.kind == "add" else vals[0]
            out, cache = layers.forward(node.cfg, node.state, arg, ctx)
            if debug and not np.all(np.isfinite(out.data)):
                raise EngineError(
                    f"non-finite activation at node {node.id!r}"
                )
            fcache[node.id] = (out, cache)
        return out, fcache

    def _has_param_ancestry(self) -> dict:
        """node id -> does the node or anything feeding it hold params."""
        anc = {}
        for node in self.nodes:
            own = bool(node.state.params)
            anc[node.id] = own or any(
                anc[s] for s in node.inputs if s != INPUT
            )
        return anc

    def _descendants(self, target: str) -> set:
        """target plus every node reachable from it; the backward path from
        the output to target runs entirely inside this set."""
        deps = {target}
        for node in self.nodes:
            if any(s in deps for s in node.inputs):
                deps.add(node.id)
        return deps

    def backward(self, fcache, gout: Tensor, until_node: str = None,
                 want_input: bool = False):
        """Backpropagate gout from the output node.

        Returns (param_grads, grad) where param_grads maps "node/param" to a
        gradient tensor. With until_node set, propagation stops there and
        grad is the accumulated gradient at that node's OUTPUT (its own
        backward is not run); otherwise grad is the graph-input gradient
        when want_input is set, else None.

        Input gradients are only computed where something downstream needs
        them (a parameter-bearing ancestor, the until_node target, or the
        graph input under want_input), which skips the expensive image-warp
        backward during normal training.
        """
        if not self.nodes:
            raise ConfigError("graph has no nodes")
        if until_node is not None and until_node not in self.by_id:
            raise ConfigError(f"unknown node {until_node!r}")
        grad_map = {self.output_id: gout}
        if until_node == self.output_id:
            return {}, gout
        path = None
        if until_node is not None:
            path = self._descendants(until_node)
            if self.output_id not in path:
                raise ConfigError(
                    f"node {until_node!r} does not feed the output"
                )
        anc = self._has_param_ancestry()
        param_grads = {}
        input_grad = None
        for node in reversed(self.nodes):
            if until_node is not None and node.id == until_node:
                continue  # its accumulated output grad is the result
            gy = grad_map.pop(node.id, None)
            if gy is None:
                continue
            if until_node is not None:
                want_gx = any(s != INPUT and s in path for s in node.inputs)
                run_params = False
            else:
                want_gx = want_input or any(
                    s != INPUT and anc[s] for s in node.inputs
                )
                run_params = bool(node.state.params)
            if not want_gx and not run_params:
                continue
            gx, grads = layers.backward(
                node.cfg, node.state, fcache[node.id][1], gy, want_gx
            )
            if run_params:
                for pname, g in grads.items():
                    param_grads[f"{node.id}/{pname}"] = g
            if not want_gx or gx is None:
                continue
            gxs = gx if isinstance(gx, tuple) else (gx,)
            for src, g in zip(node.inputs, gxs):
                if src == INPUT:
                    input_grad = g if input_grad is None else Tensor(
                        input_grad.data + g.data, copy=False
                    )
                elif src in grad_map:
                    grad_map[src] = Tensor(
                        grad_map[src].data + g.data, copy=False
                    )
                else:
                    grad_map[src] = g
        if until_node is not None:
            if until_node not in grad_map:
                raise ConfigError(f"no gradient reached node {until_node!r}")
            return param_grads, grad_map[until_node]
        return param_grads, input_grad

    # -- parameter registry --------------------------------------------------

    def registry(self):
        """Canonical tensor stream: (path, tensor, trainable) with all
        trainables first (node order, then name order), then all buffers.
        """
        rows = []
        for node in self.nodes:
            for pname in sorted(node.state.params):
                rows.append(
                    (f"{node.id}/{pname}", node.state.params[pname], True)
                )
        for node in self.nodes:
            for bname in sorted(node.state.buffers):
                rows.append(
                    (f"{node.id}/{bname}", node.state.buffers[bname], False)
                )
        return rows

    def named_params(self):
        return [(path, t) for path, t, tr in self.registry() if tr]

    def count_trainable(self) -> int:
        n = 0
        for _, t, trainable in self.registry():
            if trainable:
                n += t.size
        return n

    def set_tensor(self, path: str, value: Tensor):
        node_id, _, pname = path.rpartition("/")
        node = self.by_id.get(node_id)
        if node is None:
            raise ConfigError(f"unknown node in path {path!r}")
        store = (
            node.state.params if pname in node.state.params
            else node.state.buffers if pname in node.state.buffers
            else None
        )
        if store is None:
            raise ConfigError(f"unknown tensor path {path!r}")
        old = store[pname]
        if old.shape != value.shape:
            raise ShapeError(
                f"{path}: shape {value.shape} != expected {old.shape}"
            )
        store[pname] = value

    def get_tensor(self, path: str) -> Tensor:
        node_id, _, pname = path.rpartition("/")
        node = self.by_id.get(node_id)
        if node is None:
            raise ConfigError(f"unknown node in path {path!r}")
        if pname in node.state.params:
            return node.state.params[pname]
        if pname in node.state.buffers:
            return node.state.buffers[pname]
        raise ConfigError(f"unknown tensor path {path!r}")

    # -- description ----------------------------------------------------------

    def describe(self) -> str:
        """Stable text rendering of the architecture (used for run records
        and for cross-run equality checks, so the format is part of the
        deterministic surface).
        """
        lines = [
            f"model {self.name}",
            f"input {'x'.join(str(d) for d in self.input_shape)}",
        ]
        # structural rendering only: stream seeds live in the run manifest,
        # so two runs that differ just by seeds share one architecture text
        for k in sorted(self.meta):
            if k.startswith("seed_"):
                continue
            lines.append(f"meta {k} {self.meta[k]}")
        defaults = LayerConfig(kind="?")
        for idx, node in enumerate(self.nodes):
            cfgbits = []
            for f in (
                "filters", "kernel_size", "stride", "padding", "use_bias",
                "rate", "factor", "scale", "eps", "momentum",
            ):
                v = getattr(node.cfg, f)
                if v != getattr(defaults, f):
                    cfgbits.append(f"{f}={v}")
            params = ",".join(
                f"{p}{list(node.state.params[p].shape)}"
                for p in sorted(node.state.params)
            )
            lines.append(
                f"{idx:03d} {node.id} {node.cfg.kind}"
                f" in={','.join(node.inputs)}"
                f" out={'x'.join(str(d) for d in node.out_shape)}"
                + (f" [{' '.join(cfgbits)}]" if cfgbits else "")
                + (f" params {params}" if params else "")
            )
        lines.append(f"trainable {self.count_trainable()}")
        return "\n".join(lines) + "\n"

    def astype(self, dtype) -> "ModelGraph":
        """Deep copy with all tensors cast (float64 shadow checks)."""
        g = ModelGraph(self.name, self.input_shape, self.meta)
        for node in self.nodes:
            g.add(node.id, node.cfg, list(node.inputs))
            clone = g.by_id[node.id]
            for p, t in node.state.params.items():
                clone.state.params[p] = t.astype(dtype)
            for b, t in node.state.buffers.items():
                clone.state.buffers[b] = t.astype(dtype)
        return g
