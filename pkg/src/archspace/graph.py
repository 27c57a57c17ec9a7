"""Compilation of fully specified models to a serializable graph IR.

The IR is a topologically ordered list of typed nodes with shapes and
parameter counts, derived recursively from the per-module rules of the
instance layer: ``Flatten`` is inserted before ``Affine`` on order>1
input, ``Empty`` becomes ``Identity``, and ``Residual`` contributes
``PadZeros``/``Add`` plumbing. The IR deliberately stays framework
neutral; training backends translate it themselves (see the external
evaluator protocol in :mod:`archspace.evaluators`).

``to_json`` is canonical (sorted keys, compact separators, shortest
round-trip floats) so identical models serialize byte-identically
across runs and platforms. The canonical model signature hashes the
non-plumbing node sequence plus the training configuration with 64-bit
FNV-1a; it is the identity key for caching and score tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from . import core
from .core import ModuleInstance, Shape, _conv_spatial
from .dsl import SpaceExpr
from .errors import InconsistentShapes, MalformedGraph
from .nav import Path, path_from_obj, path_to_obj, replay

IR_VERSION = 1

PLUMBING_OPS = frozenset({"Flatten", "Identity", "PadZeros", "Add"})

OPS = frozenset(
    {
        "Conv2D",
        "MaxPool2D",
        "Affine",
        "ReLU",
        "Dropout",
        "BatchNorm",
        "Flatten",
        "Identity",
        "Add",
        "PadZeros",
    }
)


@dataclass
class GraphNode:
    id: int
    op: str
    attrs: dict
    in_shape: Shape
    out_shape: Shape
    param_count: int
    inputs: list[int]
    train_only: bool = False


@dataclass
class GraphIR:
    nodes: list[GraphNode]
    input_shape: Shape
    output_shape: Shape
    training_config: dict = field(default_factory=dict)
    source_path: Path = field(default_factory=Path)


class _Builder:
    def __init__(self, input_shape: Shape):
        self.input_shape = input_shape
        self.nodes: list[GraphNode] = []
        self.training_config: dict = {}

    def emit(
        self,
        op: str,
        attrs: dict,
        in_shape: Shape,
        out_shape: Shape,
        params: int,
        inputs: list[int],
        train_only: bool = False,
    ) -> int:
        node = GraphNode(
            id=len(self.nodes),
            op=op,
            attrs=attrs,
            in_shape=in_shape,
            out_shape=out_shape,
            param_count=params,
            inputs=inputs,
            train_only=train_only,
        )
        self.nodes.append(node)
        return node.id

    def chain_emit(self, op, attrs, prev, shape, out_shape, params, train_only=False):
        inputs = [] if prev is None else [prev]
        return self.emit(op, attrs, shape, out_shape, params, inputs, train_only)

    # Walks return (last_node_id, shape) of the sub-chain; a module that
    # contributes no nodes passes the running values through untouched.
    def walk(self, inst: ModuleInstance, prev: int | None, shape: Shape):
        if isinstance(inst, core.EmptyInstance):
            return self.chain_emit("Identity", {}, prev, shape, shape, 0), shape
        if isinstance(inst, core.ReLUInstance):
            return self.chain_emit("ReLU", {}, prev, shape, shape, 0), shape
        if isinstance(inst, core.DropoutInstance):
            attrs = {"keep_p": inst.assignments["keep_prob"]}
            node = self.chain_emit("Dropout", attrs, prev, shape, shape, 0, train_only=True)
            return node, shape
        if isinstance(inst, core.BatchNormalizationInstance):
            node = self.chain_emit("BatchNorm", {}, prev, shape, shape, 2 * shape[-1])
            return node, shape
        if isinstance(inst, core.Conv2DInstance):
            out = inst.get_outdim()
            attrs = dict(inst.assignments)
            attrs.setdefault("padding", "SAME")
            return self.chain_emit("Conv2D", attrs, prev, shape, out, inst.param_count()), out
        if isinstance(inst, core.MaxPooling2DInstance):
            out = inst.get_outdim()
            attrs = dict(inst.assignments)
            attrs.setdefault("padding", "SAME")
            return self.chain_emit("MaxPool2D", attrs, prev, shape, out, 0), out
        if isinstance(inst, core.AffineInstance):
            if len(shape) > 1:
                flat = (core.flat_size(shape),)
                prev = self.chain_emit("Flatten", {}, prev, shape, flat, 0)
                shape = flat
            attrs = dict(inst.assignments)
            units = attrs["units"]
            out = (units,)
            params = (shape[0] + 1) * units
            return self.chain_emit("Affine", attrs, prev, shape, out, params), out
        if isinstance(inst, core.UserHyperparamsInstance):
            self.training_config.update(inst.training_assignments())
            return prev, shape
        if isinstance(inst, core.ConcatInstance):
            for sub in inst.chain.subs:
                prev, shape = self.walk(sub, prev, shape)
            return prev, shape
        if isinstance(inst, core.OrInstance):
            return self.walk(inst.subs[inst.which], prev, shape)
        if isinstance(inst, core.OptionalInstance):
            if inst.include:
                return self.walk(inst.child, prev, shape)
            return prev, shape
        if isinstance(inst, core.MaybeSwapInstance):
            for sub in inst.chain.subs:  # execution order
                prev, shape = self.walk(sub, prev, shape)
            return prev, shape
        if isinstance(inst, core.RepeatTiedInstance):
            for clone in inst.clones:
                prev, shape = self.walk(clone, prev, shape)
            return prev, shape
        if isinstance(inst, core.RepeatInstance):
            for clone in inst.chain.subs:
                prev, shape = self.walk(clone, prev, shape)
            return prev, shape
        if isinstance(inst, core.ResidualInstance):
            return self.walk_residual(inst, prev, shape)
        raise MalformedGraph(f"no compilation rule for {inst.kind}")

    def walk_residual(self, inst: core.ResidualInstance, prev, shape):
        if prev is None:
            # Explicit fork point so the graph keeps a single source.
            prev = self.emit("Identity", {}, shape, shape, 0, [])
        fork, fork_shape = prev, shape
        body, body_shape = self.walk(inst.body, fork, fork_shape)
        target = inst.merge_shape()
        if body_shape != target:
            body = self.chain_emit(
                "PadZeros", {"pad_to": list(target)}, body, body_shape, target, 0
            )
        skip = fork
        if fork_shape != target:
            skip = self.chain_emit(
                "PadZeros", {"pad_to": list(target)}, fork, fork_shape, target, 0
            )
        add = self.emit("Add", {}, target, target, 0, [body, skip])
        return add, target


def build_graph(inst: ModuleInstance, path: Path) -> GraphIR:
    """Compile an already specified instance; most callers want
    :func:`compile_model` instead."""
    input_shape = inst.in_shape
    builder = _Builder(input_shape)
    last, out_shape = builder.walk(inst, None, input_shape)
    if last is None:
        out_shape = input_shape
        builder.emit("Identity", {}, input_shape, input_shape, 0, [])
    return GraphIR(
        nodes=builder.nodes,
        input_shape=input_shape,
        output_shape=out_shape,
        training_config=builder.training_config,
        source_path=path,
    )


def compile_model(space: SpaceExpr, in_shape, path: Path) -> GraphIR:
    """Replay ``path`` on ``space`` and compile the resulting model.

    Pure in (space, in_shape, path); raises PathMismatch for stale paths
    and ShapeIncompatible/ShapeUnderflow for shape-invalid leaves.
    """
    inst = replay(space, in_shape, path)
    return build_graph(inst, path)


# ---------------------------------------------------------------------------
# Serialization


def graph_to_obj(g: GraphIR) -> dict:
    return {
        "ir_version": IR_VERSION,
        "input_shape": list(g.input_shape),
        "output_shape": list(g.output_shape),
        "training_config": dict(g.training_config),
        "source_path": path_to_obj(g.source_path),
        "nodes": [
            {
                "id": n.id,
                "op": n.op,
                "attrs": n.attrs,
                "in_shape": list(n.in_shape),
                "out_shape": list(n.out_shape),
                "param_count": n.param_count,
                "inputs": n.inputs,
                "train_only": n.train_only,
            }
            for n in g.nodes
        ],
    }


def to_json(g: GraphIR) -> str:
    """Canonical JSON: sorted keys, compact, shortest-round-trip floats;
    byte-identical across runs for identical graphs."""
    return json.dumps(graph_to_obj(g), sort_keys=True, separators=(",", ":"))


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise MalformedGraph(message)


def _recompute(node: GraphNode) -> tuple[Shape, int]:
    """Expected (out_shape, param_count) from attrs and in_shape."""
    op, attrs, shape = node.op, node.attrs, node.in_shape
    if op in ("ReLU", "Identity", "Add"):
        return shape, 0
    if op == "Dropout":
        _require("keep_p" in attrs, "Dropout node missing keep_p")
        return shape, 0
    if op == "BatchNorm":
        return shape, 2 * shape[-1]
    if op == "Flatten":
        return (math.prod(shape),), 0
    if op == "Affine":
        units = attrs["units"]
        return (units,), (math.prod(shape) + 1) * units
    if op in ("Conv2D", "MaxPool2D"):
        _require(len(shape) == 3, f"{op} input must have order 3")
        k, s = attrs["kernel_size"], attrs["stride"]
        padding = attrs.get("padding", "SAME")
        h = _conv_spatial(shape[0], k, s, padding, op)
        w = _conv_spatial(shape[1], k, s, padding, op)
        if op == "MaxPool2D":
            return (h, w, shape[2]), 0
        f = attrs["filters"]
        return (h, w, f), k * k * shape[2] * f + f
    if op == "PadZeros":
        target = tuple(int(d) for d in attrs["pad_to"])
        _require(len(target) == len(shape), "PadZeros changes tensor order")
        _require(all(t >= d for t, d in zip(target, shape)), "PadZeros shrinks a dimension")
        return target, 0
    raise MalformedGraph(f"unknown op {op!r}")


def _validate(g: GraphIR) -> None:
    _require(len(g.nodes) >= 1, "graph has no nodes")
    used: set[int] = set()
    for i, node in enumerate(g.nodes):
        _require(node.id == i, f"node ids must be 0..n-1 in order, got {node.id} at {i}")
        _require(node.op in OPS, f"unknown op {node.op!r}")
        for ref in node.inputs:
            _require(0 <= ref < i, f"node {i} references non-earlier input {ref}")
            used.add(ref)
        if node.op == "Add":
            _require(len(node.inputs) == 2, "Add needs exactly 2 inputs")
            a, b = (g.nodes[r] for r in node.inputs)
            if a.out_shape != b.out_shape:
                raise InconsistentShapes(
                    f"Add inputs disagree: {a.out_shape} vs {b.out_shape}"
                )
        for ref in node.inputs:
            if g.nodes[ref].out_shape != node.in_shape:
                raise InconsistentShapes(
                    f"node {node.id} in_shape {node.in_shape} != "
                    f"producer {ref} out_shape {g.nodes[ref].out_shape}"
                )
        out, params = _recompute(node)
        if out != node.out_shape:
            raise InconsistentShapes(
                f"node {node.id} ({node.op}) stores out_shape {node.out_shape}, "
                f"recomputed {out}"
            )
        if params != node.param_count:
            raise InconsistentShapes(
                f"node {node.id} ({node.op}) stores param_count {node.param_count}, "
                f"recomputed {params}"
            )
    sources = [n for n in g.nodes if not n.inputs]
    terminals = [n for n in g.nodes if n.id not in used]
    _require(len(sources) == 1, f"graph must have exactly one source, got {len(sources)}")
    _require(len(terminals) == 1, f"graph must have exactly one terminal, got {len(terminals)}")
    if sources[0].in_shape != g.input_shape:
        raise InconsistentShapes("source in_shape differs from graph input_shape")
    if terminals[0].out_shape != g.output_shape:
        raise InconsistentShapes("terminal out_shape differs from graph output_shape")


def from_json(text: str) -> GraphIR:
    """Inverse of :func:`to_json`; revalidates every invariant,
    recomputing shapes and parameter counts from node attributes."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedGraph(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedGraph("top level must be an object")
    if obj.get("ir_version") != IR_VERSION:
        raise MalformedGraph(f"unsupported ir_version {obj.get('ir_version')!r}")
    try:
        nodes = [
            GraphNode(
                id=int(n["id"]),
                op=str(n["op"]),
                attrs=dict(n["attrs"]),
                in_shape=tuple(int(d) for d in n["in_shape"]),
                out_shape=tuple(int(d) for d in n["out_shape"]),
                param_count=int(n["param_count"]),
                inputs=[int(r) for r in n["inputs"]],
                train_only=bool(n.get("train_only", False)),
            )
            for n in obj["nodes"]
        ]
        g = GraphIR(
            nodes=nodes,
            input_shape=tuple(int(d) for d in obj["input_shape"]),
            output_shape=tuple(int(d) for d in obj["output_shape"]),
            training_config=dict(obj.get("training_config", {})),
            source_path=path_from_obj(obj.get("source_path", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedGraph(f"schema violation: {exc}") from exc
    _validate(g)
    return g


def total_params(g: GraphIR) -> int:
    return sum(n.param_count for n in g.nodes)


# ---------------------------------------------------------------------------
# Canonical signature


def basic_module_sequence(g: GraphIR) -> list[str]:
    """Ordered basic-module ops, plumbing nodes excluded. This is the
    single source of truth for model features and signatures."""
    return [n.op for n in g.nodes if n.op not in PLUMBING_OPS]


def signature_obj(g: GraphIR) -> dict:
    modules = [
        {"op": n.op, "attrs": n.attrs} for n in g.nodes if n.op not in PLUMBING_OPS
    ]
    return {"modules": modules, "training_config": dict(g.training_config)}


def signature_json(g: GraphIR) -> str:
    return json.dumps(signature_obj(g), sort_keys=True, separators=(",", ":"))


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def signature_hash(g: GraphIR) -> str:
    """16-hex-digit FNV-1a of the canonical signature JSON."""
    return f"{fnv1a64(signature_json(g).encode('utf-8')):016x}"
