"""Genotype -> architecture graph compiler and shape inference.

A compiled graph is a flat, topologically ordered tuple of :class:`NodeSpec`.
Node 0 is always the graph input; the last node is always the 1x1 linear
output head.  Conv layers are tagged with their layer index (encoder layers
``1..n``, decoder layers ``n+1..2n`` with decoder ``2n+1-i`` mirroring
encoder ``i``) so symmetry can be certified from the nodes alone.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .errors import CompileError, ShapeError
from .genome import Genome

INPUT = "INPUT"
CONV = "CONV"
SEP_CONV_PAIR = "SEP_CONV_PAIR"
RESCALE_CONV_1x1 = "RESCALE_CONV_1x1"
MAX_POOL_2 = "MAX_POOL_2"
AVG_POOL_2 = "AVG_POOL_2"
UPSAMPLE_2 = "UPSAMPLE_2"
CONCAT = "CONCAT"
ADD = "ADD"
RELU = "RELU"
OUTPUT_CONV = "OUTPUT_CONV"

NODE_KINDS = (
    INPUT, CONV, SEP_CONV_PAIR, RESCALE_CONV_1x1, MAX_POOL_2, AVG_POOL_2,
    UPSAMPLE_2, CONCAT, ADD, RELU, OUTPUT_CONV,
)
CONV_KINDS = frozenset({CONV, SEP_CONV_PAIR, RESCALE_CONV_1x1, OUTPUT_CONV})
POOL_KINDS = frozenset({MAX_POOL_2, AVG_POOL_2})
MERGE_KINDS = frozenset({CONCAT, ADD})

# Nodes whose role is "branch" are the per-kernel convolutions of a layer;
# "merge" marks the concat/rescale that joins parallel branches; "skip"
# marks encoder->decoder connections.
ROLES = ("", "branch", "merge", "skip")


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if min(self.height, self.width, self.channels) <= 0:
            raise ValueError(f"shape dimensions must be positive: {self}")

    def __str__(self):
        return f"{self.height}x{self.width}x{self.channels}"


@dataclass(frozen=True)
class NodeSpec:
    id: int
    kind: str
    inputs: tuple[int, ...] = ()
    kernel: int = 0
    c_in: int = 0
    c_out: int = 0
    layer: int = 0
    role: str = ""

    @property
    def is_conv(self) -> bool:
        return self.kind in CONV_KINDS

    def line(self) -> str:
        kernel = str(self.kernel) if self.is_conv else "-"
        srcs = ",".join(str(i) for i in self.inputs) if self.inputs else "-"
        return f"{self.id} {self.kind} {kernel} {self.c_in} {self.c_out} <- {srcs}"


@dataclass(frozen=True)
class ArchGraph:
    nodes: tuple[NodeSpec, ...]
    input_shape: TensorShape
    shapes: tuple[TensorShape, ...] | None = None
    genome_digest: str = ""
    decode_seed: int = 0

    @property
    def output_id(self) -> int:
        return self.nodes[-1].id

    @property
    def annotated(self) -> bool:
        return self.shapes is not None

    def node(self, node_id: int) -> NodeSpec:
        return self.nodes[self._index()[node_id]]

    def shape_of(self, node_id: int) -> TensorShape:
        if self.shapes is None:
            raise ValueError("graph has no inferred shapes")
        return self.shapes[self._index()[node_id]]

    def _index(self):
        return {n.id: i for i, n in enumerate(self.nodes)}

    def conv_nodes(self):
        return [n for n in self.nodes if n.is_conv]

    def num_layers(self) -> int:
        return len({n.layer for n in self.nodes if n.layer})


def _round_pct(pct: int, n: int) -> int:
    """round(pct/100 * n), halves rounded up, in exact integer arithmetic."""
    return (2 * pct * n + 100) // 200


def _is_pow2(v: int) -> bool:
    return v > 0 and v & (v - 1) == 0


def max_pool_depth(height: int, width: int) -> int:
    """Deepest pooling that still leaves at least a 4x4 bottleneck."""
    return int(math.floor(math.log2(min(height, width) / 4)))


@dataclass(frozen=True)
class LayerPlan:
    """Decoded description of one encoder layer (mirrored in the decoder)."""

    position: int  # 1-based among surviving encoder layers
    source_index: int  # 1-based index among the g1 layers before elimination
    branches: tuple[tuple[int, bool], ...]  # (kernel, separated)
    depth: int
    channels: int
    pool_after: str | None  # MAX_POOL_2 / AVG_POOL_2 / None
    skip: str | None  # CONCAT / ADD / None


def plan_layers(g: Genome, input_shape: TensorShape, decode_seed: int) -> list[LayerPlan]:
    """Resolve genes 1-10 and 12 into per-layer plans (steps 1-7 of decoding)."""
    n = g.g1
    rng = np.random.default_rng(decode_seed)
    eliminated = set(g.eliminated_kernels())
    separated = set(g.separated_kernels())

    n_elim = _round_pct(g.g8, n)
    n_sep = _round_pct(g.g10, n)
    elim_layers = sorted(int(i) for i in rng.permutation(n)[:n_elim])
    sep_layers = {int(i) for i in rng.permutation(n)[:n_sep]}

    kernels = [list(g.g2) for _ in range(n)]
    for i in elim_layers:
        kernels[i] = [k for k in kernels[i] if k not in eliminated]
    surviving = [i for i in range(n) if kernels[i]]
    if not surviving:
        # floor: keep the shallowest layer pair with its full kernel set
        first = elim_layers[0]
        kernels[first] = list(g.g2)
        surviving = [first]

    n_live = len(surviving)
    n_pool = min(g.g3, n_live, max_pool_depth(input_shape.height, input_shape.width))
    n_avg = _round_pct(g.g4, n_pool)
    n_concat = min(_round_pct(g.g5, n), n_live)
    n_add = min(_round_pct(g.g6, n), n_live - n_concat)

    plans = []
    for pos, src in enumerate(surviving, 1):
        depth = min(pos - 1, n_pool)
        pool = None
        if pos <= n_pool:
            pool = AVG_POOL_2 if pos > n_pool - n_avg else MAX_POOL_2
        skip = None
        if pos <= n_concat:
            skip = CONCAT
        elif pos > n_live - n_add:
            skip = ADD
        branches = tuple((k, src in sep_layers and k in separated) for k in kernels[src])
        plans.append(LayerPlan(pos, src + 1, branches, depth, g.g12 * 2 ** depth, pool, skip))
    return plans


class _Builder:
    def __init__(self):
        self.nodes: list[NodeSpec] = []

    def add(self, kind, inputs=(), kernel=0, c_in=0, c_out=0, layer=0, role="") -> int:
        node_id = len(self.nodes)
        self.nodes.append(NodeSpec(node_id, kind, tuple(inputs), kernel, c_in, c_out, layer, role))
        return node_id

    def conv_layer(self, src, c_in, plan: LayerPlan, layer: int) -> int:
        target = plan.channels
        outs = []
        for kernel, separated in plan.branches:
            kind = SEP_CONV_PAIR if separated else CONV
            conv = self.add(kind, [src], kernel, c_in, target, layer, "branch")
            outs.append(self.add(RELU, [conv], c_in=target, c_out=target, layer=layer, role="branch"))
        if len(outs) == 1:
            return outs[0]
        width = target * len(outs)
        cat = self.add(CONCAT, outs, c_out=width, layer=layer, role="merge")
        rescale = self.add(RESCALE_CONV_1x1, [cat], 1, width, target, layer, "merge")
        return self.add(RELU, [rescale], c_in=target, c_out=target, layer=layer, role="merge")


def compile_genome(g: Genome, input_shape: TensorShape, decode_seed: int = 0) -> ArchGraph:
    """Compile a genome into a shape-annotated :class:`ArchGraph`.

    The result depends only on ``(g, input_shape, decode_seed)``.
    """
    h, w = input_shape.height, input_shape.width
    if not (_is_pow2(h) and _is_pow2(w)) or min(h, w) < 8:
        raise CompileError(f"input spatial dims must be powers of two >= 8, got {h}x{w}")
    if input_shape.channels != 1:
        raise CompileError(f"input must have 1 channel, got {input_shape.channels}")

    plans = plan_layers(g, input_shape, decode_seed)
    n_live = len(plans)
    b = _Builder()
    cur = b.add(INPUT, c_out=1)
    c = 1
    enc_out = {}
    for plan in plans:
        cur = b.conv_layer(cur, c, plan, plan.position)
        c = plan.channels
        enc_out[plan.position] = (cur, c)
        if plan.pool_after:
            cur = b.add(plan.pool_after, [cur], c_in=c, c_out=c)

    for plan in reversed(plans):
        layer = 2 * n_live + 1 - plan.position
        if plan.pool_after:
            cur = b.add(UPSAMPLE_2, [cur], c_in=c, c_out=c)
        skip_src, skip_c = enc_out[plan.position]
        if plan.skip == CONCAT:
            cat = b.add(CONCAT, [cur, skip_src], c_out=c + skip_c, role="skip")
            rescale = b.add(RESCALE_CONV_1x1, [cat], 1, c + skip_c, plan.channels, role="skip")
            cur = b.add(RELU, [rescale], c_in=plan.channels, c_out=plan.channels, role="skip")
            c = plan.channels
        cur = b.conv_layer(cur, c, plan, layer)
        c = plan.channels
        if plan.skip == ADD:
            cur = b.add(ADD, [cur, skip_src], c_out=c, role="skip")

    b.add(OUTPUT_CONV, [cur], 1, c, 1)
    graph = ArchGraph(tuple(b.nodes), input_shape, None, g.digest(), decode_seed)
    return infer_shapes(graph)


def infer_shapes(graph: ArchGraph) -> ArchGraph:
    """Annotate every node with its output shape, checking all joins."""
    shapes: dict[int, TensorShape] = {}
    seen = set()
    for node in graph.nodes:
        if node.id in seen:
            raise ShapeError(f"node {node.id}: duplicate id")
        for src in node.inputs:
            if src not in shapes:
                raise ShapeError(f"node {node.id}: input {src} is not defined earlier")
        ins = [shapes[i] for i in node.inputs]
        shapes[node.id] = _node_shape(node, ins, graph.input_shape)
        seen.add(node.id)

    if not graph.nodes or graph.nodes[0].kind != INPUT:
        raise ShapeError("graph must start with an INPUT node")
    if sum(n.kind == INPUT for n in graph.nodes) != 1:
        raise ShapeError("graph must have exactly one INPUT node")
    last = graph.nodes[-1]
    want = TensorShape(graph.input_shape.height, graph.input_shape.width, 1)
    if shapes[last.id] != want:
        raise ShapeError(f"node {last.id}: output shape {shapes[last.id]} != expected {want}")
    return replace(graph, shapes=tuple(shapes[n.id] for n in graph.nodes))


def _expect_arity(node, ins, arity):
    if arity == "many":
        if len(ins) < 2:
            raise ShapeError(f"node {node.id}: {node.kind} needs at least 2 inputs, got {len(ins)}")
    elif len(ins) != arity:
        raise ShapeError(f"node {node.id}: {node.kind} needs {arity} input(s), got {len(ins)}")


def _node_shape(node: NodeSpec, ins, input_shape: TensorShape) -> TensorShape:
    kind = node.kind
    if kind == INPUT:
        _expect_arity(node, ins, 0)
        return input_shape
    if kind in MERGE_KINDS:
        _expect_arity(node, ins, "many")
        first = ins[0]
        for other in ins[1:]:
            if kind == ADD and other != first:
                raise ShapeError(f"node {node.id}: ADD inputs differ: {first} vs {other}")
            if (other.height, other.width) != (first.height, first.width):
                raise ShapeError(f"node {node.id}: CONCAT spatial mismatch: {first} vs {other}")
        channels = first.channels if kind == ADD else sum(s.channels for s in ins)
        if node.c_out and node.c_out != channels:
            raise ShapeError(f"node {node.id}: declared {node.c_out} channels, inputs give {channels}")
        return TensorShape(first.height, first.width, channels)

    _expect_arity(node, ins, 1)
    (x,) = ins
    if kind in CONV_KINDS:
        if node.c_in != x.channels:
            raise ShapeError(
                f"node {node.id}: conv expects {node.c_in} input channels, got shape {x}"
            )
        if node.kernel < 1 or node.kernel % 2 == 0:
            raise ShapeError(f"node {node.id}: kernel must be odd and positive, got {node.kernel}")
        if kind == OUTPUT_CONV and node.c_out != 1:
            raise ShapeError(f"node {node.id}: output conv must produce 1 channel")
        return TensorShape(x.height, x.width, node.c_out)
    if kind in POOL_KINDS:
        if x.height % 2 or x.width % 2 or x.height < 2 or x.width < 2:
            raise ShapeError(f"node {node.id}: pooling needs even spatial dims, got {x}")
        return TensorShape(x.height // 2, x.width // 2, x.channels)
    if kind == UPSAMPLE_2:
        return TensorShape(x.height * 2, x.width * 2, x.channels)
    if kind == RELU:
        return x
    raise ShapeError(f"node {node.id}: unknown kind {kind!r}")


# -- structural views -------------------------------------------------------

def branch_table(graph: ArchGraph) -> dict[int, Counter]:
    """Multiset of (kernel, separated) branch specs per conv layer."""
    table: dict[int, Counter] = {}
    for n in graph.nodes:
        if n.role == "branch" and n.kind in (CONV, SEP_CONV_PAIR):
            table.setdefault(n.layer, Counter())[(n.kernel, n.kind == SEP_CONV_PAIR)] += 1
    return table


def mirror_certificate(graph: ArchGraph) -> bool:
    """True iff encoder layer i and decoder layer L+1-i hold the same branches."""
    table = branch_table(graph)
    n_layers = len(table)
    if n_layers == 0 or n_layers % 2 or sorted(table) != list(range(1, n_layers + 1)):
        return False
    return all(table[i] == table[n_layers + 1 - i] for i in range(1, n_layers // 2 + 1))


def bottleneck_shape(graph: ArchGraph) -> TensorShape:
    """Smallest conv-layer output (area first, then width), head excluded."""
    if graph.shapes is None:
        raise ValueError("graph has no inferred shapes")
    cands = [s for n, s in zip(graph.nodes, graph.shapes)
             if n.kind in (CONV, SEP_CONV_PAIR, RESCALE_CONV_1x1)]
    if not cands:
        return graph.shapes[-1]
    return min(cands, key=lambda s: (s.height * s.width, s.channels))


def to_text(graph: ArchGraph) -> str:
    """Export: one ``id kind kernel c_in c_out <- input_ids`` line per node."""
    s = graph.input_shape
    lines = [f"# input {s.height}x{s.width}x{s.channels}"]
    lines.extend(n.line() for n in graph.nodes)
    return "\n".join(lines) + "\n"


def from_text(text: str) -> ArchGraph:
    """Parse the export format back into an annotated graph (roles are lost)."""
    input_shape = None
    nodes = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "input":
                h, w, c = (int(v) for v in parts[1].split("x"))
                input_shape = TensorShape(h, w, c)
            continue
        try:
            head, srcs = line.split("<-")
            node_id, kind, kernel, c_in, c_out = head.split()
            inputs = () if srcs.strip() == "-" else tuple(int(v) for v in srcs.split(","))
            nodes.append(NodeSpec(int(node_id), kind, inputs,
                                  0 if kernel == "-" else int(kernel), int(c_in), int(c_out)))
        except ValueError:
            raise ShapeError(f"malformed graph line: {raw!r}") from None
    if input_shape is None:
        raise ShapeError("graph text lacks an '# input HxWxC' header")
    return infer_shapes(ArchGraph(tuple(nodes), input_shape))


def graph_digest(graph: ArchGraph) -> str:
    """64-bit structural digest as 16 hex chars (ignores genome/decode seed)."""
    return hashlib.blake2b(to_text(graph).encode("utf-8"), digest_size=8).hexdigest()


def structurally_equal(a: ArchGraph, b: ArchGraph) -> bool:
    def key(g):
        return g.input_shape, tuple((n.id, n.kind, n.inputs, n.kernel, n.c_in, n.c_out)
                                    for n in g.nodes)
    return key(a) == key(b)
