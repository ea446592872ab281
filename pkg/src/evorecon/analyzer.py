"""Static cost analysis of compiled graphs.

FLOPs follow the product convention W * H * C_in * C_out * K_w * K_h per
convolution (one multiply-accumulate counted once).  Pooling, upsampling,
concatenation, addition and ReLU are counted as zero.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from . import phenotype as ph
from .phenotype import ArchGraph, TensorShape

FOOTER = "FLOPs count conv products W*H*Cin*Cout*Kw*Kh only; non-conv nodes count 0."


def _require_shapes(graph: ArchGraph):
    if graph.shapes is None:
        raise ValueError("graph must be shape-annotated (run infer_shapes first)")


def node_flops(node: ph.NodeSpec, out: TensorShape) -> int:
    hw = out.height * out.width
    if node.kind == ph.SEP_CONV_PAIR:
        # (k,1) conv c_in -> c_out, then (1,k) conv c_out -> c_out
        k, mid = node.kernel, node.c_out
        return hw * node.c_in * mid * k + hw * mid * node.c_out * k
    if node.is_conv:
        return hw * node.c_in * node.c_out * node.kernel * node.kernel
    return 0


def node_params(node: ph.NodeSpec) -> int:
    if node.kind == ph.SEP_CONV_PAIR:
        k, mid = node.kernel, node.c_out
        return (k * node.c_in * mid + mid) + (k * mid * node.c_out + node.c_out)
    if node.is_conv:
        return node.kernel * node.kernel * node.c_in * node.c_out + node.c_out
    return 0


def count_flops(graph: ArchGraph) -> int:
    _require_shapes(graph)
    return sum(node_flops(n, s) for n, s in zip(graph.nodes, graph.shapes))


def count_params(graph: ArchGraph) -> int:
    _require_shapes(graph)
    return sum(node_params(n) for n in graph.nodes)


@dataclass(frozen=True)
class Summary:
    input_shape: str
    conv_layers: int
    pool_layers: int
    avg_pool_layers: int
    concat_skips: int
    residual_skips: int
    separated_branches: int
    flops: int
    params: int
    bottleneck: str
    digest: str

    def as_dict(self) -> dict:
        return asdict(self)


def summarize(graph: ArchGraph) -> Summary:
    _require_shapes(graph)
    nodes = graph.nodes
    return Summary(
        input_shape=str(graph.input_shape),
        conv_layers=graph.num_layers(),
        pool_layers=sum(n.kind in ph.POOL_KINDS for n in nodes),
        avg_pool_layers=sum(n.kind == ph.AVG_POOL_2 for n in nodes),
        concat_skips=sum(n.kind == ph.CONCAT and n.role == "skip" for n in nodes),
        residual_skips=sum(n.kind == ph.ADD for n in nodes),
        separated_branches=sum(n.kind == ph.SEP_CONV_PAIR for n in nodes),
        flops=count_flops(graph),
        params=count_params(graph),
        bottleneck=str(ph.bottleneck_shape(graph)),
        digest=ph.graph_digest(graph),
    )


def report_kv(summary: Summary) -> str:
    """Machine-readable ``key = value`` report."""
    return "".join(f"{k} = {v}\n" for k, v in summary.as_dict().items())


def report_table(summary: Summary) -> str:
    """Aligned two-column report, with GFLOPs / M-params columns as in result tables."""
    rows = list(summary.as_dict().items())
    rows.append(("flops_G", f"{summary.flops / 1e9:.6f}"))
    rows.append(("params_M", f"{summary.params / 1e6:.6f}"))
    width = max(len(k) for k, _ in rows)
    body = "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)
    return body + f"# {FOOTER}\n"


def parse_report_kv(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if "=" in line and not line.startswith("#"):
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = int(v) if v.lstrip("-").isdigit() else v
    return out
