"""Structural layer plan derived from an ArchSpec.

The plan names every parameterized layer and records the shapes and spatial
resolutions needed downstream.  Cost counting, parameter initialization,
weight-file validation and the forward pass all walk this one structure, so
they cannot drift apart.

Naming scheme (documented for weight files and transfer maps):

    stage1.block0.conv / .bn                    stem
    stage{s}.block{b}.expand / .expand_bn       MBConv expansion (absent if e=1)
    stage{s}.block{b}.dw / .dw_bn               depthwise conv
    stage{s}.block{b}.se_reduce / .se_expand    squeeze-excitation gates
    stage{s}.block{b}.project / .project_bn     linear bottleneck
    stage{N}.block0.conv / .bn                  1x1 conv top
    head.fc                                     standard head
    head.bn10 / .fc11 / .bn11 / .fc12 / .bn12 / .fc13   custom head
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

from .arch import ArchSpec, HEAD_CUSTOM, HEAD_STANDARD, SE_RATIO


@dataclass(frozen=True)
class ConvL:
    name: str
    kh: int
    kw: int
    cin: int
    cout: int
    stride: int
    in_res: int
    out_res: int
    bias: bool = False


@dataclass(frozen=True)
class DepthwiseL:
    name: str
    kernel: int
    channels: int
    stride: int
    in_res: int
    out_res: int


@dataclass(frozen=True)
class DenseL:
    name: str
    fin: int
    fout: int
    bias: bool = True


@dataclass(frozen=True)
class BatchNormL:
    name: str
    channels: int
    res: int | None  # spatial size of the normalized maps; None for (b, f) inputs


ParamLayer = Union[ConvL, DepthwiseL, DenseL, BatchNormL]


@dataclass(frozen=True)
class BlockPlan:
    """One MBConv block: expand (optional), depthwise, SE (optional), project."""

    name: str
    expand: ConvL | None
    expand_bn: BatchNormL | None
    dw: DepthwiseL
    dw_bn: BatchNormL
    se_reduce: DenseL | None
    se_expand: DenseL | None
    project: ConvL
    project_bn: BatchNormL
    residual: bool
    in_res: int
    out_res: int
    mid_channels: int


@dataclass(frozen=True)
class StandardHeadPlan:
    fc: DenseL


@dataclass(frozen=True)
class CustomHeadPlan:
    bn10: BatchNormL
    fc11: DenseL
    bn11: BatchNormL
    fc12: DenseL
    bn12: BatchNormL
    fc13: DenseL
    map_dropout: float
    mid_dropout: float


@dataclass(frozen=True)
class NetworkPlan:
    stem: ConvL
    stem_bn: BatchNormL
    blocks: tuple[BlockPlan, ...]
    top: ConvL
    top_bn: BatchNormL
    head: StandardHeadPlan | CustomHeadPlan
    num_classes: int
    input_resolution: int
    feature_channels: int
    feature_resolution: int


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def build_plan(spec: ArchSpec) -> NetworkPlan:
    stages = spec.stages
    stem_stage = stages[0]
    stem_out = _ceil_div(stem_stage.resolution, stem_stage.stride)
    stem = ConvL(
        name="stage1.block0.conv",
        kh=stem_stage.kernel,
        kw=stem_stage.kernel,
        cin=3,
        cout=stem_stage.channels,
        stride=stem_stage.stride,
        in_res=stem_stage.resolution,
        out_res=stem_out,
    )
    stem_bn = BatchNormL("stage1.block0.bn", stem_stage.channels, stem_out)

    blocks: list[BlockPlan] = []
    cin = stem_stage.channels
    for stage_index, stg in enumerate(stages[1:-1], start=2):
        res = stg.resolution
        for b in range(stg.repeats):
            prefix = f"stage{stage_index}.block{b}"
            stride = stg.stride if b == 0 else 1
            out_res = _ceil_div(res, stride)
            mid = cin * stg.expansion

            expand = expand_bn = None
            if stg.expansion != 1:
                expand = ConvL(f"{prefix}.expand", 1, 1, cin, mid, 1, res, res)
                expand_bn = BatchNormL(f"{prefix}.expand_bn", mid, res)

            dw = DepthwiseL(f"{prefix}.dw", stg.kernel, mid, stride, res, out_res)
            dw_bn = BatchNormL(f"{prefix}.dw_bn", mid, out_res)

            se_reduce = se_expand = None
            if spec.include_se:
                se_channels = max(1, int(cin * SE_RATIO))
                se_reduce = DenseL(f"{prefix}.se_reduce", mid, se_channels, bias=True)
                se_expand = DenseL(f"{prefix}.se_expand", se_channels, mid, bias=True)

            project = ConvL(f"{prefix}.project", 1, 1, mid, stg.channels, 1, out_res, out_res)
            project_bn = BatchNormL(f"{prefix}.project_bn", stg.channels, out_res)

            blocks.append(
                BlockPlan(
                    name=prefix,
                    expand=expand,
                    expand_bn=expand_bn,
                    dw=dw,
                    dw_bn=dw_bn,
                    se_reduce=se_reduce,
                    se_expand=se_expand,
                    project=project,
                    project_bn=project_bn,
                    residual=(stride == 1 and cin == stg.channels),
                    in_res=res,
                    out_res=out_res,
                    mid_channels=mid,
                )
            )
            cin = stg.channels
            res = out_res

    top_stage = stages[-1]
    top_index = len(stages)
    top = ConvL(
        name=f"stage{top_index}.block0.conv",
        kh=1,
        kw=1,
        cin=cin,
        cout=top_stage.channels,
        stride=1,
        in_res=top_stage.resolution,
        out_res=top_stage.resolution,
    )
    top_bn = BatchNormL(f"stage{top_index}.block0.bn", top_stage.channels, top_stage.resolution)

    fc_in = top_stage.channels
    if spec.head.kind == HEAD_STANDARD:
        head: StandardHeadPlan | CustomHeadPlan = StandardHeadPlan(
            fc=DenseL("head.fc", fc_in, spec.num_classes, bias=True)
        )
    else:
        w1, w2 = spec.head.widths
        head = CustomHeadPlan(
            bn10=BatchNormL("head.bn10", fc_in, top_stage.resolution),
            fc11=DenseL("head.fc11", fc_in, w1, bias=False),
            bn11=BatchNormL("head.bn11", w1, None),
            fc12=DenseL("head.fc12", w1, w2, bias=False),
            bn12=BatchNormL("head.bn12", w2, None),
            fc13=DenseL("head.fc13", w2, spec.num_classes, bias=True),
            map_dropout=spec.head.map_dropout,
            mid_dropout=spec.head.mid_dropout,
        )

    return NetworkPlan(
        stem=stem,
        stem_bn=stem_bn,
        blocks=tuple(blocks),
        top=top,
        top_bn=top_bn,
        head=head,
        num_classes=spec.num_classes,
        input_resolution=spec.input_resolution,
        feature_channels=fc_in,
        feature_resolution=top_stage.resolution,
    )


def param_layers(plan: NetworkPlan) -> Iterator[ParamLayer]:
    """Every parameterized layer, in forward order."""
    yield plan.stem
    yield plan.stem_bn
    for blk in plan.blocks:
        if blk.expand is not None:
            yield blk.expand
            yield blk.expand_bn
        yield blk.dw
        yield blk.dw_bn
        if blk.se_reduce is not None:
            yield blk.se_reduce
            yield blk.se_expand
        yield blk.project
        yield blk.project_bn
    yield plan.top
    yield plan.top_bn
    if isinstance(plan.head, StandardHeadPlan):
        yield plan.head.fc
    else:
        yield plan.head.bn10
        yield plan.head.fc11
        yield plan.head.bn11
        yield plan.head.fc12
        yield plan.head.bn12
        yield plan.head.fc13


def layer_param_count(layer: ParamLayer) -> int:
    """Number of stored parameters for one layer (BN counts all four arrays)."""
    if isinstance(layer, ConvL):
        n = layer.kh * layer.kw * layer.cin * layer.cout
        return n + (layer.cout if layer.bias else 0)
    if isinstance(layer, DepthwiseL):
        return layer.kernel * layer.kernel * layer.channels
    if isinstance(layer, DenseL):
        return layer.fin * layer.fout + (layer.fout if layer.bias else 0)
    if isinstance(layer, BatchNormL):
        return 4 * layer.channels
    raise TypeError(f"unknown layer type {type(layer)!r}")


def layer_macs(layer: ParamLayer) -> int:
    """Multiply-accumulate count for one layer at batch size 1 (biases excluded)."""
    if isinstance(layer, ConvL):
        return layer.out_res * layer.out_res * layer.cout * layer.kh * layer.kw * layer.cin
    if isinstance(layer, DepthwiseL):
        return layer.out_res * layer.out_res * layer.channels * layer.kernel * layer.kernel
    if isinstance(layer, DenseL):
        return layer.fin * layer.fout
    if isinstance(layer, BatchNormL):
        return 0
    raise TypeError(f"unknown layer type {type(layer)!r}")


def stage_of(layer_name: str) -> str:
    """Group label for per-stage breakdowns: 'stage3' or 'head'."""
    return layer_name.split(".", 1)[0]
