"""Exact footprint accounting: parameters, MACs, memory, elementwise ops.

Conventions (stated in every report):

* one MAC = one multiply-accumulate; conv contributes OH*OW*Cout*kh*kw*Cin,
  depthwise OH*OW*C*k*k, dense Fin*Fout, and squeeze-excitation its two dense
  layers.  Biases are not MACs.
* batch-norm, activations, bias adds, residual adds, SE gating, pooling,
  dropout and softmax are tallied separately as one elementwise operation per
  tensor element (batch size 1).
* memory is the float32 weight footprint: 4 bytes per parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .arch import ArchSpec
from .plan import (
    BatchNormL,
    ConvL,
    CustomHeadPlan,
    DenseL,
    DepthwiseL,
    NetworkPlan,
    StandardHeadPlan,
    build_plan,
    layer_macs,
    layer_param_count,
    param_layers,
    stage_of,
)

BYTES_PER_PARAM = 4  # float32


@dataclass(frozen=True)
class StageCost:
    stage: str
    params: int
    macs: int


@dataclass(frozen=True)
class CostReport:
    """Footprint totals plus a per-stage breakdown."""

    param_count: int
    mac_count: int
    memory_bytes: int
    elementwise_ops: int
    per_stage: tuple[StageCost, ...] = field(default_factory=tuple)

    @property
    def memory_mib(self) -> float:
        return self.memory_bytes / 2**20

    def summary(self) -> str:
        lines = [
            f"parameters:      {self.param_count:,}",
            f"macs:            {self.mac_count:,}",
            f"memory:          {self.memory_bytes:,} bytes ({self.memory_mib:.2f} MiB)",
            f"elementwise ops: {self.elementwise_ops:,}",
            "per-stage (params / macs):",
        ]
        for s in self.per_stage:
            lines.append(f"  {s.stage:<8} {s.params:>12,} {s.macs:>16,}")
        return "\n".join(lines)


def count_params(spec: ArchSpec) -> int:
    """Total stored parameters, batch-norm counted as 4 per channel."""
    return sum(layer_param_count(layer) for layer in param_layers(build_plan(spec)))


def count_macs(spec: ArchSpec) -> int:
    """Total multiply-accumulates for one forward pass at batch size 1."""
    return sum(layer_macs(layer) for layer in param_layers(build_plan(spec)))


def estimate_memory(spec: ArchSpec) -> int:
    """Weight storage in bytes assuming float32 parameters."""
    return BYTES_PER_PARAM * count_params(spec)


def _elementwise_ops(plan: NetworkPlan) -> int:
    """One op per tensor element for every non-MAC layer, batch size 1."""
    total = 0

    def maps(res: int, c: int) -> int:
        return res * res * c

    # stem BN + swish
    total += 2 * maps(plan.stem.out_res, plan.stem.cout)
    for blk in plan.blocks:
        if blk.expand is not None:
            total += 2 * maps(blk.expand.out_res, blk.expand.cout)  # BN + swish
        total += 2 * maps(blk.dw.out_res, blk.dw.channels)  # BN + swish
        if blk.se_reduce is not None:
            total += maps(blk.dw.out_res, blk.dw.channels)  # squeeze pool reads
            total += blk.se_reduce.fout + blk.se_reduce.fout  # bias + swish
            total += blk.se_expand.fout + blk.se_expand.fout  # bias + sigmoid
            total += maps(blk.dw.out_res, blk.dw.channels)  # gate multiply
        total += maps(blk.project.out_res, blk.project.cout)  # project BN
        if blk.residual:
            total += maps(blk.out_res, blk.project.cout)
    total += 2 * maps(plan.top.out_res, plan.top.cout)  # top BN + swish

    head = plan.head
    f = plan.feature_channels
    r = plan.feature_resolution
    if isinstance(head, StandardHeadPlan):
        total += maps(r, f)  # global average pool reads
        total += head.fc.fout  # bias adds
        total += plan.num_classes  # softmax
    else:
        total += maps(r, f)  # bn10
        total += maps(r, f)  # map dropout
        total += maps(r, f)  # global average pool reads
        total += 2 * head.fc11.fout  # bn11 + swish
        total += head.fc11.fout  # mid dropout
        total += 2 * head.fc12.fout  # bn12 + swish
        total += head.fc13.fout  # bias adds
        total += plan.num_classes  # softmax
    return total


def cost_report(spec: ArchSpec) -> CostReport:
    plan = build_plan(spec)
    per_stage: dict[str, list[int]] = {}
    params = 0
    macs = 0
    for layer in param_layers(plan):
        p, m = layer_param_count(layer), layer_macs(layer)
        params += p
        macs += m
        bucket = per_stage.setdefault(stage_of(layer.name), [0, 0])
        bucket[0] += p
        bucket[1] += m
    stages = tuple(StageCost(name, p, m) for name, (p, m) in per_stage.items())
    return CostReport(
        param_count=params,
        mac_count=macs,
        memory_bytes=BYTES_PER_PARAM * params,
        elementwise_ops=_elementwise_ops(plan),
        per_stage=stages,
    )
