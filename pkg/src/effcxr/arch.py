"""Architecture synthesis for the compound-scaled MBConv family.

A single base stage table (stem conv, seven MBConv stages, 1x1 conv top) is
stretched along three axes: depth (stage repeats), width (channel counts) and
input resolution.  The named variants B0-B5 use the canonical multiplier pairs
that reproduce the published parameter footprints; ``custom`` variants accept
arbitrary multipliers (used for toy-scale training in the tests and demos).

Channel rounding snaps to the nearest multiple of 8 but never drops below 90%
of the unrounded value; repeat rounding is a plain ceiling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

CHANNEL_DIVISOR = 8

# (operator, expansion, kernel, base channels, base repeats, stride)
BASE_STAGES: tuple[tuple[str, int, int, int, int, int], ...] = (
    ("Conv", 1, 3, 32, 1, 2),
    ("MBConv", 1, 3, 16, 1, 1),
    ("MBConv", 6, 3, 24, 2, 2),
    ("MBConv", 6, 5, 40, 2, 2),
    ("MBConv", 6, 3, 80, 3, 2),
    ("MBConv", 6, 5, 112, 3, 1),
    ("MBConv", 6, 5, 192, 4, 2),
    ("MBConv", 6, 3, 320, 1, 1),
    ("Conv", 1, 1, 1280, 1, 1),
)


@dataclass(frozen=True)
class Variant:
    width_mult: float
    depth_mult: float
    resolution: int


# Canonical multiplier pairs for the published family.
VARIANTS: dict[str, Variant] = {
    "B0": Variant(1.0, 1.0, 224),
    "B1": Variant(1.0, 1.1, 240),
    "B2": Variant(1.1, 1.2, 260),
    "B3": Variant(1.2, 1.4, 300),
    "B4": Variant(1.4, 1.8, 380),
    "B5": Variant(1.6, 2.2, 456),
}

SE_RATIO = 0.25  # squeeze width as a fraction of the block's input channels


@dataclass(frozen=True)
class ScalingConfig:
    """Compound-scaling coefficients.

    ``alpha``/``beta``/``gamma`` govern depth/width/resolution; ``phi`` is the
    single budget exponent.  The constructor enforces the resource identity
    alpha * beta^2 * gamma^2 ~= 2 (within [1.9, 2.1]).
    """

    alpha: float = 1.2
    beta: float = 1.1
    gamma: float = 1.15
    phi: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be >= 1; got {getattr(self, name)}")
        budget = self.alpha * self.beta**2 * self.gamma**2
        if not 1.9 <= budget <= 2.1:
            raise ValueError(
                f"alpha * beta^2 * gamma^2 must lie in [1.9, 2.1]; got {budget:.4f}"
            )


def scale(config: ScalingConfig) -> tuple[float, float, float]:
    """Return (depth_mult, width_mult, resolution_mult) = (a^phi, b^phi, g^phi)."""
    return (
        config.alpha**config.phi,
        config.beta**config.phi,
        config.gamma**config.phi,
    )


def round_channels(raw: float, divisor: int = CHANNEL_DIVISOR) -> int:
    """Snap a channel count to the nearest multiple of ``divisor``.

    Rounds half up and never returns less than 90% of ``raw`` (bumping up one
    divisor step when the snap would undershoot), with a floor of ``divisor``.
    """
    if raw <= 0:
        raise ValueError(f"channel count must be positive; got {raw}")
    snapped = max(divisor, int(raw + divisor / 2) // divisor * divisor)
    if snapped < 0.9 * raw:
        snapped += divisor
    return int(snapped)


def round_repeats(raw: float) -> int:
    """Ceiling of a scaled repeat count (depth never rounds away a block)."""
    if raw <= 0:
        raise ValueError(f"repeat count must be positive; got {raw}")
    return int(math.ceil(raw))


@dataclass(frozen=True)
class StageSpec:
    """One row of the resolved stage table.

    ``resolution`` is the spatial size of the stage's input feature map;
    ``stride`` applies to the first block of the stage only.
    """

    operator: str
    expansion: int
    kernel: int
    channels: int
    repeats: int
    stride: int
    resolution: int

    def __post_init__(self):
        if self.operator not in ("Conv", "MBConv"):
            raise ValueError(f"operator must be Conv or MBConv; got {self.operator!r}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2; got {self.stride}")
        if self.channels <= 0 or self.channels % CHANNEL_DIVISOR:
            raise ValueError(
                f"channels must be a positive multiple of {CHANNEL_DIVISOR}; got {self.channels}"
            )
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1; got {self.repeats}")
        if self.operator == "MBConv" and self.expansion not in (1, 6):
            raise ValueError(f"MBConv expansion must be 1 or 6; got {self.expansion}")


HEAD_STANDARD = "standard"
HEAD_CUSTOM = "custom"


@dataclass(frozen=True)
class HeadSpec:
    """Classifier head layout.

    ``standard``: global average pool -> biased FC -> softmax (the layout the
    published footprints assume).  ``custom``: BN + dropout on the final maps,
    then two BN/swish dense stages (512 and 128 wide) before the softmax FC.
    """

    kind: str = HEAD_CUSTOM
    widths: tuple[int, int] = (512, 128)
    map_dropout: float = 0.3
    mid_dropout: float = 0.3

    def __post_init__(self):
        if self.kind not in (HEAD_STANDARD, HEAD_CUSTOM):
            raise ValueError(f"head kind must be standard or custom; got {self.kind!r}")
        if len(self.widths) != 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"head widths must be two positive ints; got {self.widths}")
        for name in ("map_dropout", "mid_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must lie in [0, 1); got {rate}")


def _out_res(res: int, stride: int) -> int:
    return -(-res // stride)


@dataclass(frozen=True)
class ArchSpec:
    """A fully resolved architecture: stage table plus head and I/O contract."""

    variant: str
    input_resolution: int
    num_classes: int
    include_se: bool
    stages: tuple[StageSpec, ...]
    head: HeadSpec

    def __post_init__(self):
        if self.variant not in VARIANTS and self.variant != "custom":
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant in VARIANTS and self.input_resolution != VARIANTS[self.variant].resolution:
            raise ValueError(
                f"variant {self.variant} requires input resolution "
                f"{VARIANTS[self.variant].resolution}; got {self.input_resolution}"
            )
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2; got {self.num_classes}")
        if self.input_resolution < 8:
            raise ValueError(f"input resolution must be >= 8; got {self.input_resolution}")
        stages = self.stages
        if len(stages) < 3:
            raise ValueError("stage table needs a stem, at least one MBConv stage, and a top")
        first, last = stages[0], stages[-1]
        if first.operator != "Conv" or first.kernel != 3:
            raise ValueError("stage table must begin with the 3x3 Conv stem")
        if last.operator != "Conv" or last.kernel != 1 or last.repeats != 1:
            raise ValueError("stage table must end with the single 1x1 Conv stage")
        if any(s.operator != "MBConv" for s in stages[1:-1]):
            raise ValueError("interior stages must all be MBConv")
        res = self.input_resolution
        for i, stg in enumerate(stages):
            if stg.resolution != res:
                raise ValueError(
                    f"stage {i + 1} resolution {stg.resolution} breaks the chain; expected {res}"
                )
            res = _out_res(res, stg.stride)

    @property
    def feature_channels(self) -> int:
        return self.stages[-1].channels

    @property
    def feature_resolution(self) -> int:
        return _out_res(self.stages[-1].resolution, self.stages[-1].stride)


def build_arch(
    variant: str,
    num_classes: int,
    head: HeadSpec | str | None = None,
    include_se: bool = True,
) -> ArchSpec:
    """Resolve a named variant (B0-B5) into a full :class:`ArchSpec`."""
    key = variant.upper()
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    v = VARIANTS[key]
    return build_scaled_arch(
        width_mult=v.width_mult,
        depth_mult=v.depth_mult,
        resolution=v.resolution,
        num_classes=num_classes,
        head=head,
        include_se=include_se,
        variant=key,
    )


def build_scaled_arch(
    width_mult: float,
    depth_mult: float,
    resolution: int,
    num_classes: int,
    head: HeadSpec | str | None = None,
    include_se: bool = True,
    variant: str = "custom",
) -> ArchSpec:
    """Stretch the base stage table by explicit width/depth multipliers."""
    if isinstance(head, str):
        head = HeadSpec(kind=head)
    elif head is None:
        head = HeadSpec()
    stages = []
    res = resolution
    for op, expansion, kernel, channels, repeats, stride in BASE_STAGES:
        scaled_c = round_channels(channels * width_mult)
        scaled_n = repeats if op == "Conv" else round_repeats(depth_mult * repeats)
        stages.append(
            StageSpec(
                operator=op,
                expansion=expansion,
                kernel=kernel,
                channels=scaled_c,
                repeats=scaled_n,
                stride=stride,
                resolution=res,
            )
        )
        res = _out_res(res, stride)
    return ArchSpec(
        variant=variant,
        input_resolution=resolution,
        num_classes=num_classes,
        include_se=include_se,
        stages=tuple(stages),
        head=head,
    )


def toy_arch(
    num_classes: int = 3,
    resolution: int = 64,
    width_mult: float = 0.25,
    include_se: bool = True,
    head: HeadSpec | str | None = None,
) -> ArchSpec:
    """A width-reduced single-repeat network for fast experiments and tests."""
    return build_scaled_arch(
        width_mult=width_mult,
        depth_mult=1e-9,  # ceiling rounds every stage to one repeat
        resolution=resolution,
        num_classes=num_classes,
        head=head,
        include_se=include_se,
    )


# -- text serialization -------------------------------------------------------


def serialize_arch(spec: ArchSpec) -> str:
    """Render an ArchSpec as the line-oriented text format (exact round-trip)."""
    lines = [
        f"variant={spec.variant} res={spec.input_resolution} "
        f"nc={spec.num_classes} se={int(spec.include_se)}"
    ]
    if spec.head.kind == HEAD_CUSTOM:
        lines.append(
            f"head kind={spec.head.kind} d10={spec.head.map_dropout!r} "
            f"d11={spec.head.mid_dropout!r} w1={spec.head.widths[0]} w2={spec.head.widths[1]}"
        )
    else:
        lines.append(f"head kind={spec.head.kind}")
    for s in spec.stages:
        lines.append(
            f"stage op={s.operator} e={s.expansion} k={s.kernel} "
            f"c={s.channels} n={s.repeats} s={s.stride} r={s.resolution}"
        )
    return "\n".join(lines) + "\n"


def _parse_fields(line: str, lineno: int) -> dict[str, str]:
    fields = {}
    for token in line.split():
        if "=" not in token:
            raise ValueError(f"line {lineno}: malformed token {token!r} (expected key=value)")
        key, value = token.split("=", 1)
        if key in fields:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        fields[key] = value
    return fields


def parse_arch(text: str) -> ArchSpec:
    """Parse the text format back into an ArchSpec.  Inverse of serialize_arch."""
    lines = [ln for ln in (raw.strip() for raw in text.splitlines()) if ln]
    if not lines:
        raise ValueError("empty architecture description")
    header = _parse_fields(lines[0], 1)
    for key in ("variant", "res", "nc", "se"):
        if key not in header:
            raise ValueError(f"header missing {key!r}")

    head = HeadSpec(kind=HEAD_STANDARD)
    stage_lines = lines[1:]
    if stage_lines and stage_lines[0].startswith("head"):
        fields = _parse_fields(stage_lines[0].removeprefix("head").strip(), 2)
        kind = fields.get("kind", HEAD_CUSTOM)
        if kind == HEAD_CUSTOM:
            head = HeadSpec(
                kind=kind,
                widths=(int(fields["w1"]), int(fields["w2"])),
                map_dropout=float(fields["d10"]),
                mid_dropout=float(fields["d11"]),
            )
        else:
            head = HeadSpec(kind=kind)
        stage_lines = stage_lines[1:]

    stages = []
    for offset, line in enumerate(stage_lines):
        lineno = offset + 3
        if not line.startswith("stage"):
            raise ValueError(f"line {lineno}: expected a stage line; got {line!r}")
        f = _parse_fields(line.removeprefix("stage").strip(), lineno)
        try:
            stages.append(
                StageSpec(
                    operator=f["op"],
                    expansion=int(f["e"]),
                    kernel=int(f["k"]),
                    channels=int(f["c"]),
                    repeats=int(f["n"]),
                    stride=int(f["s"]),
                    resolution=int(f["r"]),
                )
            )
        except KeyError as exc:
            raise ValueError(f"line {lineno}: stage line missing field {exc}") from exc

    return ArchSpec(
        variant=header["variant"],
        input_resolution=int(header["res"]),
        num_classes=int(header["nc"]),
        include_se=bool(int(header["se"])),
        stages=tuple(stages),
        head=head,
    )
