"""Stage-table synthesis, rounding rules, and the text format round-trip."""

import numpy as np
import pytest

from effcxr.arch import (
    ArchSpec,
    HeadSpec,
    ScalingConfig,
    StageSpec,
    VARIANTS,
    build_arch,
    build_scaled_arch,
    parse_arch,
    round_channels,
    round_repeats,
    scale,
    serialize_arch,
    toy_arch,
)

# Resolved (channels, repeats) per MBConv stage for the named variants, as
# produced by the canonical compound-scaling recipe.  These doubly anchor the
# footprint reproduction: if any entry drifts, parameter counts drift too.
B0_CHANNELS = (16, 24, 40, 80, 112, 192, 320)
B0_REPEATS = (1, 2, 2, 3, 3, 4, 1)
EXPECTED_REPEATS = {
    "B0": (1, 2, 2, 3, 3, 4, 1),
    "B1": (2, 3, 3, 4, 4, 5, 2),
    "B2": (2, 3, 3, 4, 4, 5, 2),
    "B3": (2, 3, 3, 5, 5, 6, 2),
    "B4": (2, 4, 4, 6, 6, 8, 2),
    "B5": (3, 5, 5, 7, 7, 9, 3),
}
EXPECTED_CHANNELS = {
    "B0": (32, 16, 24, 40, 80, 112, 192, 320, 1280),
    "B1": (32, 16, 24, 40, 80, 112, 192, 320, 1280),
    "B2": (32, 16, 24, 48, 88, 120, 208, 352, 1408),
    "B3": (40, 24, 32, 48, 96, 136, 232, 384, 1536),
    "B4": (48, 24, 32, 56, 112, 160, 272, 448, 1792),
    "B5": (48, 24, 40, 64, 128, 176, 304, 512, 2048),
}


class TestRounding:
    def test_round_channels_exact_multiples(self):
        assert round_channels(32) == 32
        assert round_channels(8) == 8
        assert round_channels(1280) == 1280

    def test_round_channels_nearest_multiple(self):
        assert round_channels(35.2) == 32  # rounds down, still >= 90%
        assert round_channels(44.0) == 48
        assert round_channels(17.6) == 16
        assert round_channels(25.6) == 24
        assert round_channels(51.2) == 48

    def test_round_channels_ninety_percent_bump(self):
        # 11.9 snaps to 8, but 8 < 0.9 * 11.9, so it bumps to 16
        assert round_channels(11.9) == 16
        assert round_channels(8.8) == 8  # 8 >= 0.9 * 8.8, no bump

    def test_round_channels_floor_is_divisor(self):
        assert round_channels(1.0) == 8
        assert round_channels(0.25 * 16) == 8

    def test_round_channels_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            round_channels(0)
        with pytest.raises(ValueError):
            round_channels(-3.0)

    def test_round_repeats_is_ceiling(self):
        assert round_repeats(1.0) == 1
        assert round_repeats(1.1) == 2
        assert round_repeats(2.2) == 3
        assert round_repeats(8.8) == 9

    def test_round_repeats_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            round_repeats(0)


class TestScalingConfig:
    def test_defaults_satisfy_budget(self):
        cfg = ScalingConfig()
        assert cfg.alpha == 1.2
        assert cfg.beta == 1.1
        assert cfg.gamma == 1.15

    def test_scale_exponents(self):
        d, w, r = scale(ScalingConfig(phi=1.0))
        assert (d, w, r) == (1.2, 1.1, 1.15)
        d2, w2, r2 = scale(ScalingConfig(phi=2.0))
        assert np.isclose(d2, 1.44)
        assert np.isclose(w2, 1.21)
        assert np.isclose(r2, 1.3225)

    def test_budget_identity_enforced(self):
        with pytest.raises(ValueError):
            ScalingConfig(alpha=1.5, beta=1.2, gamma=1.2)

    def test_coefficients_at_least_one(self):
        with pytest.raises(ValueError):
            ScalingConfig(alpha=0.9)


class TestVariantTables:
    def test_variant_multipliers(self):
        assert VARIANTS["B0"].width_mult == 1.0
        assert VARIANTS["B0"].resolution == 224
        assert VARIANTS["B3"].width_mult == 1.2
        assert VARIANTS["B3"].depth_mult == 1.4
        assert VARIANTS["B3"].resolution == 300
        assert VARIANTS["B5"].width_mult == 1.6
        assert VARIANTS["B5"].depth_mult == 2.2
        assert VARIANTS["B5"].resolution == 456

    def test_b0_stage_table(self):
        spec = build_arch("B0", 1000, head="standard")
        mbconv = spec.stages[1:-1]
        assert tuple(s.channels for s in mbconv) == B0_CHANNELS
        assert tuple(s.repeats for s in mbconv) == B0_REPEATS
        assert spec.stages[0].channels == 32
        assert spec.stages[-1].channels == 1280
        assert tuple(s.kernel for s in mbconv) == (3, 3, 5, 3, 5, 5, 3)
        assert tuple(s.stride for s in mbconv) == (1, 2, 2, 2, 1, 2, 1)
        assert tuple(s.expansion for s in mbconv) == (1, 6, 6, 6, 6, 6, 6)

    @pytest.mark.parametrize("variant", sorted(VARIANTS))
    def test_all_variant_channels_and_repeats(self, variant):
        spec = build_arch(variant, 3)
        assert tuple(s.channels for s in spec.stages) == EXPECTED_CHANNELS[variant]
        assert tuple(s.repeats for s in spec.stages[1:-1]) == EXPECTED_REPEATS[variant]
        assert spec.input_resolution == VARIANTS[variant].resolution

    def test_resolution_chain(self):
        spec = build_arch("B0", 3)
        # five stride-2 reductions inside the table: 224 -> 112 -> 56 -> 28 -> 14 -> 7
        assert tuple(s.resolution for s in spec.stages) == (
            224, 112, 112, 56, 28, 14, 14, 7, 7,
        )
        assert spec.feature_resolution == 7
        assert spec.feature_channels == 1280

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            build_arch("B9", 3)

    def test_case_insensitive_variant(self):
        assert build_arch("b2", 3).variant == "B2"


class TestToyArch:
    def test_single_repeat_everywhere(self):
        spec = toy_arch()
        assert all(s.repeats == 1 for s in spec.stages)

    def test_quarter_width(self):
        spec = toy_arch()
        assert spec.stages[0].channels == 8  # 32 * 0.25
        assert spec.stages[-1].channels == 320  # 1280 * 0.25
        assert spec.input_resolution == 64
        assert spec.num_classes == 3
        assert spec.head.kind == "custom"

    def test_custom_resolution_and_classes(self):
        spec = toy_arch(num_classes=2, resolution=32)
        assert spec.num_classes == 2
        assert spec.input_resolution == 32


class TestSpecValidation:
    def test_named_variant_pins_resolution(self):
        spec = build_arch("B0", 3)
        with pytest.raises(ValueError):
            ArchSpec(
                variant="B0",
                input_resolution=225,
                num_classes=3,
                include_se=True,
                stages=spec.stages,
                head=spec.head,
            )

    def test_broken_resolution_chain_rejected(self):
        spec = toy_arch()
        bad = list(spec.stages)
        s = bad[3]
        bad[3] = StageSpec(
            operator=s.operator,
            expansion=s.expansion,
            kernel=s.kernel,
            channels=s.channels,
            repeats=s.repeats,
            stride=s.stride,
            resolution=s.resolution + 1,
        )
        with pytest.raises(ValueError):
            ArchSpec(
                variant="custom",
                input_resolution=spec.input_resolution,
                num_classes=3,
                include_se=True,
                stages=tuple(bad),
                head=spec.head,
            )

    def test_stage_validation(self):
        with pytest.raises(ValueError):
            StageSpec("Pool", 1, 3, 8, 1, 1, 32)
        with pytest.raises(ValueError):
            StageSpec("MBConv", 1, 3, 8, 1, 3, 32)  # stride 3
        with pytest.raises(ValueError):
            StageSpec("MBConv", 1, 3, 12, 1, 1, 32)  # not a multiple of 8
        with pytest.raises(ValueError):
            StageSpec("MBConv", 4, 3, 8, 1, 1, 32)  # expansion not 1 or 6

    def test_head_validation(self):
        with pytest.raises(ValueError):
            HeadSpec(kind="gap")
        with pytest.raises(ValueError):
            HeadSpec(map_dropout=1.0)
        with pytest.raises(ValueError):
            HeadSpec(widths=(512,))

    def test_num_classes_minimum(self):
        with pytest.raises(ValueError):
            toy_arch(num_classes=1)

    def test_minimum_resolution(self):
        with pytest.raises(ValueError):
            build_scaled_arch(0.25, 1e-9, 4, 3)


class TestTextFormat:
    def test_round_trip_named_variants(self):
        for variant in sorted(VARIANTS):
            for head in ("standard", "custom"):
                spec = build_arch(variant, 17, head=head)
                assert parse_arch(serialize_arch(spec)) == spec

    def test_round_trip_toy(self):
        spec = toy_arch(num_classes=2, resolution=48)
        assert parse_arch(serialize_arch(spec)) == spec

    def test_round_trip_no_se(self):
        spec = build_arch("B1", 5, include_se=False)
        again = parse_arch(serialize_arch(spec))
        assert again == spec
        assert not again.include_se

    def test_header_line_contents(self):
        text = serialize_arch(build_arch("B0", 3))
        first = text.splitlines()[0]
        assert first == "variant=B0 res=224 nc=3 se=1"

    def test_stage_line_fields(self):
        text = serialize_arch(toy_arch())
        stage_lines = [ln for ln in text.splitlines() if ln.startswith("stage")]
        assert len(stage_lines) == 9
        assert stage_lines[0] == "stage op=Conv e=1 k=3 c=8 n=1 s=2 r=64"

    def test_custom_head_line_round_trips_dropout(self):
        spec = toy_arch(head=HeadSpec(kind="custom", map_dropout=0.15, mid_dropout=0.45))
        again = parse_arch(serialize_arch(spec))
        assert again.head.map_dropout == 0.15
        assert again.head.mid_dropout == 0.45

    def test_parse_errors(self):
        with pytest.raises(ValueError):
            parse_arch("")
        with pytest.raises(ValueError):
            parse_arch("variant=B0 res=224 nc=3")  # missing se
        with pytest.raises(ValueError):
            parse_arch("variant=B0 res=224 nc=3 se=1 bogus")  # token without =
        with pytest.raises(ValueError):
            parse_arch("variant=B0 res=224 nc=3 se=1 se=1")  # duplicate key
        good = serialize_arch(toy_arch())
        with pytest.raises(ValueError):
            parse_arch(good.replace("stage op=Conv e=1 k=1", "layer op=Conv e=1 k=1"))
        with pytest.raises(ValueError):
            parse_arch(good.replace(" n=1 s=2 r=64", " s=2 r=64"))  # missing field

    def test_random_custom_specs_round_trip(self):
        rng = np.random.default_rng(31)
        for trial in range(25):
            width = float(rng.choice([0.25, 0.5, 1.0, 1.3]))
            depth = float(rng.choice([1e-9, 1.0, 1.5]))
            res = int(rng.choice([32, 64, 96, 128]))
            nc = int(rng.integers(2, 12))
            head = str(rng.choice(["standard", "custom"]))
            se = bool(rng.integers(0, 2))
            spec = build_scaled_arch(width, depth, res, nc, head=head, include_se=se)
            assert parse_arch(serialize_arch(spec)) == spec, f"trial {trial}"
