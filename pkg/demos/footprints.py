"""Reproduce the published family footprints from first principles.

Builds every named variant with the compound-scaling rules, counts parameters
and multiply-accumulates exactly from the layer plan, and estimates the
serialized size.  Nothing here is measured on a framework; the numbers come
from the architecture alone.
"""

from effcxr.arch import build_arch
from effcxr.cost import cost_report

PUBLISHED_MIB = {"B0": 21, "B1": 31, "B2": 36, "B3": 48, "B4": 76, "B5": 118}


def main():
    print("ImageNet-style configuration (1000 classes, standard top):\n")
    print(f"{'variant':<8} {'input':>6} {'params':>12} {'MACs':>16} {'size':>12} {'published':>10}")
    for variant in ("B0", "B1", "B2", "B3", "B4", "B5"):
        spec = build_arch(variant, 1000, head="standard")
        report = cost_report(spec)
        print(
            f"{variant:<8} {spec.input_resolution:>6} {report.param_count:>12,} "
            f"{report.mac_count:>16,} {report.memory_mib:>9.2f} MiB "
            f"{PUBLISHED_MIB[variant]:>7} MiB"
        )

    print("\nScreening configuration (3 classes, deeper classification head):\n")
    base = cost_report(build_arch("B0", 3, head="standard"))
    custom = cost_report(build_arch("B0", 3, head="custom"))
    print(f"standard top: {base.param_count:>9,} params")
    print(f"custom head:  {custom.param_count:>9,} params "
          f"(+{custom.param_count - base.param_count:,} for the extra dense stack)")
    print("\nFull B0 breakdown with the custom head:\n")
    print(custom.summary())


if __name__ == "__main__":
    main()
