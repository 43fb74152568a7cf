"""Walk through dataset assembly, the three training presets, and relabeling.

Uses placeholder manifest rows (paths only, no image files) because assembly
and preset logic never touch pixels; only augmented rows carry replayable
recipes for load time.
"""

from effcxr.data import DatasetConfig, apply_config, build_covidx, class_counts, hierarchical_relabel
from effcxr.synthetic import fake_entries


def show(title, entries):
    counts = class_counts(entries)
    parts = ", ".join(f"{label} {n:,}" for label, n in counts.items())
    print(f"{title:<22} {len(entries):>6,} rows  ({parts})")


def main():
    rsna = fake_entries(8100, "Normal", "RSNA") + fake_entries(5600, "Pneumonia", "RSNA")
    covid = fake_entries(300, "COVID19", "COVIDCollection", prefix="cc")
    print(f"source pools: RSNA {len(rsna):,} rows, COVID collection {len(covid):,} rows\n")

    train, test = build_covidx(rsna, covid, seed=0)
    show("assembled train", train)
    show("assembled test", test)

    print("\ntraining presets:")
    for preset in ("raw", "raw-plus-aug", "balanced"):
        show(f"  {preset}", apply_config(train, DatasetConfig(preset=preset)))

    augmented = [e for e in apply_config(train, DatasetConfig(preset="balanced")) if e.aug_recipe]
    print(f"\nfirst augmented row replays with recipe: {augmented[0].aug_recipe!r}")

    print("\nhierarchy relabeling of the assembled train split:")
    show("  root (binary)", hierarchical_relabel(train, "root"))
    show("  leaf (binary)", hierarchical_relabel(train, "leaf"))


if __name__ == "__main__":
    main()
