"""Two-stage classification: a binary root gates a binary leaf.

The root separates Normal from pneumonia-like images; only images the root
flags move on to the leaf, which separates Pneumonia from COVID19.  The demo
trains both nodes on synthetic images, then shows the per-stage confusion
matrices and the identity that makes them auditable: merging the final
three-class matrix back to two classes reproduces the stage-1 matrix exactly.
"""

import numpy as np

from effcxr.arch import toy_arch
from effcxr.classify import CLASSES, LEAF_CLASSES, ROOT_CLASSES, FlatModel, HierModel
from effcxr.data import Image, ImageLoader, ManifestEntry, hierarchical_relabel
from effcxr.evaluate import evaluate
from effcxr.synthetic import synth_pixels
from effcxr.train import TrainConfig, train
from effcxr.weights import init_store


def synthetic_entries(count, size, seed):
    rng = np.random.default_rng(seed)
    loader = ImageLoader()
    entries = []
    for i in range(count):
        cls = i % len(CLASSES)
        path = f"mem/{seed}/{i:03d}.png"
        loader._cache[path] = Image(pixels=synth_pixels(cls, size, rng))
        entries.append(
            ManifestEntry(
                path=path,
                label=CLASSES[cls],
                source="COVIDCollection" if cls == 2 else "RSNA",
                partition="train",
            )
        )
    return entries, loader


def main():
    train_entries, loader = synthetic_entries(count=120, size=32, seed=6)
    config = TrainConfig(epochs=10, seed=5)

    def node(labels, level, seed):
        spec = toy_arch(num_classes=2, resolution=32)
        model = FlatModel(spec=spec, store=init_store(spec, seed=seed), labels=labels)
        rows = train(model, hierarchical_relabel(train_entries, level), config, loader=loader)
        print(f"{level} node trained, final loss {rows[-1].loss:.4f}")
        return model

    hier = HierModel(root=node(ROOT_CLASSES, "root", 11), leaf=node(LEAF_CLASSES, "leaf", 12))

    test_entries, test_loader = synthetic_entries(count=45, size=32, seed=60)
    result = evaluate(hier, test_entries, test_loader)

    print("\nfinal three-class confusion (rows = true):")
    print(result.confusion.render())
    print("\nstage 1, root decisions (COVID19 merged into Pneumonia):")
    print(result.stage1.render())
    print("\nstage 2, leaf decisions over the routed Pneumonia/COVID19 rows:")
    print(result.stage2.render())

    merged = result.confusion.merged({"COVID19": "Pneumonia"}, ROOT_CLASSES)
    print("\nmerging the final matrix reproduces stage 1 exactly:",
          bool(np.array_equal(merged.counts, result.stage1.counts)))
    print(result.metrics.summary())


if __name__ == "__main__":
    main()
