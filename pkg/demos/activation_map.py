"""Class activation maps: where the network looked for each class.

Trains the small network briefly on synthetic images, then projects the final
feature maps through the head weights to get one spatial relevance map per
class, upsampled to input size.  A 96x96 input leaves a 3x3 feature grid, so
the maps are deliberately coarse.  Heatmaps are written as grayscale PNGs next
to this script's working directory.
"""

from pathlib import Path

import numpy as np

from effcxr.arch import toy_arch
from effcxr.classify import CLASSES, FlatModel, activation_map
from effcxr.data import Image, ImageLoader, ManifestEntry, save_image
from effcxr.synthetic import synth_pixels
from effcxr.train import TrainConfig, train
from effcxr.weights import init_store


def main():
    rng = np.random.default_rng(9)
    loader = ImageLoader()
    entries = []
    for i in range(60):
        cls = i % len(CLASSES)
        path = f"mem/{i:03d}.png"
        loader._cache[path] = Image(pixels=synth_pixels(cls, 96, rng))
        entries.append(
            ManifestEntry(
                path=path,
                label=CLASSES[cls],
                source="COVIDCollection" if cls == 2 else "RSNA",
                partition="train",
            )
        )

    spec = toy_arch(resolution=96)
    model = FlatModel(spec=spec, store=init_store(spec, seed=7))
    train(model, entries, TrainConfig(epochs=3, seed=3), loader=loader)

    out_dir = Path("demo_output")
    out_dir.mkdir(exist_ok=True)
    sample = loader._cache[entries[1].path]  # a lower-band (Pneumonia-pattern) image
    print(f"input: {entries[1].path} (true label {entries[1].label})\n")
    for cls in CLASSES:
        heat = activation_map(model, sample, target_class=cls)
        out = out_dir / f"heatmap_{cls.lower()}.png"
        save_image(heat, out)
        hy, hx = np.unravel_index(int(heat.argmax()), heat.shape)
        print(f"{cls:<10} peak relevance at ({hy:>2}, {hx:>2}), "
              f"mean {heat.mean():.3f} -> {out}")


if __name__ == "__main__":
    main()
