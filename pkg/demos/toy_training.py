"""Train the width-reduced network on synthetic images, end to end on numpy.

Ninety 32x32 images with three distinguishable intensity patterns stand in
for the real corpus.  The run prints the per-epoch trace (loss and learning
rate) and the final training-set metrics.
"""

import time

import numpy as np

from effcxr.arch import toy_arch
from effcxr.classify import CLASSES, FlatModel
from effcxr.data import Image, ImageLoader, ManifestEntry
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
        path = f"mem/{i:03d}.png"
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
    spec = toy_arch(resolution=32)
    model = FlatModel(spec=spec, store=init_store(spec, seed=7))
    print(f"network: {spec.variant} at {spec.input_resolution}x{spec.input_resolution}, "
          f"{model.store.param_count():,} parameters\n")

    entries, loader = synthetic_entries(count=90, size=32, seed=42)
    config = TrainConfig(epochs=6, batch_size=8, seed=3)

    start = time.perf_counter()
    rows = train(model, entries, config, loader=loader)
    print(f"{'epoch':>5} {'loss':>10} {'lr':>10}")
    for row in rows:
        print(f"{row.epoch:>5} {row.loss:>10.4f} {row.lr:>10.2e}")

    result = evaluate(model, entries, loader)
    print(f"\ntrained in {time.perf_counter() - start:.1f}s")
    print(result.metrics.summary())
    print("\nconfusion (rows = true):")
    print(result.confusion.render())


if __name__ == "__main__":
    main()
