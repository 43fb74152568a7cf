"""Flat and hierarchical classifiers plus class activation maps.

The flat model is one softmax network over (Normal, Pneumonia, COVID19).  The
hierarchical pair routes locally: a binary root separates Normal from
pneumonia-like images and, only when the root says pneumonia-like, a binary
leaf separates Pneumonia from COVID19.  Each prediction carries a stage trace
proving which networks actually ran.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .arch import ArchSpec
from .data import Image, resize
from .network import Network
from .weights import ParamStore

CLASSES = ("Normal", "Pneumonia", "COVID19")
ROOT_CLASSES = ("Normal", "Pneumonia")  # pneumonia-like bucket keeps the name
LEAF_CLASSES = ("Pneumonia", "COVID19")

PREDICTION_HEADER = (
    "path",
    "mode",
    "label",
    "p_normal",
    "p_pneumonia",
    "p_covid",
    "stage_trace",
)


@dataclass
class FlatModel:
    """One softmax classifier: architecture, parameters, ordered label set."""

    spec: ArchSpec
    store: ParamStore
    labels: tuple[str, ...] = CLASSES

    def __post_init__(self):
        if len(self.labels) != self.spec.num_classes:
            raise ValueError(
                f"{len(self.labels)} labels for a {self.spec.num_classes}-class architecture"
            )

    @cached_property
    def network(self) -> Network:
        return Network(self.spec, self.store)

    @property
    def resolution(self) -> int:
        return self.spec.input_resolution


@dataclass
class HierModel:
    """Local-per-node hierarchy: binary root plus binary leaf."""

    root: FlatModel
    leaf: FlatModel

    def __post_init__(self):
        if self.root.labels != ROOT_CLASSES:
            raise ValueError(f"root labels must be {ROOT_CLASSES}; got {self.root.labels}")
        if self.leaf.labels != LEAF_CLASSES:
            raise ValueError(f"leaf labels must be {LEAF_CLASSES}; got {self.leaf.labels}")
        if self.root.resolution != self.leaf.resolution:
            raise ValueError(
                f"root and leaf input resolutions differ: "
                f"{self.root.resolution} vs {self.leaf.resolution}"
            )

    @property
    def resolution(self) -> int:
        return self.root.resolution


@dataclass
class Prediction:
    """One classified image.

    ``probs`` is the composed distribution over CLASSES (or over the model's
    own labels for standalone binary models); ``stage_probs`` holds each
    stage's raw softmax output; ``trace`` lists the stages that actually ran.
    """

    label: str
    probs: np.ndarray
    stage_probs: dict[str, np.ndarray] = field(default_factory=dict)
    trace: tuple[str, ...] = ("flat",)


def _as_batch(images, resolution: int) -> np.ndarray:
    if isinstance(images, Image):
        images = resize(images, resolution).pixels
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected (batch, h, w, 3) images; got shape {arr.shape}")
    return arr


def predict_flat(model: FlatModel, images) -> list[Prediction]:
    """Classify a batch with a single softmax model (ties break to index 0)."""
    batch = _as_batch(images, model.resolution)
    probs = model.network.predict_probs(batch)
    out = []
    for row in probs:
        idx = int(np.argmax(row))
        out.append(
            Prediction(
                label=model.labels[idx],
                probs=row.copy(),
                stage_probs={"flat": row.copy()},
                trace=("flat",),
            )
        )
    return out


def predict_hier(model: HierModel, images) -> list[Prediction]:
    """Route each image through the root and, only if needed, the leaf.

    A root decision of Normal ends inference (trace length 1, p_covid 0 with
    the pneumonia-like mass reported unsplit).  Otherwise the leaf splits the
    pneumonia-like probability into Pneumonia and COVID19.
    """
    batch = _as_batch(images, model.resolution)
    root_probs = model.root.network.predict_probs(batch)
    routed = np.argmax(root_probs, axis=1) == 1  # pneumonia-like
    preds: list[Prediction | None] = [None] * len(batch)

    if routed.any():
        leaf_probs_all = model.leaf.network.predict_probs(batch[routed])
        leaf_iter = iter(leaf_probs_all)
    for i, root_row in enumerate(root_probs):
        if routed[i]:
            leaf_row = next(leaf_iter)
            composed = np.array(
                [
                    root_row[0],
                    root_row[1] * leaf_row[0],
                    root_row[1] * leaf_row[1],
                ],
                dtype=np.float64,
            )
            label = LEAF_CLASSES[int(np.argmax(leaf_row))]
            preds[i] = Prediction(
                label=label,
                probs=composed,
                stage_probs={"root": root_row.copy(), "leaf": leaf_row.copy()},
                trace=("root", "leaf"),
            )
        else:
            composed = np.array([root_row[0], root_row[1], 0.0], dtype=np.float64)
            preds[i] = Prediction(
                label="Normal",
                probs=composed,
                stage_probs={"root": root_row.copy()},
                trace=("root",),
            )
    return preds  # type: ignore[return-value]


# -- class activation maps -------------------------------------------------------


def cam_from_features(
    features: np.ndarray, projection: np.ndarray, class_index: int, resolution: int
) -> np.ndarray:
    """Weight feature maps by the head's effective class weights and upsample.

    ``features`` is (h, w, c) from the layer feeding global average pooling;
    ``projection`` is the (c, num_classes) linearized head.  The result is
    bilinearly upsampled to (resolution, resolution) and min-max normalized to
    [0, 1]; a constant map normalizes to all zeros.
    """
    if features.ndim != 3:
        raise ValueError(f"features must be (h, w, c); got shape {features.shape}")
    if not 0 <= class_index < projection.shape[1]:
        raise ValueError(f"class_index {class_index} out of range")
    raw = features @ projection[:, class_index]  # (h, w)
    img = Image(pixels=np.asarray(raw, dtype=np.float32)[:, :, None])
    up = resize_no_clip(img, resolution)
    lo, hi = float(up.min()), float(up.max())
    if hi - lo < 1e-12:
        return np.zeros((resolution, resolution), dtype=np.float32)
    return ((up - lo) / (hi - lo)).astype(np.float32)


def resize_no_clip(img: Image, resolution: int) -> np.ndarray:
    """Bilinear upsample of one-channel maps without the [0, 1] clamp."""
    from .data import _bilinear_sample

    px = img.pixels
    h, w, _ = px.shape
    if (h, w) == (resolution, resolution):
        return px[:, :, 0]
    ys = np.clip((np.arange(resolution) + 0.5) * (h / resolution) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(resolution) + 0.5) * (w / resolution) - 0.5, 0, w - 1)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(px, grid_y, grid_x)[:, :, 0]


def activation_map(model: FlatModel, image, target_class: str | int | None = None) -> np.ndarray:
    """Class activation map for one image, (resolution, resolution) in [0, 1].

    ``target_class`` may be a label, an index, or None (the predicted class).
    """
    batch = _as_batch(image, model.resolution)
    if batch.shape[0] != 1:
        raise ValueError(f"activation_map takes a single image; got batch of {batch.shape[0]}")
    probs, features = model.network.forward(batch, mode="infer", want_features=True)
    if target_class is None:
        class_index = int(np.argmax(probs.data[0]))
    elif isinstance(target_class, str):
        if target_class not in model.labels:
            raise ValueError(f"unknown class {target_class!r}; labels are {model.labels}")
        class_index = model.labels.index(target_class)
    else:
        class_index = int(target_class)
        if not 0 <= class_index < len(model.labels):
            raise ValueError(f"class index {class_index} out of range")
    projection = model.network.head_projection()
    return cam_from_features(features.data[0], projection, class_index, model.resolution)


# -- prediction CSV ----------------------------------------------------------------


def predictions_to_rows(paths, predictions, mode: str) -> list[list[str]]:
    rows = []
    for path, pred in zip(paths, predictions, strict=True):
        p = pred.probs
        if len(p) != len(CLASSES):
            raise ValueError(
                f"prediction rows need composed {len(CLASSES)}-class probabilities; got {len(p)}"
            )
        rows.append(
            [
                path,
                mode,
                pred.label,
                f"{p[0]:.6f}",
                f"{p[1]:.6f}",
                f"{p[2]:.6f}",
                ">".join(pred.trace),
            ]
        )
    return rows


def write_predictions(path, paths, predictions, mode: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_HEADER)
        writer.writerows(predictions_to_rows(paths, predictions, mode))
