"""Chest X-ray dataset assembly, manifests, image transforms, augmentation.

Pillow is used only to decode and encode PNG/JPEG files (8- and 16-bit);
every numeric transform (normalization, bilinear resize, rotation, zoom,
flipping) is implemented here so the pipeline is bit-reproducible.

Manifest CSV columns: ``path,label,source,partition,aug_recipe``.  Augmented
rows reference the original file's path and carry the realized transform
draws in ``aug_recipe`` so they replay exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

LABELS = ("Normal", "Pneumonia", "COVID19")
SOURCES = ("RSNA", "COVIDCollection")
PARTITIONS = ("train", "test")

MANIFEST_HEADER = ("path", "label", "source", "partition", "aug_recipe")

# Per-class (train, test) targets for the assembled corpus at scale 1.0.
COVIDX_TARGETS = {
    "Normal": (7966, 100),
    "Pneumonia": (5421, 100),
    "COVID19": (152, 31),
}

PRESET_RAW = "raw"
PRESET_RAW_PLUS_AUG = "raw-plus-aug"
PRESET_BALANCED = "balanced"
PRESETS = (PRESET_RAW, PRESET_RAW_PLUS_AUG, PRESET_BALANCED)

# Input sizes of the named architecture variants; resize accepts any size >= 8
# so reduced-scale networks can reuse the same pipeline.
STANDARD_RESOLUTIONS = (224, 240, 260, 300, 380, 456)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    source: str
    partition: str
    aug_recipe: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}; expected one of {LABELS}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}; expected one of {SOURCES}")
        if self.partition not in PARTITIONS:
            raise ValueError(
                f"unknown partition {self.partition!r}; expected one of {PARTITIONS}"
            )


@dataclass(frozen=True)
class DatasetConfig:
    """One of the three training-set presets.

    ``raw``: the assembled training split untouched.
    ``raw-plus-aug``: majority classes capped, COVID19 topped up with
    augmented copies.
    ``balanced``: every class brought to ``per_class`` rows (COVID19 via
    augmentation, the others by undersampling).
    """

    preset: str = PRESET_RAW
    covid_aug_count: int = 1000
    majority_cap: int = 4000
    per_class: int = 1000

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        for name in ("covid_aug_count", "majority_cap", "per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1; got {getattr(self, name)}")


@dataclass(frozen=True)
class AugSpec:
    """Augmentation draw ranges; each transform fires independently.

    Rotation is uniform in [-max_rotation_deg, +max_rotation_deg]; zoom scales
    by a factor in [1, 1 + zoom_fraction] then center-crops back; hflip
    mirrors left-right.
    """

    max_rotation_deg: float = 15.0
    zoom_fraction: float = 0.20
    hflip: bool = True
    probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.max_rotation_deg <= 15.0:
            raise ValueError(
                f"max_rotation_deg must lie in [0, 15]; got {self.max_rotation_deg}"
            )
        if not 0.0 <= self.zoom_fraction <= 0.20:
            raise ValueError(f"zoom_fraction must lie in [0, 0.2]; got {self.zoom_fraction}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must lie in [0, 1]; got {self.probability}")


# -- manifest I/O --------------------------------------------------------------


def write_manifest(entries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            writer.writerow([e.path, e.label, e.source, e.partition, e.aug_recipe])


def read_manifest(path) -> list[ManifestEntry]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_HEADER:
            raise ValueError(
                f"bad manifest header {header!r}; expected {','.join(MANIFEST_HEADER)}"
            )
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ValueError(f"manifest line {lineno}: expected 5 fields, got {len(row)}")
            entries.append(ManifestEntry(*row))
    return entries


def class_counts(entries) -> dict[str, int]:
    counts = {label: 0 for label in LABELS}
    for e in entries:
        counts[e.label] += 1
    return counts


# -- dataset assembly -----------------------------------------------------------


def build_covidx(
    rsna_entries,
    covid_entries,
    seed: int = 0,
    scale: float = 1.0,
) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Assemble train/test splits with the published per-class counts.

    ``rsna_entries`` supplies Normal and Pneumonia rows; ``covid_entries`` is
    the only admissible origin of COVID19 rows (it may also contribute other
    labels).  ``scale`` shrinks every target proportionally (floor 1) so the
    same assembly runs at toy size.  Raises on any per-class shortfall, naming
    the class and the counts.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive; got {scale}")
    for e in rsna_entries:
        if e.label == "COVID19":
            raise ValueError(
                f"COVID19 row {e.path!r} in the RSNA manifest; COVID19 rows must "
                "come from the COVID collection"
            )

    pools: dict[str, list[ManifestEntry]] = {label: [] for label in LABELS}
    for e in list(rsna_entries) + list(covid_entries):
        pools[e.label].append(e)

    rng = np.random.default_rng(seed)
    train: list[ManifestEntry] = []
    test: list[ManifestEntry] = []
    for label in LABELS:
        train_target, test_target = COVIDX_TARGETS[label]
        n_train = max(1, round(train_target * scale))
        n_test = max(1, round(test_target * scale))
        pool = pools[label]
        if len(pool) < n_train + n_test:
            raise ValueError(
                f"class {label}: need {n_train + n_test} rows "
                f"({n_train} train + {n_test} test), only {len(pool)} available"
            )
        order = rng.permutation(len(pool))
        chosen_test = sorted(order[:n_test].tolist())
        chosen_train = sorted(order[n_test : n_test + n_train].tolist())
        test.extend(replace(pool[i], partition="test") for i in chosen_test)
        train.extend(replace(pool[i], partition="train") for i in chosen_train)
    return train, test


def _undersample(entries, cap: int, rng: np.random.Generator):
    if len(entries) <= cap:
        return list(entries)
    keep = sorted(rng.permutation(len(entries))[:cap].tolist())
    return [entries[i] for i in keep]


def _draw_nonidentity_recipe(aug: AugSpec, rng: np.random.Generator) -> "AugRecipe":
    # an augmented row must differ from its original, so identity draws redraw
    for _ in range(10000):
        recipe = draw_recipe(aug, rng)
        if not recipe.is_identity():
            return recipe
    raise ValueError("augmentation spec cannot produce a non-identity transform")


def _augmented_covid(originals, count: int, aug: AugSpec, rng: np.random.Generator):
    if not originals:
        raise ValueError("cannot augment COVID19: no original rows available")
    rows = []
    for i in range(count):
        src = originals[i % len(originals)]
        recipe = _draw_nonidentity_recipe(aug, rng)
        rows.append(replace(src, aug_recipe=recipe.to_string()))
    return rows


def apply_config(
    train_entries,
    config: DatasetConfig,
    aug: AugSpec | None = None,
    seed: int = 0,
) -> list[ManifestEntry]:
    """Materialize one training preset from the assembled train split.

    Only train-partition rows are accepted.  Augmented rows are appended after
    the originals of their class and carry replayable recipes.
    """
    entries = list(train_entries)
    for e in entries:
        if e.partition != "train":
            raise ValueError(
                f"apply_config only operates on the train split; got a {e.partition!r} row"
            )
    if aug is None:
        aug = AugSpec()
    rng = np.random.default_rng(seed)
    by_label = {label: [e for e in entries if e.label == label] for label in LABELS}
    normal, pneu, covid = by_label["Normal"], by_label["Pneumonia"], by_label["COVID19"]

    if config.preset == PRESET_RAW:
        return entries

    if config.preset == PRESET_RAW_PLUS_AUG:
        out = _undersample(normal, config.majority_cap, rng)
        out += _undersample(pneu, config.majority_cap, rng)
        out += covid
        out += _augmented_covid(covid, config.covid_aug_count, aug, rng)
        return out

    # balanced
    out = _undersample(normal, config.per_class, rng)
    out += _undersample(pneu, config.per_class, rng)
    if len(covid) >= config.per_class:
        out += _undersample(covid, config.per_class, rng)
    else:
        out += covid
        out += _augmented_covid(covid, config.per_class - len(covid), aug, rng)
    return out


def hierarchical_relabel(entries, level: str) -> list[ManifestEntry]:
    """Project labels for one hierarchy node.

    ``root``: COVID19 rows become Pneumonia (pneumonia-like vs Normal), all
    rows kept.  ``leaf``: Normal rows dropped, labels kept (Pneumonia vs
    COVID19).
    """
    if level == "root":
        return [
            replace(e, label="Pneumonia") if e.label == "COVID19" else e for e in entries
        ]
    if level == "leaf":
        return [e for e in entries if e.label in ("Pneumonia", "COVID19")]
    raise ValueError(f"level must be 'root' or 'leaf'; got {level!r}")


# -- images ---------------------------------------------------------------------


@dataclass
class Image:
    """Decoded image: float32 pixels in [0, 1], shape (h, w, c), c in {1, 3}."""

    pixels: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be (h, w, 1|3); got shape {px.shape}")
        self.pixels = px


def load_image(path) -> Image:
    """Decode a PNG/JPEG file (8-bit gray/RGB or 16-bit gray) to [0, 1] floats."""
    with PILImage.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            raw = np.asarray(im, dtype=np.uint16)
            return normalize(raw)
        if mode == "L":
            return normalize(np.asarray(im, dtype=np.uint8))
        if mode != "RGB":
            im = im.convert("RGB")
        return normalize(np.asarray(im, dtype=np.uint8))


def save_image(pixels: np.ndarray, path) -> None:
    """Encode [0, 1] floats as an 8-bit PNG (grayscale if single-channel)."""
    arr = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    data = np.round(arr * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="L" if data.ndim == 2 else "RGB").save(path)


def normalize(raw) -> Image:
    """Scale integer pixels to [0, 1] float32 by the bit-depth maximum."""
    arr = np.asarray(raw)
    if arr.dtype == np.uint8:
        depth, denom = 8, 255.0
    elif arr.dtype == np.uint16:
        depth, denom = 16, 65535.0
    else:
        raise ValueError(
            f"unsupported bit depth: dtype {arr.dtype} (expected uint8 or uint16)"
        )
    if arr.max() == 0:
        raise ValueError("cannot normalize an all-zero image")
    return Image(pixels=arr.astype(np.float32) / denom, bit_depth=depth)


def _bilinear_sample(px: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (h, w, c) pixels at fractional grids ys/xs (2-D), zero outside."""
    h, w, _ = px.shape
    inside = (ys > -1.0) & (ys < h) & (xs > -1.0) & (xs < w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]

    def at(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        out = px[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return out * valid[..., None]

    top = at(y0, x0) * (1 - wx) + at(y0, x0 + 1) * wx
    bot = at(y0 + 1, x0) * (1 - wx) + at(y0 + 1, x0 + 1) * wx
    out = top * (1 - wy) + bot * wy
    return (out * inside[..., None]).astype(px.dtype)


def resize(image: Image, resolution: int) -> Image:
    """Bilinear resize to (resolution, resolution, 3), half-pixel centers.

    Grayscale input is replicated to three channels.  Named variants use the
    sizes in STANDARD_RESOLUTIONS; any size >= 8 is accepted.
    """
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8; got {resolution}")
    px = image.pixels
    h, w, c = px.shape
    if (h, w) != (resolution, resolution):
        ys = (np.arange(resolution) + 0.5) * (h / resolution) - 0.5
        xs = (np.arange(resolution) + 0.5) * (w / resolution) - 0.5
        grid_y, grid_x = np.meshgrid(
            np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1), indexing="ij"
        )
        px = _bilinear_sample(px, grid_y, grid_x)
    if px.shape[2] == 1:
        px = np.repeat(px, 3, axis=2)
    return Image(pixels=np.clip(px, 0.0, 1.0), bit_depth=image.bit_depth)


# -- augmentation -----------------------------------------------------------------


@dataclass(frozen=True)
class AugRecipe:
    """Realized augmentation draws; replays bit-exactly via apply_recipe."""

    rotation_deg: float | None = None
    zoom: float | None = None
    hflip: bool = False

    def is_identity(self) -> bool:
        return self.rotation_deg is None and self.zoom is None and not self.hflip

    def to_string(self) -> str:
        parts = []
        if self.rotation_deg is not None:
            parts.append(f"rot={self.rotation_deg!r}")
        if self.zoom is not None:
            parts.append(f"zoom={self.zoom!r}")
        if self.hflip:
            parts.append("flip=1")
        return ";".join(parts)

    @classmethod
    def from_string(cls, text: str) -> "AugRecipe":
        if not text:
            return cls()
        rot = zoom = None
        flip = False
        for part in text.split(";"):
            key, _, value = part.partition("=")
            if key == "rot":
                rot = float(value)
            elif key == "zoom":
                zoom = float(value)
            elif key == "flip":
                flip = bool(int(value))
            else:
                raise ValueError(f"unknown recipe field {key!r} in {text!r}")
        return cls(rotation_deg=rot, zoom=zoom, hflip=flip)


def draw_recipe(aug: AugSpec, rng: np.random.Generator) -> AugRecipe:
    """Independently gate each transform by ``aug.probability`` and draw it."""
    rot = zoom = None
    flip = False
    if rng.random() < aug.probability and aug.max_rotation_deg > 0:
        rot = float(rng.uniform(-aug.max_rotation_deg, aug.max_rotation_deg))
    if rng.random() < aug.probability and aug.zoom_fraction > 0:
        zoom = float(rng.uniform(1.0, 1.0 + aug.zoom_fraction))
    if aug.hflip and rng.random() < aug.probability:
        flip = True
    return AugRecipe(rotation_deg=rot, zoom=zoom, hflip=flip)


def _rotate(px: np.ndarray, degrees: float) -> np.ndarray:
    h, w, _ = px.shape
    theta = math.radians(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = rows - cy, cols - cx
    src_y = cy + dy * math.cos(theta) - dx * math.sin(theta)
    src_x = cx + dy * math.sin(theta) + dx * math.cos(theta)
    return _bilinear_sample(px, src_y, src_x)


def _zoom(px: np.ndarray, factor: float) -> np.ndarray:
    h, w, _ = px.shape
    crop_h, crop_w = h / factor, w / factor
    start_y, start_x = (h - crop_h) / 2.0, (w - crop_w) / 2.0
    ys = start_y + (np.arange(h) + 0.5) * (crop_h / h) - 0.5
    xs = start_x + (np.arange(w) + 0.5) * (crop_w / w) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(px, grid_y, grid_x)


def apply_recipe(image: Image, recipe: AugRecipe) -> Image:
    """Rotate, then zoom, then flip; dims preserved, values stay in [0, 1]."""
    px = image.pixels
    if recipe.rotation_deg is not None:
        px = _rotate(px, recipe.rotation_deg)
    if recipe.zoom is not None:
        if recipe.zoom < 1.0:
            raise ValueError(f"zoom factor must be >= 1; got {recipe.zoom}")
        px = _zoom(px, recipe.zoom)
    if recipe.hflip:
        px = px[:, ::-1, :]
    return Image(pixels=np.clip(px, 0.0, 1.0), bit_depth=image.bit_depth)


def augment(image: Image, aug: AugSpec, seed: int) -> Image:
    """Draw a recipe from ``seed`` and apply it (shape-preserving)."""
    recipe = draw_recipe(aug, np.random.default_rng(seed))
    return apply_recipe(image, recipe)


# -- loading pipeline ---------------------------------------------------------------


class ImageLoader:
    """Loads manifest rows into network-ready arrays with an in-memory cache.

    Decoded originals are cached by path; augmentation recipes replay on top.
    ``root`` resolves relative manifest paths.
    """

    def __init__(self, root: str | Path | None = None, cache: bool = True):
        self.root = Path(root) if root is not None else None
        self._cache: dict[str, Image] = {} if cache else None

    def _resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def _load(self, path: str) -> Image:
        if self._cache is not None and path in self._cache:
            return self._cache[path]
        img = load_image(self._resolve(path))
        if self._cache is not None:
            self._cache[path] = img
        return img

    def prepare(self, entry: ManifestEntry, resolution: int) -> np.ndarray:
        """(resolution, resolution, 3) float32 pixels for one manifest row."""
        img = self._load(entry.path)
        if entry.aug_recipe:
            img = apply_recipe(img, AugRecipe.from_string(entry.aug_recipe))
        return resize(img, resolution).pixels

    def batch(self, entries, resolution: int) -> np.ndarray:
        return np.stack([self.prepare(e, resolution) for e in entries])
