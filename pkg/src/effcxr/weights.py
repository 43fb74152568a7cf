"""Parameter storage, seeded initialization, binary weight files, transfer.

File format (little-endian throughout):

    magic   8 bytes  b"EFFHW001"
    count   u32      number of entries
    entry   u32 name length, UTF-8 name,
            u32 rank, u32 dims[rank],
            float32 payload, row-major

Entry names are ``<layer>.<role>`` following the naming scheme in
:mod:`effcxr.plan`; roles are weight/bias for conv+dense layers and
scale/shift/mean/var for batch norm.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import ArchSpec
from .plan import BatchNormL, ConvL, DenseL, DepthwiseL, build_plan, param_layers

MAGIC = b"EFFHW001"


@dataclass
class ParamStore:
    """Ordered mapping of parameter arrays plus per-layer trainable flags.

    Keys are ``<layer>.<role>``; the trainable dict is keyed by layer name.
    Arrays are float32 and are shared (not copied) with any network built on
    top of the store, so optimizer updates land here directly.
    """

    arrays: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    trainable: dict[str, bool] = field(default_factory=dict)

    def layers(self) -> list[str]:
        seen: list[str] = []
        for key in self.arrays:
            layer = layer_of(key)
            if not seen or seen[-1] != layer:
                if layer in seen:
                    raise ValueError(f"layer {layer!r} appears non-contiguously in the store")
                seen.append(layer)
        return seen

    def param_count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def set_trainable(self, layer: str, flag: bool) -> None:
        if layer not in self.trainable:
            raise KeyError(f"unknown layer {layer!r}")
        self.trainable[layer] = flag

    def freeze_all(self) -> None:
        for layer in self.trainable:
            self.trainable[layer] = False


def layer_of(array_name: str) -> str:
    return array_name.rsplit(".", 1)[0]


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def expected_arrays(spec: ArchSpec) -> "OrderedDict[str, tuple[int, ...]]":
    """Array name -> shape for every parameter the architecture requires."""
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    for layer in param_layers(build_plan(spec)):
        if isinstance(layer, ConvL):
            shapes[f"{layer.name}.weight"] = (layer.kh, layer.kw, layer.cin, layer.cout)
            if layer.bias:
                shapes[f"{layer.name}.bias"] = (layer.cout,)
        elif isinstance(layer, DepthwiseL):
            shapes[f"{layer.name}.weight"] = (layer.kernel, layer.kernel, layer.channels, 1)
        elif isinstance(layer, DenseL):
            shapes[f"{layer.name}.weight"] = (layer.fin, layer.fout)
            if layer.bias:
                shapes[f"{layer.name}.bias"] = (layer.fout,)
        elif isinstance(layer, BatchNormL):
            c = (layer.channels,)
            shapes[f"{layer.name}.scale"] = c
            shapes[f"{layer.name}.shift"] = c
            shapes[f"{layer.name}.mean"] = c
            shapes[f"{layer.name}.var"] = c
    return shapes


def init_store(spec: ArchSpec, seed: int = 0) -> ParamStore:
    """Glorot-uniform conv/dense weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for layer in param_layers(build_plan(spec)):
        if isinstance(layer, ConvL):
            fan_in = layer.kh * layer.kw * layer.cin
            fan_out = layer.kh * layer.kw * layer.cout
            store.arrays[f"{layer.name}.weight"] = _glorot(
                rng, (layer.kh, layer.kw, layer.cin, layer.cout), fan_in, fan_out
            )
            if layer.bias:
                store.arrays[f"{layer.name}.bias"] = np.zeros(layer.cout, dtype=np.float32)
        elif isinstance(layer, DepthwiseL):
            k = layer.kernel
            store.arrays[f"{layer.name}.weight"] = _glorot(
                rng, (k, k, layer.channels, 1), k * k, k * k
            )
        elif isinstance(layer, DenseL):
            store.arrays[f"{layer.name}.weight"] = _glorot(
                rng, (layer.fin, layer.fout), layer.fin, layer.fout
            )
            if layer.bias:
                store.arrays[f"{layer.name}.bias"] = np.zeros(layer.fout, dtype=np.float32)
        elif isinstance(layer, BatchNormL):
            c = layer.channels
            store.arrays[f"{layer.name}.scale"] = np.ones(c, dtype=np.float32)
            store.arrays[f"{layer.name}.shift"] = np.zeros(c, dtype=np.float32)
            store.arrays[f"{layer.name}.mean"] = np.zeros(c, dtype=np.float32)
            store.arrays[f"{layer.name}.var"] = np.ones(c, dtype=np.float32)
        store.trainable[layer.name] = True
    return store


# -- binary encoding ----------------------------------------------------------


def encode_weights(arrays: "OrderedDict[str, np.ndarray]") -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    seen: set[str] = set()
    for name, arr in arrays.items():
        if name in seen:
            raise ValueError(f"duplicate entry name {name!r}")
        seen.add(name)
        raw = name.encode("utf-8")
        data = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


def decode_weights(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise ValueError(
            f"bad weight file: expected magic {MAGIC!r}, got {blob[:len(MAGIC)]!r}"
        )
    offset = len(MAGIC)
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for i in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
            offset += 4 * n
        except (struct.error, UnicodeDecodeError) as exc:
            raise ValueError(f"truncated or corrupt weight file at entry {i}: {exc}") from exc
        if name in arrays:
            raise ValueError(f"duplicate entry name {name!r} in weight file")
        arrays[name] = payload.reshape(dims).copy()
    if offset != len(blob):
        raise ValueError(f"weight file has {len(blob) - offset} trailing bytes")
    return arrays


def save_weights(store: ParamStore, path) -> None:
    Path(path).write_bytes(encode_weights(store.arrays))


def read_entries(path) -> "OrderedDict[str, np.ndarray]":
    """Raw name->array contents of a weight file, no spec validation."""
    return decode_weights(Path(path).read_bytes())


def load_weights(path, spec: ArchSpec) -> ParamStore:
    """Load and validate a weight file against a spec.

    Every array the architecture requires must be present with matching shape; unknown
    extras are rejected.  All layers start trainable.
    """
    entries = read_entries(path)
    expected = expected_arrays(spec)
    missing = [name for name in expected if name not in entries]
    if missing:
        raise ValueError(f"weight file missing arrays: {', '.join(missing[:5])}")
    extra = [name for name in entries if name not in expected]
    if extra:
        raise ValueError(
            f"weight file has arrays the architecture does not define: {', '.join(extra[:5])}"
        )
    store = ParamStore()
    for name, shape in expected.items():
        arr = entries[name]
        if arr.shape != shape:
            raise ValueError(
                f"array {name!r} has shape {arr.shape}; spec requires {shape}"
            )
        store.arrays[name] = arr.astype(np.float32)
        store.trainable[layer_of(name)] = True
    return store


# -- transfer workflow --------------------------------------------------------


@dataclass
class TransferPlan:
    """Recipe for initializing one model from another's weight file.

    ``name_map`` maps target layer -> source layer; ``new_layers`` lists target
    layers that keep their fresh initialization.  Together they must cover
    every target layer exactly once.  ``trainable_mask`` (layer -> bool)
    overrides the default all-trainable state; layers marked False are frozen.
    """

    source: str | Path
    name_map: dict[str, str] = field(default_factory=dict)
    new_layers: tuple[str, ...] = ()
    trainable_mask: dict[str, bool] = field(default_factory=dict)


def identity_transfer_plan(
    source, spec: ArchSpec, new_layers: tuple[str, ...] = (), freeze_mapped: bool = False
) -> TransferPlan:
    """Map every layer to itself except the listed new ones."""
    layers = {layer_of(n) for n in expected_arrays(spec)}
    mapped = sorted(layers - set(new_layers))
    mask = {layer: False for layer in mapped} if freeze_mapped else {}
    return TransferPlan(
        source=source,
        name_map={layer: layer for layer in mapped},
        new_layers=tuple(new_layers),
        trainable_mask=mask,
    )


def apply_transfer(plan: TransferPlan, store: ParamStore) -> ParamStore:
    """Copy mapped layers from the source file into a freshly initialized store.

    Validates full coverage (mapped + new == all target layers, no overlap) and
    shape agreement per array, then applies the trainable mask.
    """
    target_layers = set(store.trainable)
    mapped = set(plan.name_map)
    new = set(plan.new_layers)
    overlap = mapped & new
    if overlap:
        raise ValueError(f"layers listed both as mapped and new: {sorted(overlap)}")
    uncovered = target_layers - mapped - new
    if uncovered:
        raise ValueError(f"transfer plan does not cover layers: {sorted(uncovered)[:5]}")
    unknown = (mapped | new) - target_layers
    if unknown:
        raise ValueError(f"transfer plan names layers the target lacks: {sorted(unknown)[:5]}")

    source_arrays = read_entries(plan.source)
    source_layers: dict[str, list[str]] = {}
    for name in source_arrays:
        source_layers.setdefault(layer_of(name), []).append(name)

    for target_layer, source_layer in plan.name_map.items():
        if source_layer not in source_layers:
            raise ValueError(f"source file has no layer {source_layer!r}")
        target_arrays = [n for n in store.arrays if layer_of(n) == target_layer]
        for tname in target_arrays:
            role = tname.rsplit(".", 1)[1]
            sname = f"{source_layer}.{role}"
            if sname not in source_arrays:
                raise ValueError(
                    f"source layer {source_layer!r} lacks array {role!r} "
                    f"needed by target layer {target_layer!r}"
                )
            src = source_arrays[sname]
            if src.shape != store.arrays[tname].shape:
                raise ValueError(
                    f"shape conflict for {tname!r}: target {store.arrays[tname].shape} "
                    f"vs source {src.shape}"
                )
            store.arrays[tname][...] = src

    for layer, flag in plan.trainable_mask.items():
        if layer not in target_layers:
            raise ValueError(f"trainable mask names unknown layer {layer!r}")
        store.trainable[layer] = bool(flag)
    return store
