"""Dataset ingestion, deterministic batching, and checkpoint persistence.

IDX files follow the standard big-endian MNIST distribution layout.
Checkpoints use a small custom binary format (magic "AATD") holding a
named tensor table plus a JSON metadata block; round-trips are bit-exact.
"""

import json
import struct
from dataclasses import dataclass
from typing import Dict, Iterator, Tuple

import numpy as np

from . import prng
from .errors import DimensionError, FormatError, ValidationError
from .model import BackboneSpec, ThreeWayModel

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801
_CKPT_MAGIC = b"AATD"
_CKPT_VERSION = 1


@dataclass
class Dataset:
    """Immutable sample store: images in [0,1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "unspecified"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValidationError(
                f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)


# ---------------------------------------------------------------------------
# IDX


def _read_exact(f, count: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated IDX file while reading {what}")
    return buf


def _load_idx(path: str, expected_magic: int) -> np.ndarray:
    with open(path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, "magic"))
        if magic != expected_magic:
            raise FormatError(
                f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
        ndim = magic & 0xFF
        dims = struct.unpack(f">{ndim}I", _read_exact(f, 4 * ndim, "dimensions"))
        count = int(np.prod(dims))
        data = np.frombuffer(_read_exact(f, count, "payload"), dtype=np.uint8)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after IDX payload")
    return data.reshape(dims)


def load_mnist_idx(images_path: str, labels_path: str, split: str = "train") -> Dataset:
    """Parse an IDX image/label file pair into a dataset scaled to [0,1]."""
    images = _load_idx(images_path, _IDX_IMAGES_MAGIC)
    labels = _load_idx(labels_path, _IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise FormatError(
            f"image count {len(images)} != label count {len(labels)}")
    scaled = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(scaled, labels.astype(np.int64), split=split)


def save_idx_images(images_u8: np.ndarray, path: str) -> None:
    """Write N x H x W uint8 images in IDX layout."""
    n, h, w = images_u8.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, n, h, w))
        f.write(images_u8.astype(np.uint8).tobytes())


def save_idx_labels(labels: np.ndarray, path: str) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", _IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# batching and subsets


def batches(dataset: Dataset, batch_size: int, seed: int = 0,
            shuffle: bool = False) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) batches; the final short batch is included."""
    n = len(dataset)
    if shuffle:
        order = prng.stream(seed, prng.STREAM_SHUFFLE).permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def subset(dataset: Dataset, k: int, seed: int = 0) -> Dataset:
    """First k samples after a seeded shuffle; reproducible and balanced
    in expectation."""
    order = prng.stream(seed, prng.STREAM_SHUFFLE).permutation(len(dataset))[:k]
    return Dataset(dataset.images[order], dataset.labels[order], split=dataset.split)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: ThreeWayModel, meta: dict, path: str) -> None:
    """Binary layout (all integers little-endian):

    magic "AATD" | u32 version | u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 ndim, ndim x u32 extents,
                raw float32 little-endian scalars
    trailer: u32 length, UTF-8 JSON metadata
    """
    meta = dict(meta)
    meta["backbone"] = _spec_to_dict(model.spec)
    names = sorted(model.params)
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", _CKPT_VERSION, len(names)))
        for name in names:
            data = model.params[name].data.astype("<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def load_checkpoint(path: str) -> Tuple[ThreeWayModel, dict]:
    """Rebuild the model stored at `path`; bit-exact round trip."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != _CKPT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != _CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "extents"))
            size = int(np.prod(shape)) if ndim else 1
            raw = _read_exact(f, 4 * size, f"tensor {name!r}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        meta = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))

    spec = _spec_from_dict(meta["backbone"])
    model = ThreeWayModel.init(spec, seed=0)
    for name, param in model.params.items():
        if name not in tensors:
            raise FormatError(f"{path}: checkpoint missing tensor {name!r}")
        if tensors[name].shape != param.data.shape:
            raise DimensionError(
                f"{path}: tensor {name!r} has shape {tensors[name].shape}, "
                f"model expects {param.data.shape}")
    extra = set(tensors) - set(model.params)
    if extra:
        raise FormatError(f"{path}: unexpected tensors {sorted(extra)}")
    for name, param in model.params.items():
        param.data = tensors[name]
    return model, meta


def _spec_to_dict(spec: BackboneSpec) -> dict:
    return {
        "kind": spec.kind,
        "input_shape": list(spec.input_shape),
        "latent_dim": spec.latent_dim,
        "num_classes": spec.num_classes,
        "conv_channels": list(spec.conv_channels),
        "hidden_width": spec.hidden_width,
    }


def _spec_from_dict(d: dict) -> BackboneSpec:
    return BackboneSpec(
        kind=d["kind"],
        input_shape=tuple(d["input_shape"]),
        latent_dim=d["latent_dim"],
        num_classes=d["num_classes"],
        conv_channels=tuple(d["conv_channels"]),
        hidden_width=d["hidden_width"],
    )
