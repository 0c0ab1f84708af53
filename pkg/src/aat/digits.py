"""Deterministic rendered-digit dataset in the MNIST 28x28 format.

The canonical MNIST files cannot be fetched in an offline environment,
so desk-scale experiments run on this stand-in: 5x7 glyph bitmaps of the
ten digits, upscaled and randomly rotated, shifted, scaled, sheared,
blurred, and noised into 28x28 grayscale images. Generation is pure and
seeded; the same seed always yields byte-identical images. `write_idx_pair`
emits genuine IDX files so the loader path is exercised end to end.

On top of the glyph shape every image carries a class-keyed watermark: a
fixed pseudo-random half-density pixel pattern of tiny amplitude. The
watermark is noiseless and perfectly predictive, so plain training
gravitates to it, but its class-to-class l2 separation is only a few
hundredths — well inside a small attack budget. The glyph shape is the
robust feature; the watermark is the non-robust one. This gives the
dataset the same usable/fragile feature split that makes small-budget
attacks devastating against standard training while leaving plenty of
signal for robust training to recover.
"""

import numpy as np
from scipy import ndimage

from . import prng
from .data import Dataset, save_idx_images, save_idx_labels

_GLYPHS = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
]


# Class-keyed watermark patterns. The key seeds a dedicated stream so the
# patterns are identical across splits, sizes, and dataset seeds.
_WATERMARK_KEY = 0x57AA
_WATERMARK_AMPLITUDE = 0.006
_NOISE_STD = 0.004
_CONTRAST = (0.10, 0.16)  # peak glyph intensity range
_watermark_cache = {}


def watermark_patterns(amplitude: float = _WATERMARK_AMPLITUDE) -> np.ndarray:
    """(10, 28, 28) patterns; each pixel is 0 or `amplitude`.

    Patterns are constant over 4x4 blocks and confined to the outermost
    block ring — a 4-pixel frame the glyph never enters. Keeping the
    frame free of glyph clutter is what makes the watermark linearly
    readable despite its tiny amplitude, and the block structure keeps
    it visible through the conv/pool pipeline.
    """
    if amplitude not in _watermark_cache:
        rng = prng.stream(_WATERMARK_KEY, prng.STREAM_DATA)
        ring = np.zeros((7, 7), dtype=bool)
        ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
        # greedy constant-weight code: every class marks exactly half the
        # 24 ring blocks (equal energy, no scoring bias) and pairwise
        # Hamming distance stays >= 10 so no class pair is much easier
        # to flip than another
        codes = []
        while len(codes) < 10:
            cand = np.zeros(24, dtype=bool)
            cand[rng.permutation(24)[:12]] = True
            if all((cand != c).sum() >= 10 for c in codes):
                codes.append(cand)
        blocks = np.zeros((10, 7, 7))
        for k, code in enumerate(codes):
            blocks[k][ring] = code
        blocks = np.repeat(np.repeat(blocks, 4, axis=1), 4, axis=2)
        _watermark_cache[amplitude] = blocks * amplitude
    return _watermark_cache[amplitude]


def _glyph_array(digit: int) -> np.ndarray:
    rows = _GLYPHS[digit]
    return np.array([[c == "1" for c in row] for row in rows], dtype=np.float64)


def _render(digit: int, rng: np.random.Generator, watermark: bool) -> np.ndarray:
    # the glyph lives in the 20x20 interior; the 4-pixel frame is
    # reserved for the watermark
    canvas = np.zeros((28, 28), dtype=np.float64)
    scale = rng.uniform(1.6, 2.6)
    glyph = ndimage.zoom(_glyph_array(digit), scale, order=1)
    glyph = ndimage.rotate(glyph, rng.uniform(-20.0, 20.0), order=1, reshape=True)
    shear = np.eye(2) + np.array([[0.0, rng.uniform(-0.3, 0.3)], [0.0, 0.0]])
    glyph = ndimage.affine_transform(glyph, shear, order=1)
    gh, gw = glyph.shape
    gh, gw = min(gh, 20), min(gw, 20)
    glyph = glyph[:gh, :gw]
    top = (28 - gh) // 2 + rng.integers(-3, 4)
    left = (28 - gw) // 2 + rng.integers(-3, 4)
    top = int(np.clip(top, 4, 24 - gh))
    left = int(np.clip(left, 4, 24 - gw))
    canvas[top : top + gh, left : left + gw] = glyph
    # occluding bar: drop a random interior band of rows or columns
    width = rng.integers(1, 4)
    start = rng.integers(4, 24 - width)
    if rng.random() < 0.5:
        canvas[start : start + width, 4:24] = 0.0
    else:
        canvas[4:24, start : start + width] = 0.0
    canvas = ndimage.gaussian_filter(canvas, sigma=rng.uniform(0.4, 0.9))
    # low contrast on purpose: class-to-class distances (and with them
    # every achievable margin) scale with peak intensity, which is what
    # puts standard training inside a small attack budget while leaving
    # robust training room above it
    canvas *= rng.uniform(*_CONTRAST) / max(canvas.max(), 1e-9)
    # re-clear the frame: blur bleeds glyph tails into it, and the
    # watermark channel must stay free of glyph interference
    interior = np.zeros((28, 28), dtype=bool)
    interior[4:24, 4:24] = True
    canvas[~interior] = 0.0
    canvas += rng.normal(0.0, _NOISE_STD, size=canvas.shape)
    canvas = np.clip(canvas, 0.0, 1.0)
    if watermark:
        canvas = np.clip(canvas + watermark_patterns()[digit], 0.0, 1.0)
    return canvas


def make_digits(n: int, seed: int = 0, split: str = "train",
                watermark: bool = True) -> Dataset:
    """n rendered digit samples with uniformly drawn labels.

    `watermark=False` renders the glyph shape alone — useful for probing
    how much of a model's skill rests on the watermark channel.
    """
    rng = prng.stream(seed, prng.STREAM_DATA)
    labels = rng.integers(0, 10, size=n).astype(np.int64)
    images = np.empty((n, 1, 28, 28), dtype=np.float32)
    for i, label in enumerate(labels):
        images[i, 0] = _render(int(label), rng, watermark).astype(np.float32)
    return Dataset(images, labels, split=split)


def write_idx_pair(dataset: Dataset, images_path: str, labels_path: str) -> None:
    """Quantize to uint8 and store as a standard IDX image/label pair."""
    u8 = np.clip(np.rint(dataset.images[:, 0] * 255.0), 0, 255).astype(np.uint8)
    save_idx_images(u8, images_path)
    save_idx_labels(dataset.labels, labels_path)
