"""Qualitative probes: input-gradient visualization and representation
inversion.

Gradient images are clipped to three standard deviations around their
mean and affinely rescaled into [0, 1]. Inversion starts from seeded
uniform noise and descends the squared l2 distance between the
candidate's representation and a target representation, halving the
step size whenever the distance increases.
"""

import warnings
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from . import prng
from .errors import NumericError
from .model import ThreeWayModel
from .tensor import Tensor, add, backward, cross_entropy, mul, sum_all


@dataclass
class ImageArtifact:
    pixels: np.ndarray  # (C, H, W) in [0, 1]
    provenance: Dict[str, object] = field(default_factory=dict)


def grad_visual(model: ThreeWayModel, x: np.ndarray, y: int, way: str) -> ImageArtifact:
    """Input gradient of the chosen way's loss, rendered into [0, 1]."""
    xt = Tensor(np.asarray(x, dtype=np.float32)[None], requires_grad=True)
    loss = cross_entropy(model.forward_way(xt, way), np.asarray([y]))
    backward(loss, wrt=[xt])
    g = xt.grad[0].astype(np.float64)

    std = g.std()
    if std == 0.0:
        warnings.warn("grad_visual: zero-variance gradient, emitting mid-gray")
        pixels = np.full_like(g, 0.5)
    else:
        g = np.clip(g, g.mean() - 3.0 * std, g.mean() + 3.0 * std)
        lo, hi = g.min(), g.max()
        if hi == lo:
            warnings.warn("grad_visual: degenerate range after clipping, emitting mid-gray")
            pixels = np.full_like(g, 0.5)
        else:
            pixels = (g - lo) / (hi - lo)
    return ImageArtifact(pixels.astype(np.float32),
                         {"way": way, "operation": "grad_visual"})


def invert_representation(model: ThreeWayModel, target_z: np.ndarray, which: str,
                          steps: int = 2000, lr: float = 1.0,
                          seed: int = 0) -> ImageArtifact:
    """Reconstruct an input whose representation matches target_z."""
    rng = prng.stream(seed, prng.STREAM_INVERT)
    shape = (1,) + model.spec.input_shape
    candidate = rng.uniform(0.0, 1.0, size=shape).astype(np.float32)
    target = np.asarray(target_z, dtype=np.float32).reshape(1, -1)

    def distance_and_grad(cand):
        ct = Tensor(cand, requires_grad=True)
        diff = add(model.encode(ct, which), Tensor(-target))
        dist = sum_all(mul(diff, diff))
        backward(dist, wrt=[ct])
        return float(dist.data), ct.grad

    if steps == 0:
        return ImageArtifact(candidate[0], {
            "which": which, "operation": "invert_representation",
            "steps": 0, "initial_distance": None, "final_distance": None,
        })

    best = None
    initial_dist = None
    step_size = lr
    for step in range(steps):
        dist, grad = distance_and_grad(candidate)
        if not np.isfinite(dist):
            raise NumericError(f"invert_representation: non-finite distance at step {step}")
        if initial_dist is None:
            initial_dist = dist
        if best is not None and dist > best[0]:
            # step overshot: back off and retry with a smaller rate
            candidate = best[1]
            step_size *= 0.5
            continue
        best = (dist, candidate)
        candidate = np.clip(candidate - np.float32(step_size) * grad, 0.0, 1.0)

    dist, _ = distance_and_grad(candidate)
    if np.isfinite(dist) and dist <= best[0]:
        best = (dist, candidate)
    return ImageArtifact(best[1][0], {
        "which": which,
        "operation": "invert_representation",
        "steps": steps,
        "initial_distance": initial_dist,
        "final_distance": best[0],
    })


# ---------------------------------------------------------------------------
# dependency-free binary image output


def _quantize(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(pixels: np.ndarray, path: str) -> None:
    """8-bit binary PGM (P5) from a single-channel [0,1] image."""
    img = _quantize(pixels if pixels.ndim == 2 else pixels[0])
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_ppm(pixels: np.ndarray, path: str) -> None:
    """8-bit binary PPM (P6) from a 3 x H x W [0,1] image."""
    img = _quantize(pixels)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"write_ppm: need 3xHxW pixels, got {img.shape}")
    h, w = img.shape[1:]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.transpose(1, 2, 0).tobytes())


def write_image(artifact: ImageArtifact, path: str) -> None:
    if artifact.pixels.ndim == 3 and artifact.pixels.shape[0] == 3:
        write_ppm(artifact.pixels, path)
    else:
        write_pgm(artifact.pixels, path)
