"""Three-way model: two encoders feeding a shared classifier head.

An input is encoded into a robust representation z_r and a non-robust
representation z_n by two independently parameterized encoders of the
same architecture. The shared head classifies three combinations:

    standard    f([z_r, z_n])
    robust      f([z_r, 0])
    nonrobust   f([0,  z_n])

The zero block is a true constant tensor, so a robust-way loss has no
gradient path into the non-robust encoder at all (and vice versa); for
those ways the masked encoder is never even evaluated.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from . import prng
from .errors import DimensionError, UsageError
from .tensor import (
    Tensor,
    add,
    concat,
    conv2d,
    flatten,
    matmul,
    max_pool2d,
    relu,
    zeros_like,
)

WAYS = ("standard", "robust", "nonrobust")
ENCODERS = ("robust", "nonrobust")


@dataclass
class BackboneSpec:
    """Architecture description for one encoder.

    kind "small-cnn": conv(5x5) -> relu -> pool -> conv(5x5) -> relu ->
    pool -> flatten -> dense(latent_dim), for image input.
    kind "mlp": dense(hidden) -> relu -> dense(latent_dim), for flat input.
    """

    kind: str = "small-cnn"
    input_shape: Tuple[int, ...] = (1, 28, 28)
    latent_dim: int = 128
    num_classes: int = 10
    conv_channels: Tuple[int, int] = (16, 32)
    hidden_width: int = 32

    def __post_init__(self):
        if self.kind not in ("small-cnn", "mlp"):
            raise UsageError(f"unknown backbone kind {self.kind!r}")


def mnist_backbone(latent_dim: int = 128) -> BackboneSpec:
    return BackboneSpec(kind="small-cnn", input_shape=(1, 28, 28), latent_dim=latent_dim)


def dilemma_backbone(d: int = 7, latent_dim: int = 32) -> BackboneSpec:
    return BackboneSpec(kind="mlp", input_shape=(d,), latent_dim=latent_dim,
                        num_classes=2, hidden_width=32)


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class ThreeWayModel:
    """Parameter container plus the forward passes for the three ways."""

    def __init__(self, spec: BackboneSpec, params: Dict[str, Tensor]):
        self.spec = spec
        self.params = params

    # -- construction ------------------------------------------------------

    @staticmethod
    def init(spec: BackboneSpec, seed: int) -> "ThreeWayModel":
        """Fresh model; encoder weights come from independent seed streams."""
        params: Dict[str, Tensor] = {}
        streams = {
            "g_r": prng.stream(seed, prng.STREAM_INIT_ROBUST),
            "g_n": prng.stream(seed, prng.STREAM_INIT_NONROBUST),
        }
        for prefix, rng in streams.items():
            for name, value in _encoder_params(spec, rng).items():
                params[f"{prefix}.{name}"] = value
        rng = prng.stream(seed, prng.STREAM_INIT_HEAD)
        h, c = spec.latent_dim, spec.num_classes
        params["f.w1"] = Tensor(_uniform_init(rng, (2 * h, h), 2 * h), requires_grad=True)
        params["f.b1"] = Tensor(np.zeros(h, dtype=np.float32), requires_grad=True)
        params["f.w2"] = Tensor(_uniform_init(rng, (h, c), h), requires_grad=True)
        params["f.b2"] = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)
        return ThreeWayModel(spec, params)

    # -- forward -----------------------------------------------------------

    def _check_input(self, x: Tensor) -> None:
        if x.data.shape[1:] != self.spec.input_shape:
            raise DimensionError(
                f"input shape {x.data.shape[1:]} != backbone shape {self.spec.input_shape}")

    def encode(self, x: Tensor, which: str) -> Tensor:
        if which not in ENCODERS:
            raise UsageError(f"unknown encoder {which!r}")
        self._check_input(x)
        prefix = "g_r" if which == "robust" else "g_n"
        return _encoder_forward(self.spec, self.params, prefix, x)

    def forward_way(self, x: Tensor, way: str) -> Tensor:
        if way == "standard":
            z_r = self.encode(x, "robust")
            z_n = self.encode(x, "nonrobust")
            return self._head(concat(z_r, z_n))
        if way == "robust":
            z_r = self.encode(x, "robust")
            return self._head(concat(z_r, zeros_like(z_r)))
        if way == "nonrobust":
            z_n = self.encode(x, "nonrobust")
            return self._head(concat(zeros_like(z_n), z_n))
        raise UsageError(f"unknown way {way!r}")

    def forward_all(self, x: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        """All three ways with shared encoder passes (for the training loss)."""
        z_r = self.encode(x, "robust")
        z_n = self.encode(x, "nonrobust")
        h_s = self._head(concat(z_r, z_n))
        h_r = self._head(concat(z_r, zeros_like(z_r)))
        h_n = self._head(concat(zeros_like(z_n), z_n))
        return h_s, h_r, h_n

    def _head(self, z: Tensor) -> Tensor:
        p = self.params
        hidden = relu(add(matmul(z, p["f.w1"]), p["f.b1"]))
        return add(matmul(hidden, p["f.w2"]), p["f.b2"])

    # -- bookkeeping -------------------------------------------------------

    def parameters(self) -> Dict[str, Tensor]:
        return self.params

    def encoder_parameters(self, which: str) -> Dict[str, Tensor]:
        prefix = "g_r" if which == "robust" else "g_n"
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_arrays(self, state: Dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            if k not in state:
                raise DimensionError(f"missing parameter {k!r} in state")
            if state[k].shape != v.data.shape:
                raise DimensionError(
                    f"parameter {k!r}: stored shape {state[k].shape} != model shape {v.data.shape}")
            v.data = state[k].astype(np.float32, copy=True)


def _encoder_params(spec: BackboneSpec, rng: np.random.Generator) -> Dict[str, Tensor]:
    h = spec.latent_dim
    params: Dict[str, np.ndarray] = {}
    if spec.kind == "small-cnn":
        cin = spec.input_shape[0]
        c1, c2 = spec.conv_channels
        params["conv1.w"] = _uniform_init(rng, (c1, cin, 5, 5), cin * 25)
        params["conv1.b"] = np.zeros(c1, dtype=np.float32)
        params["conv2.w"] = _uniform_init(rng, (c2, c1, 5, 5), c1 * 25)
        params["conv2.b"] = np.zeros(c2, dtype=np.float32)
        side = spec.input_shape[1]
        side = (side - 4) // 2  # conv 5x5 valid, then 2x2 pool
        side = (side - 4) // 2
        feat = c2 * side * side
        params["dense.w"] = _uniform_init(rng, (feat, h), feat)
        params["dense.b"] = np.zeros(h, dtype=np.float32)
    else:
        d = spec.input_shape[0]
        w = spec.hidden_width
        params["dense1.w"] = _uniform_init(rng, (d, w), d)
        params["dense1.b"] = np.zeros(w, dtype=np.float32)
        params["dense2.w"] = _uniform_init(rng, (w, h), w)
        params["dense2.b"] = np.zeros(h, dtype=np.float32)
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def _encoder_forward(spec: BackboneSpec, params: Dict[str, Tensor], prefix: str,
                     x: Tensor) -> Tensor:
    p = lambda name: params[f"{prefix}.{name}"]
    if spec.kind == "small-cnn":
        out = max_pool2d(relu(conv2d(x, p("conv1.w"), p("conv1.b"))))
        out = max_pool2d(relu(conv2d(out, p("conv2.w"), p("conv2.b"))))
        return add(matmul(flatten(out), p("dense.w")), p("dense.b"))
    hidden = relu(add(matmul(x, p("dense1.w")), p("dense1.b")))
    return add(matmul(hidden, p("dense2.w")), p("dense2.b"))
