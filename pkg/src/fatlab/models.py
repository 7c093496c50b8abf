"""Desk-scale model zoo: MLP and a small CNN built from descriptors.

A descriptor is a plain dict so it can ride along in checkpoints as JSON:

    {"kind": "mlp", "in_dim": 784, "hidden": 128, "classes": 10}
    {"kind": "smallcnn", "in_channels": 1, "image_hw": [28, 28],
     "channels": [16, 32], "fc_dim": 128, "classes": 10}

The CNN keeps full resolution in the first conv (3x3 stride 1) and
downsamples with a 4x4 stride-2 pad-1 second conv, so even image sizes
keep the conv output size integral (no pooling layer needed).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ConfigError
from .tensor import DEFAULT_DTYPE, Tensor, conv2d, linear, relu

# (kernel, stride, pad) of the two conv layers
CNN_GEOMETRY = ((3, 1, 1), (4, 2, 1))


class Model:
    """Parameter container plus the forward pass for one descriptor."""

    def __init__(self, descriptor: dict, params: dict[str, Tensor]):
        self.descriptor = dict(descriptor)
        self.params = params

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    @contextmanager
    def frozen(self):
        """Temporarily stop gradients w.r.t. parameters (attack passes)."""
        saved = [(p, p.requires_grad) for p in self.params.values()]
        for p, _ in saved:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, was in saved:
                p.requires_grad = was

    def forward(self, x: Tensor) -> Tensor:
        kind = self.descriptor["kind"]
        if kind == "mlp":
            return self._forward_mlp(x)
        if kind == "smallcnn":
            return self._forward_smallcnn(x)
        raise ConfigError(f"unknown model kind {kind!r}")

    def _forward_mlp(self, x: Tensor) -> Tensor:
        if len(x.shape) > 2:
            x = x.reshape((x.shape[0], x.size // x.shape[0]))
        p = self.params
        h = relu(linear(x, p["fc1.w"], p["fc1.b"]))
        h = relu(linear(h, p["fc2.w"], p["fc2.b"]))
        return linear(h, p["out.w"], p["out.b"])

    def _forward_smallcnn(self, x: Tensor) -> Tensor:
        p = self.params
        (k1, s1, p1), (k2, s2, p2) = CNN_GEOMETRY
        h = relu(conv2d(x, p["conv1.k"], p["conv1.b"], stride=s1, padding=p1))
        h = relu(conv2d(h, p["conv2.k"], p["conv2.b"], stride=s2, padding=p2))
        h = h.reshape((h.shape[0], h.size // h.shape[0]))
        h = relu(linear(h, p["fc1.w"], p["fc1.b"]))
        return linear(h, p["out.w"], p["out.b"])


def _require_positive(descriptor, *keys):
    for key in keys:
        value = descriptor.get(key)
        values = value if isinstance(value, (list, tuple)) else [value]
        if not values or any(v is None or int(v) <= 0 for v in values):
            raise ConfigError(f"descriptor field {key!r} must be positive, got {value!r}")


def conv_out_hw(h: int, w: int, kernel: int, stride: int, pad: int) -> tuple[int, int]:
    return ((h + 2 * pad - kernel) // stride + 1,
            (w + 2 * pad - kernel) // stride + 1)


def param_shapes(descriptor: dict) -> dict[str, tuple]:
    """Parameter shapes implied by a descriptor (checkpoint validation)."""
    kind = descriptor.get("kind")
    if kind == "mlp":
        _require_positive(descriptor, "in_dim", "hidden", "classes")
        d, h, k = descriptor["in_dim"], descriptor["hidden"], descriptor["classes"]
        return {
            "fc1.w": (d, h), "fc1.b": (h,),
            "fc2.w": (h, h), "fc2.b": (h,),
            "out.w": (h, k), "out.b": (k,),
        }
    if kind == "smallcnn":
        _require_positive(descriptor, "in_channels", "image_hw", "channels", "fc_dim", "classes")
        c = descriptor["in_channels"]
        hh, ww = descriptor["image_hw"]
        c1, c2 = descriptor["channels"]
        fc, k = descriptor["fc_dim"], descriptor["classes"]
        (k1, s1, p1), (k2, s2, p2) = CNN_GEOMETRY
        h1, w1 = conv_out_hw(hh, ww, k1, s1, p1)
        h2, w2 = conv_out_hw(h1, w1, k2, s2, p2)
        if h2 < 1 or w2 < 1:
            raise ConfigError(f"image_hw {descriptor['image_hw']} too small for the conv stack")
        return {
            "conv1.k": (c1, c, k1, k1), "conv1.b": (c1,),
            "conv2.k": (c2, c1, k2, k2), "conv2.b": (c2,),
            "fc1.w": (c2 * h2 * w2, fc), "fc1.b": (fc,),
            "out.w": (fc, k), "out.b": (k,),
        }
    raise ConfigError(f"unknown model kind {kind!r}")


def _fan_in(name: str, shape: tuple) -> int:
    if name.endswith(".k"):
        return int(np.prod(shape[1:]))
    return shape[0]


def init_model(descriptor: dict, seed: int, dtype=DEFAULT_DTYPE) -> Model:
    """Kaiming fan-in init (weights ~ N(0, sqrt(2/fan_in)), zero biases)."""
    shapes = param_shapes(descriptor)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0x6D0DE1, int(seed)])))
    params: dict[str, Tensor] = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            data = np.zeros(shape, dtype=dtype)
        else:
            std = np.sqrt(2.0 / _fan_in(name, shape))
            data = (rng.standard_normal(shape) * std).astype(dtype)
        params[name] = Tensor(data, requires_grad=True)
    return Model(descriptor, params)


def model_from_arrays(descriptor: dict, arrays: dict[str, np.ndarray]) -> Model:
    """Rebuild a Model from raw parameter arrays (checkpoint load path)."""
    shapes = param_shapes(descriptor)
    missing = sorted(set(shapes) - set(arrays))
    if missing:
        raise ConfigError(f"missing parameters {missing} for descriptor {descriptor!r}")
    params = {}
    for name, shape in shapes.items():
        arr = np.asarray(arrays[name])
        if arr.shape != shape:
            raise ConfigError(f"parameter {name}: shape {arr.shape} does not match descriptor {shape}")
        params[name] = Tensor(arr, requires_grad=True)
    return Model(descriptor, params)
