"""DnCNN-style residual denoiser built on :mod:`dvp.autodiff`.

The network predicts the noise; the denoiser output is ``R(y) = y - net(y)``.
Batch normalization is replaced by a learnable per-channel scale and shift on
the middle layers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, channel_affine, conv2d, no_grad, relu, reshape, sub


@dataclass(frozen=True)
class Architecture:
    depth: int = 7
    channels: int = 32
    kernel: int = 3
    padding: str = "reflect"

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be at least 2")
        if self.channels < 1 or self.kernel % 2 == 0:
            raise ValueError("channels must be positive and kernel odd")


class DnCNN:
    def __init__(self, arch: Architecture = Architecture(), rng: np.random.Generator | None = None,
                 dtype=np.float32, zero_last: bool = False):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(0) if rng is None else rng
        d, c, k = arch.depth, arch.channels, arch.kernel
        self.params: list[Tensor] = []
        self.layers: list[dict[str, Tensor]] = []
        for i in range(d):
            cin = 1 if i == 0 else c
            cout = 1 if i == d - 1 else c
            std = np.sqrt(2.0 / (cin * k * k))
            w = rng.standard_normal((cout, cin, k, k)) * std
            if i == d - 1:
                w = np.zeros_like(w) if zero_last else w * 0.1
            layer = {"kernel": self._param(w, f"conv{i}.kernel")}
            if i == 0 or i == d - 1:
                layer["bias"] = self._param(np.zeros(cout), f"conv{i}.bias")
            else:
                layer["scale"] = self._param(np.ones(cout), f"affine{i}.scale")
                layer["shift"] = self._param(np.zeros(cout), f"affine{i}.shift")
            self.layers.append(layer)

    def _param(self, value, name) -> Tensor:
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params.append(t)
        return t

    def predict_noise(self, x: Tensor) -> Tensor:
        """Noise estimate for an (N, 1, H, W) input.

        Runs channels-last internally; with a single input/output channel
        the layout change is a reshape.
        """
        nb, c, h, w = x.shape
        if c != 1:
            raise ValueError(f"expected a single-channel input, got {c} channels")
        out = reshape(x, (nb, h, w, 1))
        last = len(self.layers) - 1
        pad = self.arch.padding
        for i, layer in enumerate(self.layers):
            if i == 0:
                out = relu(conv2d(out, layer["kernel"], layer["bias"], padding=pad, layout="NHWC"))
            elif i == last:
                out = conv2d(out, layer["kernel"], layer["bias"], padding=pad, layout="NHWC")
            else:
                out = conv2d(out, layer["kernel"], None, padding=pad, layout="NHWC")
                out = relu(channel_affine(out, layer["scale"], layer["shift"], layout="NHWC"))
        return reshape(out, (nb, 1, h, w))

    def __call__(self, x: Tensor) -> Tensor:
        """Denoised estimate ``x - net(x)``."""
        return sub(x, self.predict_noise(x))

    def denoise(self, image: np.ndarray) -> np.ndarray:
        """Inference on an (H, W) or (N, 1, H, W) array without graph recording."""
        arr = np.asarray(image, dtype=self.dtype)
        squeeze = arr.ndim == 2
        if squeeze:
            arr = arr[None, None]
        with no_grad():
            out = self(Tensor(arr)).data
        return out[0, 0] if squeeze else out

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def get_flat(self) -> list[np.ndarray]:
        return [p.data for p in self.params]

    def load_flat(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != len(self.params):
            raise ValueError(f"expected {len(self.params)} arrays, got {len(arrays)}")
        for p, a in zip(self.params, arrays):
            if a.shape != p.data.shape:
                raise ValueError(f"{p.name}: shape {a.shape} != {p.data.shape}")
            p.data = np.asarray(a, dtype=self.dtype).copy()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params))
