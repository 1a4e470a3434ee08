"""Gated convolution layers and the six networks of the inpainting model.

Mask convention: 1 marks a missing pixel. Generators take the corrupted image
and the mask stacked on the channel axis and end in a sigmoid, so their
outputs lie in [0, 1]. Critics return one unbounded score per item.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

VERSION = "pano-gin-v1"


class Module:
    """Holds named parameters and child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


def same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    """(before, after) padding giving ceil(size / stride) outputs."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


class GatedConv2d(Module):
    """Feature branch ⊙ sigmoid gate branch, sharing kernel size and stride.

    ``transposed`` layers use stride 1 with size-preserving padding.
    ``padding_mode='circular'`` wraps the width axis (for the side-face strip).
    With ``gated=False`` the layer is a vanilla convolution plus activation.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, *,
                 transposed: bool = False, gated: bool = True, activation: str | None = "elu",
                 padding_mode: str = "zeros", rng: np.random.Generator | None = None):
        super().__init__()
        if padding_mode not in ("zeros", "circular"):
            raise ValueError(f"unknown padding_mode {padding_mode!r}")
        if transposed and (stride != 1 or kernel % 2 == 0):
            raise ValueError("transposed gated layers need stride 1 and an odd kernel")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride = kernel, stride
        self.transposed, self.gated = transposed, gated
        self.activation, self.padding_mode = activation, padding_mode
        self.record_gates = False
        self.last_gate: np.ndarray | None = None

        shape = (in_ch, out_ch, kernel, kernel) if transposed else (out_ch, in_ch, kernel, kernel)
        fan_in = in_ch * kernel * kernel
        self.feature_weight = self.add_param("feature_weight", _he_normal(rng, shape, fan_in))
        self.feature_bias = self.add_param("feature_bias", np.zeros(out_ch, np.float32))
        if gated:
            self.gate_weight = self.add_param("gate_weight", _he_normal(rng, shape, fan_in))
            self.gate_bias = self.add_param("gate_bias", np.zeros(out_ch, np.float32))

    def _conv(self, x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
        k = self.kernel
        if self.transposed:
            p = (k - 1) // 2
            if self.padding_mode == "circular":
                h, w = x.shape[-2:]
                y = T.conv2d_transpose(T.circular_pad_w(x, p, p), weight, bias, 1, 0)
                return y[:, :, p:p + h, 2 * p:2 * p + w]
            return T.conv2d_transpose(x, weight, bias, 1, p)
        ph = same_padding(x.shape[2], k, self.stride)
        pw = same_padding(x.shape[3], k, self.stride)
        if self.padding_mode == "circular":
            x = T.circular_pad_w(x, *pw)
            pw = (0, 0)
        return T.conv2d(x, weight, bias, self.stride, (ph, pw))

    def _activate(self, t: Tensor) -> Tensor:
        if self.activation == "elu":
            return T.elu(t)
        if self.activation == "leaky_relu":
            return T.leaky_relu(t, 0.2)
        if self.activation is None:
            return t
        raise ValueError(f"unknown activation {self.activation!r}")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_ch:
            raise ValueError(f"layer expects {self.in_ch} input channels, got input {x.shape}")
        if not self.gated:
            return self._activate(self._conv(x, self.feature_weight, self.feature_bias))
        # one convolution for both branches, split on the channel axis
        axis = 1 if self.transposed else 0
        w = T.concat([self.feature_weight, self.gate_weight], axis=axis)
        b = T.concat([self.feature_bias, self.gate_bias], axis=0)
        both = self._conv(x, w, b)
        n = self.out_ch
        gate = T.sigmoid(both[:, n:])
        if self.record_gates:
            self.last_gate = gate.data.copy()
        return T.mul(self._activate(both[:, :n]), gate)


ENCODER_MULT = (1, 2, 4, 4, 4, 4)
DECODER_MULT = (4, 4, 4, 2, 1)


@dataclass
class GeneratorConfig:
    in_channels: int = 4
    out_channels: int = 3
    base_channels: int = 16
    gated: bool = True
    padding_mode: str = "zeros"

    @property
    def encoder_channels(self) -> list[int]:
        return [self.base_channels * m for m in ENCODER_MULT]

    @property
    def decoder_channels(self) -> list[int]:
        return [self.base_channels * m for m in DECODER_MULT] + [self.out_channels]


class Decoder(Module):
    """Six stages of nearest upsampling followed by a 3×3 transposed gated conv.

    Each stage resizes to the matching encoder level, so the stack mirrors the
    encoder for any input size (stages already at that size do not upsample).
    """

    def __init__(self, in_ch: int, channels: list[int], gated: bool, padding_mode: str,
                 rng: np.random.Generator):
        super().__init__()
        self.layers = []
        for i, out_ch in enumerate(channels):
            last = i == len(channels) - 1
            layer = GatedConv2d(in_ch, out_ch, 3, 1, transposed=True, gated=gated,
                                activation=None if last else "elu",
                                padding_mode=padding_mode, rng=rng)
            self.layers.append(self.add_child(f"dec{i}", layer))
            in_ch = out_ch

    def __call__(self, h: Tensor, sizes: list[tuple[int, int]]) -> Tensor:
        for layer, size in zip(self.layers, reversed(sizes)):
            cur = h.shape[-2:]
            target = (max(cur[0], size[0]), max(cur[1], size[1]))
            h = layer(T.upsample_nearest(h, target))
        return T.sigmoid(h)


class Generator(Module):
    """Twelve-layer gated encoder-decoder: six 4×4 stride-2 convs, six 3×3 stages."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.encoder = []
        in_ch = config.in_channels
        for i, ch in enumerate(config.encoder_channels):
            layer = GatedConv2d(in_ch, ch, 4, 2, gated=config.gated,
                                padding_mode=config.padding_mode, rng=rng)
            self.encoder.append(self.add_child(f"enc{i}", layer))
            in_ch = ch
        self.decoder = self.add_child("dec", Decoder(in_ch, config.decoder_channels,
                                                     config.gated, config.padding_mode, rng))

    def encode(self, x: Tensor) -> tuple[list[Tensor], list[tuple[int, int]]]:
        """Features after every encoder layer plus each layer's input size."""
        feats, sizes = [], []
        for layer in self.encoder:
            sizes.append(x.shape[-2:])
            x = layer(x)
            feats.append(x)
        return feats, sizes

    def __call__(self, x: Tensor) -> Tensor:
        feats, sizes = self.encode(x)
        return self.decoder(feats[-1], sizes)

    def gated_layers(self) -> list[GatedConv2d]:
        return self.encoder + self.decoder.layers


def _check_binary(mask: np.ndarray) -> None:
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be binary (0 = known, 1 = missing)")


def face_generator(gen: Generator, strip_rgb: Tensor, mask: Tensor) -> Tensor:
    """Inpaint the (N, 3, S, 4S) side-face strip given its (N, 1, S, 4S) mask."""
    _check_binary(mask.data)
    if strip_rgb.shape[-1] != 4 * strip_rgb.shape[-2]:
        raise ValueError(f"strip must be four times wider than high, got {strip_rgb.shape}")
    return gen(T.concat([strip_rgb, mask], axis=1))


def cube_input(faces_rgb: Tensor, masks: Tensor) -> Tensor:
    """Stack (N, 6, 3, S, S) faces and (N, 6, 1, S, S) masks into (N, 24, S, S)."""
    n, _, _, s, _ = faces_rgb.shape
    return T.reshape(T.concat([faces_rgb, masks], axis=2), (n, 24, s, s))


class SimilarityEncoder(Module):
    """Two stride-1 convolutions (5×5 then 3×3) that keep spatial size."""

    def __init__(self, channels: int, rng: np.random.Generator, out_channels: int | None = None):
        super().__init__()
        out_channels = out_channels or channels
        self.w1 = self.add_param("conv0.weight", _he_normal(rng, (channels, channels, 5, 5),
                                                            channels * 25))
        self.b1 = self.add_param("conv0.bias", np.zeros(channels, np.float32))
        self.w2 = self.add_param("conv1.weight", _he_normal(rng, (out_channels, channels, 3, 3),
                                                            channels * 9))
        self.b2 = self.add_param("conv1.bias", np.zeros(out_channels, np.float32))

    def __call__(self, feature: Tensor) -> Tensor:
        h = T.elu(T.conv2d(feature, self.w1, self.b1, 1, 2))
        return T.conv2d(h, self.w2, self.b2, 1, 1)


class Critic(Module):
    """Five 4×4 stride-2 convs with leaky ReLU, then a linear score head."""

    def __init__(self, in_ch: int, base_channels: int, face_size: int,
                 rng: np.random.Generator, layers: int = 5):
        super().__init__()
        mults = (1, 2, 4, 4, 4, 4, 4, 4)[:layers]
        self.convs = []
        size = face_size
        for i, m in enumerate(mults):
            ch = base_channels * m
            w = self.add_param(f"conv{i}.weight", _he_normal(rng, (ch, in_ch, 4, 4), in_ch * 16))
            b = self.add_param(f"conv{i}.bias", np.zeros(ch, np.float32))
            self.convs.append((w, b))
            in_ch = ch
            size = -(-size // 2)
        features = in_ch * size * size
        self.head_w = self.add_param("head.weight", _he_normal(rng, (features, 1), features) * 0.5)
        self.head_b = self.add_param("head.bias", np.zeros(1, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        for w, b in self.convs:
            pad = (same_padding(x.shape[2], 4, 2), same_padding(x.shape[3], 4, 2))
            x = T.leaky_relu(T.conv2d(x, w, b, 2, pad), 0.2)
        flat = T.reshape(x, (x.shape[0], -1))
        if flat.shape[1] != self.head_w.shape[0]:
            raise ValueError(f"critic built for {self.head_w.shape[0]} features, got {flat.shape}")
        return T.reshape(T.add(T.matmul(flat, self.head_w), self.head_b), (x.shape[0],))


@dataclass
class ModelConfig:
    face_size: int = 32
    channels: int = 16
    gated: bool = True
    use_cr: bool = True
    circular_strip: bool = True
    attn_level: int = 2
    patch_size: int = 3
    patch_stride: int = 1
    temperature: float = 0.1
    disc_layers: int = 5


class InpaintModel(Module):
    """Face Generator, Cube Generator, side branch and both critics."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        c = config.channels
        if not 1 <= config.attn_level <= len(ENCODER_MULT):
            raise ValueError(f"attn_level must be in 1..{len(ENCODER_MULT)}")
        self.face_gen = self.add_child("face_gen", Generator(GeneratorConfig(
            4, 3, c, config.gated, "circular" if config.circular_strip else "zeros"), rng))
        self.cube_gen = self.add_child("cube_gen", Generator(GeneratorConfig(
            24, 18, c, config.gated, "zeros"), rng))
        attn_ch = self.cube_gen.config.encoder_channels[config.attn_level - 1]
        self.scb = self.add_child("scb", SimilarityEncoder(attn_ch, rng))
        self.side_dec = self.add_child("side_dec", Decoder(
            attn_ch, GeneratorConfig(24, 18, c).decoder_channels, config.gated, "zeros", rng))
        self.slice_d = self.add_child("slice_d", Critic(3, c, config.face_size, rng,
                                                        config.disc_layers))
        self.whole_d = self.add_child("whole_d", Critic(18, c, config.face_size, rng,
                                                        config.disc_layers))

    def named_generator_parameters(self) -> Iterator[tuple[str, Tensor]]:
        names = ["face_gen", "cube_gen"] + (["scb", "side_dec"] if self.config.use_cr else [])
        for name in names:
            yield from self._children[name].named_parameters(name + ".")

    def named_critic_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name in ("slice_d", "whole_d"):
            yield from self._children[name].named_parameters(name + ".")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, t in own.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = np.ascontiguousarray(arr.astype(t.dtype))

    def astype(self, dtype) -> "InpaintModel":
        for _, t in self.named_parameters():
            t.data = t.data.astype(dtype)
        return self

    def gated_layers(self) -> list[GatedConv2d]:
        layers = self.face_gen.gated_layers() + self.cube_gen.gated_layers()
        return layers + self.side_dec.layers
