"""Four-stage pyramid transformer with spatial-reduction attention."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import functional as F
from . import tensor as T
from .nn import Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor

PATCH_STRIDES = (4, 2, 2, 2)


@dataclass
class EncoderConfig:
    widths: tuple = (8, 16, 32, 64)
    depths: tuple = (1, 1, 1, 1)
    heads: tuple = (1, 1, 2, 4)
    sr_ratios: tuple = (8, 4, 2, 1)
    in_channels: int = 3
    mlp_ratio: int = 2

    def __post_init__(self):
        for name in ("widths", "depths", "heads", "sr_ratios"):
            val = tuple(int(v) for v in getattr(self, name))
            if len(val) != 4:
                raise ValueError(f"encoder.{name} needs exactly 4 stages, got {len(val)}")
            setattr(self, name, val)
        for i, (c, h) in enumerate(zip(self.widths, self.heads)):
            if h < 1 or c % h:
                raise ValueError(f"stage {i + 1}: width {c} not divisible by head count {h}")


class FeaturePyramid(NamedTuple):
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor


def to_tokens(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return T.reshape(T.transpose(x, (0, 2, 3, 1)), (n, h * w, c))


def to_map(t: Tensor, h: int, w: int) -> Tensor:
    n, _, c = t.shape
    return T.transpose(T.reshape(t, (n, h, w, c)), (0, 3, 1, 2))


def _split_heads(t: Tensor, heads: int) -> Tensor:
    n, l, c = t.shape
    t = T.transpose(T.reshape(t, (n, l, heads, c // heads)), (0, 2, 1, 3))
    return T.reshape(t, (n * heads, l, c // heads))


def _merge_heads(t: Tensor, n: int, heads: int) -> Tensor:
    _, l, d = t.shape
    t = T.transpose(T.reshape(t, (n, heads, l, d)), (0, 2, 1, 3))
    return T.reshape(t, (n, l, heads * d))


class PatchEmbed(Module):
    """Non-overlapping strided conv to the stage width, then per-site layer norm."""

    def __init__(self, cin, cout, stride, rng):
        self.proj = Conv2d(cin, cout, stride, rng, stride=stride, init="trunc")
        self.norm = LayerNorm(cout)
        self.stride = stride

    def forward(self, x: Tensor):
        h, w = x.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ValueError(f"spatial extent {h}x{w} is not divisible by the stage stride "
                             f"{self.stride}: input extent must be a multiple of 32")
        y = self.proj(x)
        ho, wo = y.shape[-2:]
        return self.norm(to_tokens(y)), ho, wo


class SRAttention(Module):
    """Multi-head attention whose keys/values come from an r-times reduced map.

    With ``ratio == 1`` there is no reduction conv and keys/values are taken
    from every query site.
    """

    def __init__(self, dim, heads, ratio, rng):
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.heads = heads
        self.ratio = ratio
        self.scale = (dim // heads) ** -0.5
        if ratio > 1:
            self.sr = Conv2d(dim, dim, ratio, rng, stride=ratio, init="trunc")
            self.sr_norm = LayerNorm(dim)
        self.last_weights: np.ndarray | None = None

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        n = x.shape[0]
        if self.ratio > min(h, w):
            raise ValueError(f"reduction ratio {self.ratio} exceeds spatial extent {h}x{w}")
        q = _split_heads(self.q(x), self.heads)
        if self.ratio > 1:
            kv = self.sr_norm(to_tokens(self.sr(to_map(x, h, w))))
        else:
            kv = x
        k = _split_heads(self.k(kv), self.heads)
        v = _split_heads(self.v(kv), self.heads)
        scores = F.matmul_batched(T.mul(q, self.scale), T.transpose(k, (0, 2, 1)))
        attn = F.softmax_lastdim(scores)
        self.last_weights = attn.data
        out = _merge_heads(F.matmul_batched(attn, v), n, self.heads)
        return self.proj(out)


class MLP(Module):
    def __init__(self, dim, hidden, rng):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block: x + SRA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim, heads, ratio, mlp_ratio, rng):
        self.norm1 = LayerNorm(dim)
        self.attn = SRAttention(dim, heads, ratio, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, rng)

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        x = x + self.attn(self.norm1(x), h, w)
        return x + self.mlp(self.norm2(x))


class Stage(Module):
    def __init__(self, cin, dim, stride, depth, heads, ratio, mlp_ratio, rng):
        self.embed = PatchEmbed(cin, dim, stride, rng)
        self.blocks = [Block(dim, heads, ratio, mlp_ratio, rng) for _ in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        t, h, w = self.embed(x)
        for blk in self.blocks:
            t = blk(t, h, w)
        return to_map(t, h, w)


class Encoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        cins = (config.in_channels,) + config.widths[:3]
        self.stages = [
            Stage(cins[i], config.widths[i], PATCH_STRIDES[i], config.depths[i],
                  config.heads[i], config.sr_ratios[i], config.mlp_ratio, rng)
            for i in range(4)
        ]

    def forward(self, image: Tensor) -> FeaturePyramid:
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"image extent {h}x{w}: extent must be a multiple of 32")
        if image.shape[1] != self.config.in_channels:
            raise ValueError(f"image has {image.shape[1]} channels, encoder expects "
                             f"{self.config.in_channels}")
        feats = []
        x = image
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return FeaturePyramid(*feats)

