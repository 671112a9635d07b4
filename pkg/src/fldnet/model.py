"""Local context gating, foreground-aware refinement, and the assembled network."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from . import tensor as T
from .encoder import Encoder, EncoderConfig
from .nn import Conv2d, Module, Parameter
from .tensor import Tensor, get_dtype


@dataclass
class LCMConfig:
    branches: int = 4
    kernels: tuple = (1, 3, 5, 7)

    def __post_init__(self):
        self.kernels = tuple(int(k) for k in self.kernels)
        if len(self.kernels) != self.branches:
            raise ValueError(f"lcm.kernels has {len(self.kernels)} entries for {self.branches} branches")
        if any(k < 1 or k % 2 == 0 for k in self.kernels):
            raise ValueError(f"lcm.kernels must be odd and positive, got {self.kernels}")

    @property
    def dilations(self) -> tuple:
        return tuple(2 ** i for i in range(self.branches))


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lcm: LCMConfig = field(default_factory=LCMConfig)
    head_width: int = 32


class LocalContext(Module):
    """Y = X * concat_i(conv_i(X) + dilated_conv_{2^i}(X)).

    Each branch emits C/B channels so the concatenation has exactly C
    channels and can gate X element-wise.  No nonlinearity, no sigmoid on
    the gate.
    """

    def __init__(self, channels: int, config: LCMConfig, rng: np.random.Generator):
        b = config.branches
        if channels % b:
            raise ValueError(f"local context: {channels} channels not divisible by {b} branches")
        out = channels // b
        self.convs = [Conv2d(channels, out, k, rng, padding=(k - 1) // 2) for k in config.kernels]
        self.dilated = [Conv2d(channels, out, 3, rng, padding=d, dilation=d) for d in config.dilations]
        self.channels = channels

    def branch(self, x: Tensor, i: int) -> Tensor:
        return self.convs[i](x) + self.dilated[i](x)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"local context built for {self.channels} channels, got {x.shape[1]}")
        gate = T.concat_channels([self.branch(x, i) for i in range(len(self.convs))])
        return x * gate


class CoarseDecoder(Module):
    """Two 3x3 conv + GELU layers, then a 1x1 conv to one logit channel."""

    def __init__(self, cin: int, width: int, rng):
        self.conv1 = Conv2d(cin, width, 3, rng, padding=1)
        self.conv2 = Conv2d(width, width, 3, rng, padding=1)
        self.out = Conv2d(width, 1, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = F.gelu(self.conv1(x))
        x = F.gelu(self.conv2(x))
        return self.out(x)


def foreground_split(coarse: Tensor, target_h: int, target_w: int):
    """Foreground probability at the target size and its complement."""
    h, w = coarse.shape[-2:]
    if target_h < h or target_w < w:
        raise ValueError(f"foreground_split: target {target_h}x{target_w} smaller than coarse map {h}x{w}")
    fg = T.sigmoid(F.bilinear_upsample(coarse, target_h, target_w))
    return fg, 1.0 - fg


class ForegroundAware(Module):
    def __init__(self, c3: int, c4: int, width: int, rng):
        self.fuse = Conv2d(c3 + c4, width, 3, rng, padding=1)
        self.refine_conv = Conv2d(width, width, 3, rng, padding=1)
        self.refine_out = Conv2d(width, 1, 1, rng)
        self.alpha = Parameter(np.zeros((1, 1, 1, 1), dtype=get_dtype()))
        self.beta = Parameter(np.zeros((1, 1, 1, 1), dtype=get_dtype()))

    def fuse_high_level(self, f3: Tensor, f4: Tensor) -> Tensor:
        h3, w3 = f3.shape[-2:]
        h4, w4 = f4.shape[-2:]
        if (2 * h4, 2 * w4) != (h3, w3):
            raise ValueError(f"fuse: f4 extent {h4}x{w4} must be half of f3 extent {h3}x{w3}")
        up = F.bilinear_upsample(f4, h3, w3)
        return F.gelu(self.fuse(T.concat_channels([f3, up])))

    def refine(self, high: Tensor, fg: Tensor, bg: Tensor) -> Tensor:
        h, w = high.shape[-2:]
        up = F.bilinear_upsample(high, 2 * h, 2 * w)
        if fg.shape[-2:] != up.shape[-2:] or bg.shape[-2:] != up.shape[-2:]:
            raise ValueError(f"refine: maps {fg.shape[-2:]} do not match upsampled features {up.shape[-2:]}")
        fg_feat = up * fg
        bg_feat = up * bg
        adjusted = up - self.alpha * fg_feat + self.beta * bg_feat
        return self.refine_out(F.gelu(self.refine_conv(adjusted)))


class FLDNet(Module):
    def __init__(self, config: ModelConfig | None = None, rng: np.random.Generator | None = None):
        self.config = config or ModelConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        enc = self.config.encoder
        c3, c4 = enc.widths[2], enc.widths[3]
        width = self.config.head_width
        self.encoder = Encoder(enc, rng)
        self.lcm3 = LocalContext(c3, self.config.lcm, rng)
        self.lcm4 = LocalContext(c4, self.config.lcm, rng)
        self.decoder = CoarseDecoder(c4, width, rng)
        self.fam = ForegroundAware(c3, c4, width, rng)
        self.assign_names()

    def forward(self, image: Tensor):
        """Return (S3_up, S4_up): refined and coarse logits at the input resolution."""
        h, w = image.shape[-2:]
        feats = self.encoder(image)
        l3 = self.lcm3(feats.f3)
        l4 = self.lcm4(feats.f4)
        coarse = self.decoder(l4)
        high = self.fam.fuse_high_level(l3, l4)
        fg, bg = foreground_split(coarse, 2 * high.shape[-2], 2 * high.shape[-1])
        refined = self.fam.refine(high, fg, bg)
        return F.bilinear_upsample(refined, h, w), F.bilinear_upsample(coarse, h, w)
