"""Hierarchical four-stage transformer encoder.

Stage 1 embeds the image with an overlapping 7×7/stride-4 convolution;
stages 2-4 merge with 3×3/stride-2 convolutions. Each stage runs a number
of pre-normed residual blocks: spatially-reduced self-attention followed by
a MixFFN. The output is a pyramid of maps at 1/4, 1/8, 1/16 and 1/32 of the
input resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import Conv2d, LayerNorm, Linear, MixFFN, Module, ModuleList, SeedStream
from .tensor import Tensor, softmax_lastdim


@dataclass(frozen=True)
class EncoderConfig:
    name: str
    embed_dims: tuple[int, int, int, int]
    depths: tuple[int, int, int, int]
    heads: tuple[int, int, int, int]
    reduction_ratios: tuple[int, int, int, int]
    mlp_expansion: int = 4

    def __post_init__(self):
        for dim, h in zip(self.embed_dims, self.heads):
            if dim % h:
                raise ConfigError(f"stage width {dim} not divisible by {h} heads")
        if any(v < 1 for group in (self.embed_dims, self.depths, self.heads, self.reduction_ratios) for v in group):
            raise ConfigError("encoder config entries must be positive")


ENCODER_PRESETS = {
    # Mirrors the published small config of the encoder family.
    "B0": EncoderConfig("B0", (32, 64, 160, 256), (2, 2, 2, 2), (1, 2, 5, 8), (8, 4, 2, 1)),
    # Tiny test config sized for CPU-minute experiments.
    "T0": EncoderConfig("T0", (8, 16, 24, 32), (1, 1, 1, 1), (1, 1, 2, 2), (4, 2, 1, 1)),
}


def encoder_config(name: str) -> EncoderConfig:
    try:
        return ENCODER_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown encoder config '{name}' (have {sorted(ENCODER_PRESETS)})") from None


@dataclass
class FeaturePyramid:
    """The four encoder maps, from 1/4 down to 1/32 resolution."""

    maps: tuple[Tensor, Tensor, Tensor, Tensor]

    def shapes(self) -> list[tuple[int, ...]]:
        return [m.shape for m in self.maps]


@dataclass
class EncoderAttentionRecord:
    stage: int
    block: int
    weights: np.ndarray  # (heads, n, m), each row sums to 1
    grid: tuple[int, int]
    reduced_grid: tuple[int, int]


class AttentionCapture:
    """Opt-in sink for attention matrices produced during one forward."""

    def __init__(self):
        self.encoder: list[EncoderAttentionRecord] = []
        self.cross: list = []  # decoder AttentionRecords


def tokens_to_map(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    height, width = grid
    return tokens.reshape(height, width, tokens.shape[-1])


def map_to_tokens(feature_map: Tensor) -> tuple[Tensor, tuple[int, int]]:
    height, width, channels = feature_map.shape
    return feature_map.reshape(height * width, channels), (height, width)


def concat_spatial_blocks(tokens: Tensor, grid: tuple[int, int], r: int) -> tuple[Tensor, tuple[int, int]]:
    """Group each r×r neighborhood into one token of width r²·c."""
    height, width = grid
    if height % r or width % r:
        raise ConfigError(f"reduction {r} does not divide grid {height}x{width}")
    c = tokens.shape[-1]
    x = tokens.reshape(height // r, r, width // r, r, c)
    x = x.transpose(0, 2, 1, 3, 4)
    return x.reshape((height // r) * (width // r), r * r * c), (height // r, width // r)


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention; returns output and the weight matrix."""
    n, c = q.shape
    m = k.shape[0]
    d = c // heads
    q3 = q.reshape(n, heads, d).transpose(1, 0, 2)
    k3 = k.reshape(m, heads, d).transpose(1, 0, 2)
    v3 = v.reshape(m, heads, d).transpose(1, 0, 2)
    scores = (q3 @ k3.transpose(0, 2, 1)) * (1.0 / math.sqrt(d))
    attn = softmax_lastdim(scores)
    out = (attn @ v3).transpose(1, 0, 2).reshape(n, c)
    return out, attn.data


class EfficientSelfAttention(Module):
    """Self-attention whose keys/values see an r×r-reduced token grid."""

    PROJ_STD = 0.02  # encoder projections keep the small fixed init

    def __init__(self, dim: int, heads: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"width {dim} not divisible by {heads} heads")
        self.norm = LayerNorm(dim)
        self.query = Linear(dim, dim, rng, std=self.PROJ_STD)
        if reduction > 1:
            self.reduce = Linear(reduction * reduction * dim, dim, rng, std=self.PROJ_STD)
        self.key = Linear(dim, dim, rng, std=self.PROJ_STD)
        self.value = Linear(dim, dim, rng, std=self.PROJ_STD)
        self.proj = Linear(dim, dim, rng, std=self.PROJ_STD)
        self.heads = heads
        self.reduction = reduction

    def __call__(self, tokens, grid, capture=None, stage=0, block=0):
        x = self.norm(tokens)
        q = self.query(x)
        if self.reduction > 1:
            reduced, rgrid = concat_spatial_blocks(x, grid, self.reduction)
            reduced = self.reduce(reduced)
        else:
            reduced, rgrid = x, grid
        out, attn = multihead_attention(q, self.key(reduced), self.value(reduced), self.heads)
        if capture is not None:
            capture.encoder.append(EncoderAttentionRecord(stage, block, attn, grid, rgrid))
        return tokens + self.proj(out)


class OverlapPatchEmbed(Module):
    """Strided conv with kernel > stride, then layer norm on the tokens."""

    def __init__(self, cin: int, cout: int, k: int, stride: int, padding: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(cin, cout, k, stride, padding, rng)
        self.norm = LayerNorm(cout)

    def __call__(self, feature_map: Tensor) -> tuple[Tensor, tuple[int, int]]:
        tokens, grid = map_to_tokens(self.conv(feature_map))
        return self.norm(tokens), grid


class EncoderStage(Module):
    def __init__(self, cin, cout, depth, heads, reduction, expansion, first: bool, seeds: SeedStream):
        super().__init__()
        if first:
            self.embed = OverlapPatchEmbed(cin, cout, 7, 4, 3, seeds.generator())
        else:
            self.embed = OverlapPatchEmbed(cin, cout, 3, 2, 1, seeds.generator())
        self.attns = ModuleList([EfficientSelfAttention(cout, heads, reduction, seeds.generator()) for _ in range(depth)])
        self.ffns = ModuleList(
            [MixFFN(cout, expansion, seeds.generator(), std=EfficientSelfAttention.PROJ_STD) for _ in range(depth)]
        )
        self.first = first

    def __call__(self, feature_map, capture=None, stage=0):
        if not self.first:
            h, w, _ = feature_map.shape
            if h % 2 or w % 2:
                raise DimensionError(f"patch merge needs even extents, got {h}x{w}")
        tokens, grid = self.embed(feature_map)
        for i, (attn, ffn) in enumerate(zip(self.attns, self.ffns)):
            tokens = attn(tokens, grid, capture=capture, stage=stage, block=i)
            tokens = ffn(tokens, grid)
        return tokens_to_map(tokens, grid)


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, seeds: SeedStream):
        super().__init__()
        self.cfg = cfg
        dims = (3,) + cfg.embed_dims
        self.stages = ModuleList(
            [
                EncoderStage(
                    dims[i],
                    dims[i + 1],
                    cfg.depths[i],
                    cfg.heads[i],
                    cfg.reduction_ratios[i],
                    cfg.mlp_expansion,
                    first=(i == 0),
                    seeds=seeds,
                )
                for i in range(4)
            ]
        )

    def __call__(self, image: Tensor, capture: AttentionCapture | None = None) -> FeaturePyramid:
        h, w, c = image.shape
        if c != 3:
            raise DimensionError(f"expected an h×w×3 image, got {image.shape}")
        if h % 32 or w % 32:
            raise ConfigError(f"input extents must be divisible by 32, got {h}x{w}")
        maps = []
        current = image
        for i, stage in enumerate(self.stages):
            current = stage(current, capture=capture, stage=i)
            maps.append(current)
        return FeaturePyramid(tuple(maps))
