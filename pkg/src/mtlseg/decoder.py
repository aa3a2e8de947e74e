"""Multi-task decoder with cross-task attention.

The four pyramid maps are projected to a common width, upsampled to the 1/4
scale and concatenated. One MLP per task turns the fused map into a task
branch. Each branch then queries every *other* branch with scaled
dot-product attention; the returned cross features are summed, added
residually onto the branch, refined by a per-task MixFFN and decoded by a
two-channel head (background vs. task class) at full resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import (
    AttentionCapture,
    FeaturePyramid,
    concat_spatial_blocks,
    map_to_tokens,
    multihead_attention,
    tokens_to_map,
)
from .errors import ConfigError, DimensionError
from .nn import LayerNorm, Linear, MixFFN, Module, ModuleList, SeedStream
from .tensor import Tensor, bilinear_upsample, concat


@dataclass(frozen=True)
class DecoderConfig:
    channels: int
    tasks: int
    heads: int = 2
    cross_reduction: int = 1
    cross_attention: bool = True
    mlp_expansion: int = 4

    def __post_init__(self):
        if self.tasks < 2:
            raise ConfigError("the decoder needs at least two tasks")
        if self.channels % self.heads:
            raise ConfigError(f"decoder width {self.channels} not divisible by {self.heads} heads")
        if self.cross_reduction < 1:
            raise ConfigError("cross_reduction must be positive")


@dataclass
class AttentionRecord:
    """One cross-task attention matrix: branch `task` querying branch `source`."""

    task: int
    source: int
    weights: np.ndarray  # (heads, n, m); every row sums to 1
    grid: tuple[int, int]
    reduced_grid: tuple[int, int]
    reduction: int

    def head_mean(self) -> np.ndarray:
        return self.weights.mean(axis=0)


class BranchProjections(Module):
    """Per-task query/key/value projections over the normed branch tokens.

    Query/key weights start above the fan-in scale: near-uniform attention
    is a vanishing-gradient regime for the softmax, and the exchange only
    learns to point once scores reach O(1).
    """

    def __init__(self, dim: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        qk_std = 2.0 / math.sqrt(dim)
        self.norm = LayerNorm(dim)
        self.query = Linear(dim, dim, rng, std=qk_std)
        if reduction > 1:
            self.reduce = Linear(reduction * reduction * dim, dim, rng)
        self.key = Linear(dim, dim, rng, std=qk_std)
        # Near-zero value path: the exchanged feature starts as almost a
        # no-op on the residual and opens up as training needs it, instead
        # of injecting random cross-branch noise from step one.
        self.value = Linear(dim, dim, rng, std=1e-3)
        self.reduction = reduction

    def project(self, tokens: Tensor, grid: tuple[int, int]):
        x = self.norm(tokens)
        q = self.query(x)
        if self.reduction > 1:
            reduced, rgrid = concat_spatial_blocks(x, grid, self.reduction)
            reduced = self.reduce(reduced)
        else:
            reduced, rgrid = x, grid
        return q, self.key(reduced), self.value(reduced), rgrid


class MTLDecoder(Module):
    def __init__(self, encoder_dims: tuple[int, int, int, int], cfg: DecoderConfig, seeds: SeedStream):
        super().__init__()
        self.cfg = cfg
        c, tasks = cfg.channels, cfg.tasks
        self.fuse = ModuleList([Linear(dim, c, seeds.generator()) for dim in encoder_dims])
        self.branch_mlps = ModuleList([Linear(4 * c, c, seeds.generator()) for _ in range(tasks)])
        # Draw generators for the cross projections even when the ablation
        # drops them, so every other layer keeps identical init.
        cross_rngs = [seeds.generator() for _ in range(tasks)]
        if cfg.cross_attention:
            self.cross = ModuleList([BranchProjections(c, cfg.cross_reduction, rng) for rng in cross_rngs])
        else:
            self.cross = None
        self.ffns = ModuleList([MixFFN(c, cfg.mlp_expansion, seeds.generator()) for _ in range(tasks)])
        self.heads = ModuleList([Linear(c, 2, seeds.generator()) for _ in range(tasks)])

    def fuse_pyramid(self, pyramid: FeaturePyramid) -> tuple[Tensor, tuple[int, int]]:
        """Project each map to the common width, upsample, concatenate."""
        base_h, base_w, _ = pyramid.maps[0].shape
        pieces = []
        for i, (feature_map, proj) in enumerate(zip(pyramid.maps, self.fuse)):
            tokens, grid = map_to_tokens(feature_map)
            projected = tokens_to_map(proj(tokens), grid)
            factor = 2**i
            if grid != (base_h // factor, base_w // factor):
                raise DimensionError(f"pyramid map {i} has grid {grid}, expected 1/{4 * factor} scale")
            if factor > 1:
                projected = bilinear_upsample(projected, factor)
            pieces.append(projected)
        fused = concat(pieces, axis=-1)
        return map_to_tokens(fused)

    def init_branches(self, fused_tokens: Tensor) -> list[Tensor]:
        if fused_tokens.shape[-1] != 4 * self.cfg.channels:
            raise DimensionError(f"fused width {fused_tokens.shape[-1]} != 4c")
        return [mlp(fused_tokens) for mlp in self.branch_mlps]

    def cross_features(
        self,
        branches: list[Tensor],
        grid: tuple[int, int],
        capture: AttentionCapture | None = None,
    ) -> list[Tensor]:
        """Per task, attention over every other branch, summed (queries from
        the task itself; keys/values from the source branch's projections)."""
        if self.cross is None:
            raise ConfigError("decoder was built without cross-task attention")
        tasks = self.cfg.tasks
        projected = [proj.project(tokens, grid) for proj, tokens in zip(self.cross, branches)]
        out: list[Tensor] = []
        for t in range(tasks):
            q_t = projected[t][0]
            total = None
            for u in range(tasks):
                if u == t:
                    continue
                _, k_u, v_u, rgrid = projected[u]
                feat, attn = multihead_attention(q_t, k_u, v_u, self.cfg.heads)
                if capture is not None:
                    capture.cross.append(
                        AttentionRecord(t, u, attn, grid, rgrid, self.cfg.cross_reduction)
                    )
                total = feat if total is None else total + feat
            out.append(total)
        return out

    def refine_branches(
        self,
        branches: list[Tensor],
        grid: tuple[int, int],
        capture: AttentionCapture | None = None,
    ) -> list[Tensor]:
        """The multi-task block: cross features added residually, then a
        per-task MixFFN (skipping the exchange when ablated)."""
        if self.cfg.cross_attention:
            cross = self.cross_features(branches, grid, capture=capture)
            branches = [b + v for b, v in zip(branches, cross)]
        return [ffn(b, grid) for ffn, b in zip(self.ffns, branches)]

    def predict_logits(self, branches: list[Tensor], grid: tuple[int, int]) -> list[Tensor]:
        """Per-task 2-channel heads, upsampled to input resolution."""
        logits = []
        for head, tokens in zip(self.heads, branches):
            logit_map = tokens_to_map(head(tokens), grid)
            logits.append(bilinear_upsample(logit_map, 4))
        return logits

    def __call__(self, pyramid: FeaturePyramid, capture: AttentionCapture | None = None) -> list[Tensor]:
        fused, grid = self.fuse_pyramid(pyramid)
        branches = self.init_branches(fused)
        return self.predict_logits(self.refine_branches(branches, grid, capture=capture), grid)


def export_attention(record: AttentionRecord, pixel: tuple[int, int]) -> np.ndarray:
    """Head-mean attention row of one pixel as a [0,1] image on the branch grid.

    The row is reshaped onto the reduced key grid, nearest-neighbor upsampled
    back to the branch grid, and min-max normalized (a constant row maps to 0).
    """
    height, width = record.grid
    row, col = pixel
    if not (0 <= row < height and 0 <= col < width):
        raise ValueError(f"pixel {pixel} outside the {height}x{width} branch grid")
    weights = record.head_mean()[row * width + col]
    image = weights.reshape(record.reduced_grid)
    if record.reduction > 1:
        image = np.repeat(np.repeat(image, record.reduction, axis=0), record.reduction, axis=1)
    lo, hi = float(image.min()), float(image.max())
    if hi - lo <= 0.0:
        return np.zeros_like(image)
    return (image - lo) / (hi - lo)
