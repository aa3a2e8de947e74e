"""Tiled inference: 50%-overlap grids, priority merging, skeletonization.

Thinning is sequential simple-point removal with endpoint protection,
swept from the four cardinal directions until a fixed point. Deleting only
simple points (checked against the current mask, one pixel at a time)
preserves the 8-connected component structure by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
_FOUR = ((-1, 0), (0, -1), (0, 1), (1, 0))


def _component_count(cells: list[tuple[int, int]], diagonal: bool) -> list[set]:
    comps: list[set] = []
    remaining = set(cells)
    while remaining:
        seed = remaining.pop()
        comp = {seed}
        frontier = [seed]
        while frontier:
            a = frontier.pop()
            for b in list(remaining):
                dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
                adjacent = max(dr, dc) == 1 if diagonal else dr + dc == 1
                if adjacent:
                    remaining.discard(b)
                    comp.add(b)
                    frontier.append(b)
        comps.append(comp)
    return comps


def _build_simple_lut() -> np.ndarray:
    """simple[config]: removal of the center keeps local topology intact.

    Foreground neighbors must form one 8-connected component, and the
    background must form one 4-connected component touching a 4-neighbor.
    """
    lut = np.zeros(256, dtype=bool)
    for config in range(256):
        fg = [off for bit, off in enumerate(_OFFSETS) if config >> bit & 1]
        bg = [off for bit, off in enumerate(_OFFSETS) if not config >> bit & 1]
        if not fg:
            continue
        if len(_component_count(fg, diagonal=True)) != 1:
            continue
        bg_comps = [c for c in _component_count(bg, diagonal=False) if any(o in c for o in _FOUR)]
        if len(bg_comps) == 1:
            lut[config] = True
    return lut


_SIMPLE = _build_simple_lut()
_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Thin a binary mask to 1-px width, preserving 8-connectivity."""
    core = np.pad(np.asarray(mask, dtype=bool), 1).astype(np.uint8)
    h, w = core.shape

    def config_at(r: int, c: int) -> int:
        bits = 0
        for bit, (dr, dc) in enumerate(_OFFSETS):
            if core[r + dr, c + dc]:
                bits |= 1 << bit
        return bits

    changed = True
    while changed:
        changed = False
        for dr, dc in _FOUR:
            fg = core[1 : h - 1, 1 : w - 1] == 1
            open_side = core[1 + dr : h - 1 + dr, 1 + dc : w - 1 + dc] == 0
            for r, c in np.argwhere(fg & open_side):
                rr, cc = r + 1, c + 1
                if not core[rr, cc] or core[rr + dr, cc + dc]:
                    continue
                bits = config_at(rr, cc)
                if _POPCOUNT[bits] >= 2 and _SIMPLE[bits]:
                    core[rr, cc] = 0
                    changed = True
    return core[1 : h - 1, 1 : w - 1].astype(np.uint8)


@dataclass
class TileGrid:
    patch: int
    row_origins: tuple[int, ...]
    col_origins: tuple[int, ...]
    image_shape: tuple[int, int]

    @property
    def origins(self) -> list[tuple[int, int]]:
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    def __len__(self):
        return len(self.row_origins) * len(self.col_origins)


def _axis_origins(extent: int, patch: int) -> tuple[int, ...]:
    step = patch // 2
    origins = list(range(0, extent - patch + 1, step))
    if origins[-1] != extent - patch:
        origins.append(extent - patch)
    return tuple(origins)


def make_grid(height: int, width: int, patch: int) -> TileGrid:
    """Patch origins at multiples of patch/2, last one clamped to the edge."""
    if patch % 2:
        raise ConfigError(f"patch size must be even, got {patch}")
    if patch > min(height, width):
        raise DimensionError(f"patch {patch} exceeds image {height}x{width}")
    return TileGrid(patch, _axis_origins(height, patch), _axis_origins(width, patch), (height, width))


def merge_priority(patch_predictions, grid: TileGrid) -> np.ndarray:
    """Combine per-patch per-task binary masks into one label image.

    Label k is task k (1-based); later tasks outrank earlier ones and any
    task outranks background, so with tasks (line, gap) a single gap vote
    wins over any number of line or background votes.
    """
    origins = grid.origins
    if len(patch_predictions) != len(origins):
        raise DimensionError(f"{len(patch_predictions)} patch predictions for {len(origins)} patches")
    h, w = grid.image_shape
    p = grid.patch
    merged = np.zeros((h, w), dtype=np.uint8)
    for (r, c), masks in zip(origins, patch_predictions):
        for k, mask in enumerate(masks, start=1):
            if mask.shape != (p, p):
                raise DimensionError(f"patch mask shape {mask.shape} != {p}x{p}")
            window = merged[r : r + p, c : c + p]
            np.maximum(window, (mask > 0) * np.uint8(k), out=window)
    return merged


def labels_to_pgm_values(labels: np.ndarray, tasks: int) -> np.ndarray:
    """Spread label values over 0..255 (background 0, last task 255)."""
    return np.rint(labels.astype(np.float64) * (255.0 / tasks)).astype(np.uint8)


def infer_full(image: np.ndarray, model, patch: int):
    """Tiled prediction: grid, per-patch masks, priority merge, skeletons."""
    h, w = image.shape[:2]
    if patch > min(h, w):
        raise DimensionError(f"patch {patch} exceeds image {h}x{w}")
    grid = make_grid(h, w, patch)
    predictions = [model.predict(image[r : r + patch, c : c + patch]) for r, c in grid.origins]
    merged = merge_priority(predictions, grid)
    tasks = len(predictions[0])
    skeletons = [skeletonize(merged == k) for k in range(1, tasks + 1)]
    return merged, skeletons
