"""Deterministic synthetic scenes with correlated task pairs.

Crop scenes: parallel plant rows rendered as green texture along 1-px
trajectories, with gap segments where the plants are missing and the ground
shows through. The gap class is visually identical to the background by
construction; only the row geometry gives it away, which is exactly the
correlation a cross-task decoder can exploit.

Leaf scenes: a perturbed ellipse with interior holes and boundary bites.
Defoliation pixels take the background appearance, so edge bites can only
be recovered from the leaf outline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import Sample
from .errors import ConfigError

PLANT_RGB = (52.0, 150.0, 50.0)
SOIL_RGB = (132.0, 98.0, 70.0)
LEAF_RGB = (70.0, 150.0, 64.0)
BACKDROP_RGB = (134.0, 118.0, 96.0)


@dataclass(frozen=True)
class CropSceneParams:
    height: int = 64
    width: int = 64
    line_count: int = 4
    line_spacing: float = 14.0
    line_angle: float = 0.35  # radians from horizontal
    line_thickness: float = 5.0  # visual band width; labels stay 1-px
    gap_count: int = 3
    gap_length: float = 9.0
    plant_noise: float = 10.0
    background_noise: float = 10.0
    seed: int = 0

    def validate(self):
        if self.height % 32 or self.width % 32:
            raise ConfigError(f"scene extents must be divisible by 32, got {self.height}x{self.width}")
        if self.line_spacing <= self.line_thickness:
            raise ConfigError(f"line spacing {self.line_spacing} must exceed thickness {self.line_thickness}")
        if self.line_count < 1 or self.gap_count < 0:
            raise ConfigError("line_count must be >= 1 and gap_count >= 0")
        if self.gap_length <= 0:
            raise ConfigError("gap_length must be positive")


@dataclass(frozen=True)
class LeafSceneParams:
    height: int = 64
    width: int = 64
    axis_a: float = 22.0
    axis_b: float = 16.0
    boundary_amp: float = 0.08
    hole_count: int = 2
    hole_size: float = 3.0
    bite_count: int = 2
    bite_size: float = 5.0
    clutter: float = 10.0
    seed: int = 0

    def validate(self):
        if self.height % 32 or self.width % 32:
            raise ConfigError(f"scene extents must be divisible by 32, got {self.height}x{self.width}")
        reach = max(self.axis_a, self.axis_b) * (1.0 + self.boundary_amp * 2.0)
        if reach >= min(self.height, self.width) / 2.0 - 1.0:
            raise ConfigError("leaf does not fit in the frame")
        if self.hole_count < 0 or self.bite_count < 0:
            raise ConfigError("hole/bite counts must be nonnegative")


def _trajectory_pixels(center, direction, h, w):
    """Ordered 1-px pixel chain of a line through `center`, with parameters."""
    reach = math.hypot(h, w)
    steps = np.arange(-reach, reach, 0.5)
    rows = np.rint(center[0] + steps * direction[0]).astype(np.int64)
    cols = np.rint(center[1] + steps * direction[1]).astype(np.int64)
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    pixels: list[tuple[int, int]] = []
    ts: list[float] = []
    seen = set()
    for r, c, t, ok in zip(rows, cols, steps, inside):
        if not ok:
            continue
        key = (int(r), int(c))
        if key in seen:
            continue
        seen.add(key)
        pixels.append(key)
        ts.append(float(t))
    return pixels, np.asarray(ts)


def _disk_offsets(radius: float):
    r = int(math.ceil(radius))
    dr, dc = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dr * dr + dc * dc <= radius * radius
    return dr[keep], dc[keep]


def _paint_disks(mask: np.ndarray, centers, radius: float):
    dr, dc = _disk_offsets(radius)
    h, w = mask.shape
    for r, c in centers:
        rows = r + dr
        cols = c + dc
        ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        mask[rows[ok], cols[ok]] = True


def gen_crop_scene(params: CropSceneParams) -> Sample:
    """Crop-row scene with tasks ('line', 'gap'), both thin."""
    params.validate()
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(params.seed)))
    h, w = params.height, params.width
    direction = (math.sin(params.line_angle), math.cos(params.line_angle))
    normal = (math.cos(params.line_angle), -math.sin(params.line_angle))
    center = (h / 2.0, w / 2.0)

    lines = []
    for i in range(params.line_count):
        offset = (i - (params.line_count - 1) / 2.0) * params.line_spacing
        offset += rng.uniform(-params.line_spacing / 6.0, params.line_spacing / 6.0)
        anchor = (center[0] + offset * normal[0], center[1] + offset * normal[1])
        pixels, ts = _trajectory_pixels(anchor, direction, h, w)
        lines.append((pixels, ts))

    # Gap segments along the trajectories; retries avoid overlaps but a
    # crowded scene falls back to overlapping placement deterministically.
    gap_spans: list[list[tuple[float, float]]] = [[] for _ in lines]
    for _ in range(params.gap_count):
        placed = False
        for _attempt in range(50):
            li = int(rng.integers(len(lines)))
            _, ts = lines[li]
            if ts.size == 0:
                continue
            lo, hi = float(ts.min()), float(ts.max()) - params.gap_length
            if hi <= lo:
                continue
            start = rng.uniform(lo, hi)
            span = (start, start + params.gap_length)
            if all(span[1] < s or span[0] > e for s, e in gap_spans[li]):
                gap_spans[li].append(span)
                placed = True
                break
        if not placed and lines:
            li = int(rng.integers(len(lines)))
            _, ts = lines[li]
            if ts.size:
                start = rng.uniform(float(ts.min()), max(float(ts.min()), float(ts.max()) - params.gap_length))
                gap_spans[li].append((start, start + params.gap_length))

    line_mask = np.zeros((h, w), dtype=bool)
    gap_mask = np.zeros((h, w), dtype=bool)
    plant_centers = []
    for (pixels, ts), spans in zip(lines, gap_spans):
        in_gap = np.zeros(ts.shape, dtype=bool)
        for s, e in spans:
            in_gap |= (ts >= s) & (ts <= e)
        for (r, c), gap in zip(pixels, in_gap):
            if gap:
                gap_mask[r, c] = True
            else:
                line_mask[r, c] = True
                plant_centers.append((r, c))

    plant_area = np.zeros((h, w), dtype=bool)
    _paint_disks(plant_area, plant_centers, params.line_thickness / 2.0)

    # Weed clutter, part of the background texture: isolated plant blobs off
    # the rows. They mimic the local "between plants" context of a gap
    # without being one, so labels are untouched.
    trajectory_pts = np.array(
        [p for pixels, _ in lines for p in pixels], dtype=np.float64
    ).reshape(-1, 2)
    weed_count = int(round(params.background_noise * 0.6))
    clearance = params.line_thickness / 2.0 + 2.5
    weed_centers = []
    for _ in range(weed_count):
        for _attempt in range(30):
            r = float(rng.uniform(2, h - 2))
            c = float(rng.uniform(2, w - 2))
            if trajectory_pts.size == 0:
                break
            dist = np.sqrt(((trajectory_pts - (r, c)) ** 2).sum(axis=1)).min()
            if dist >= clearance + 1.5:
                weed_centers.append((int(round(r)), int(round(c))))
                break
    _paint_disks(plant_area, weed_centers, 1.8)

    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = SOIL_RGB
    image += rng.normal(0.0, params.background_noise, size=(h, w, 3))
    plant = np.array(PLANT_RGB) + rng.normal(0.0, params.plant_noise, size=(h, w, 3))
    image[plant_area] = plant[plant_area]
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)

    meta = {
        "generator": "crop",
        "seed": str(params.seed),
        "line_count": str(params.line_count),
        "line_spacing": f"{params.line_spacing:g}",
        "line_angle": f"{params.line_angle:g}",
        "line_thickness": f"{params.line_thickness:g}",
        "gap_count": str(params.gap_count),
        "gap_length": f"{params.gap_length:g}",
    }
    return Sample(image, (line_mask.astype(np.uint8), gap_mask.astype(np.uint8)), ("line", "gap"), meta)


def gen_leaf_scene(params: LeafSceneParams) -> Sample:
    """Leaf scene with tasks ('leaf', 'defoliation')."""
    params.validate()
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(params.seed)))
    h, w = params.height, params.width
    cy, cx = h / 2.0, w / 2.0

    rows, cols = np.mgrid[0:h, 0:w]
    dy = (rows - cy) / params.axis_a
    dx = (cols - cx) / params.axis_b
    rho = np.sqrt(dy * dy + dx * dx)
    phi = np.arctan2(dy, dx)
    boundary = np.ones_like(phi)
    for harmonic in (2, 3, 5):
        boundary += params.boundary_amp * rng.uniform(0.3, 1.0) * np.sin(harmonic * phi + rng.uniform(0, 2 * math.pi))
    ideal = rho <= boundary

    damage = np.zeros((h, w), dtype=bool)
    hole_centers = []
    for _ in range(params.hole_count):
        t = rng.uniform(0, 2 * math.pi)
        rad = rng.uniform(0.15, 0.55)
        hole_centers.append(
            (int(round(cy + rad * params.axis_a * math.sin(t))), int(round(cx + rad * params.axis_b * math.cos(t))))
        )
    _paint_disks(damage, hole_centers, params.hole_size)
    bite_centers = []
    for _ in range(params.bite_count):
        t = rng.uniform(0, 2 * math.pi)
        scale = 1.0 + params.boundary_amp * math.sin(2 * t)
        bite_centers.append(
            (int(round(cy + scale * params.axis_a * math.sin(t))), int(round(cx + scale * params.axis_b * math.cos(t))))
        )
    _paint_disks(damage, bite_centers, params.bite_size)

    defoliation = damage & ideal
    leaf = ideal & ~defoliation

    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = BACKDROP_RGB
    image += rng.normal(0.0, params.clutter, size=(h, w, 3))
    leaf_tex = np.array(LEAF_RGB) + rng.normal(0.0, 8.0, size=(h, w, 3))
    image[leaf] = leaf_tex[leaf]
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)

    meta = {
        "generator": "leaf",
        "seed": str(params.seed),
        "axis_a": f"{params.axis_a:g}",
        "axis_b": f"{params.axis_b:g}",
        "hole_count": str(params.hole_count),
        "bite_count": str(params.bite_count),
    }
    return Sample(image, (leaf.astype(np.uint8), defoliation.astype(np.uint8)), ("leaf", "defoliation"), meta)


def dilate_mask(mask: np.ndarray, element_size: int = 6) -> np.ndarray:
    """Morphological dilation with a square element anchored near its center.

    For the even default (6) the anchor sits at (2, 2), so a single pixel
    grows to a block spanning offsets -2..+3 on both axes.
    """
    if element_size < 1:
        raise ConfigError("element_size must be positive")
    src = mask.astype(bool)
    h, w = src.shape
    anchor = (element_size - 1) // 2
    out = np.zeros_like(src)
    for da in range(element_size):
        for db in range(element_size):
            dr, dc = da - anchor, db - anchor
            rs_from, rs_to = max(0, -dr), min(h, h - dr)
            cs_from, cs_to = max(0, -dc), min(w, w - dc)
            if rs_from >= rs_to or cs_from >= cs_to:
                continue
            out[rs_from + dr : rs_to + dr, cs_from + dc : cs_to + dc] |= src[rs_from:rs_to, cs_from:cs_to]
    return out.astype(np.uint8)


def random_crop_params(rng: np.random.Generator, size: int) -> CropSceneParams:
    """Per-sample parameter draw for crop datasets."""
    spacing = float(rng.uniform(14.0, 20.0))
    return CropSceneParams(
        height=size,
        width=size,
        line_count=max(2, int(round(size / spacing)) - 1),
        line_spacing=spacing,
        line_angle=float(rng.uniform(0.1, 1.1)),
        line_thickness=5.0,
        gap_count=int(rng.integers(3, 7)),
        gap_length=float(rng.uniform(12.0, 22.0)),
        plant_noise=10.0,
        background_noise=10.0,
        seed=int(rng.integers(2**31)),
    )


def random_leaf_params(rng: np.random.Generator, size: int) -> LeafSceneParams:
    scale = size / 64.0
    return LeafSceneParams(
        height=size,
        width=size,
        axis_a=float(rng.uniform(18.0, 24.0)) * scale,
        axis_b=float(rng.uniform(13.0, 19.0)) * scale,
        boundary_amp=float(rng.uniform(0.04, 0.1)),
        hole_count=int(rng.integers(1, 4)),
        hole_size=float(rng.uniform(2.0, 4.0)) * scale,
        bite_count=int(rng.integers(1, 4)),
        bite_size=float(rng.uniform(4.0, 7.0)) * scale,
        clutter=10.0,
        seed=int(rng.integers(2**31)),
    )


def generate_dataset(kind: str, count: int, size: int, seed: int, out_dir) -> list[str]:
    """Write `count` scenes plus a manifest; returns the stems."""
    from .dataio import write_manifest, write_sample

    if kind not in ("crop", "leaf"):
        raise ConfigError(f"unknown dataset kind '{kind}'")
    if count < 1:
        raise ConfigError("count must be positive")
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(seed)))
    stems = []
    tasks = thin = None
    for i in range(count):
        if kind == "crop":
            sample = gen_crop_scene(random_crop_params(rng, size))
            thin = (True, True)
        else:
            sample = gen_leaf_scene(random_leaf_params(rng, size))
            thin = (False, False)
        tasks = sample.tasks
        stem = f"s{i:04d}"
        write_sample(out_dir, stem, sample)
        stems.append(stem)
    write_manifest(out_dir, tasks, thin, stems)
    return stems
