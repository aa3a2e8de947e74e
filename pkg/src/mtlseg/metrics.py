"""Segmentation F1/IoU and distance-tolerant thin-structure detection.

Detection treats a predicted skeleton pixel as correct when it lies within
Euclidean distance ``d`` of any ground-truth pixel (and symmetrically for
misses), using an exact two-pass squared-distance transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .synth import dilate_mask
from .tiling import infer_full, skeletonize


def _dt1d_squared(costs: np.ndarray) -> np.ndarray:
    """Lower envelope of parabolas: exact 1D squared distance transform."""
    n = costs.shape[0]
    out = np.empty(n)
    hull = np.zeros(n, dtype=np.int64)
    bounds = np.empty(n + 1)
    k = 0
    bounds[0], bounds[1] = -np.inf, np.inf
    for q in range(1, n):
        s = ((costs[q] + q * q) - (costs[hull[k]] + hull[k] * hull[k])) / (2 * q - 2 * hull[k])
        while s <= bounds[k]:
            k -= 1
            s = ((costs[q] + q * q) - (costs[hull[k]] + hull[k] * hull[k])) / (2 * q - 2 * hull[k])
        k += 1
        hull[k] = q
        bounds[k] = s
        bounds[k + 1] = np.inf
    k = 0
    for q in range(n):
        while bounds[k + 1] < q:
            k += 1
        out[q] = (q - hull[k]) ** 2 + costs[hull[k]]
    return out


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance from every pixel to the nearest set pixel."""
    src = np.asarray(mask, dtype=bool)
    h, w = src.shape
    if not src.any():
        return np.full((h, w), np.inf)
    big = float(h * h + w * w + 1)
    cost = np.where(src, 0.0, big)
    for c in range(w):
        cost[:, c] = _dt1d_squared(cost[:, c])
    for r in range(h):
        cost[r, :] = _dt1d_squared(cost[r, :])
    return np.sqrt(cost)


@dataclass
class SegScores:
    precision: float
    recall: float
    f1: float
    iou: float
    tp: int
    fp: int
    fn: int
    empty_pair: bool = False


def _seg_scores(tp: int, fp: int, fn: int) -> SegScores:
    if tp + fp + fn == 0:
        # Empty prediction against empty truth: perfect agreement, flagged.
        return SegScores(1.0, 1.0, 1.0, 1.0, 0, 0, 0, empty_pair=True)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SegScores(precision, recall, f1, tp / (tp + fp + fn), tp, fp, fn)


def seg_counts(pred, gt, cls) -> tuple[int, int, int]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    p = pred == cls
    g = gt == cls
    tp = int((p & g).sum())
    return tp, int(p.sum()) - tp, int(g.sum()) - tp


def seg_metrics(pred, gt, cls) -> SegScores:
    return _seg_scores(*seg_counts(pred, gt, cls))


@dataclass
class DetectionScores:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    pred_pixels: int
    gt_pixels: int
    degenerate: bool = False  # an empty side forced a 0 (or perfect) report


def detection_counts(pred_skel, gt_skel, distance: float) -> tuple[int, int, int]:
    pred = np.asarray(pred_skel, dtype=bool)
    gt = np.asarray(gt_skel, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    npred = int(pred.sum())
    ngt = int(gt.sum())
    tp = int((pred & (distance_transform(gt) <= distance)).sum()) if npred and ngt else 0
    fp = npred - tp
    fn = int((gt & (distance_transform(pred) > distance)).sum()) if ngt else 0
    return tp, fp, fn


def _detection_scores(tp, fp, fn, npred, ngt) -> DetectionScores:
    if npred == 0 and ngt == 0:
        return DetectionScores(1.0, 1.0, 1.0, 0, 0, 0, 0, 0, degenerate=True)
    precision = tp / npred if npred else 0.0
    recall = (ngt - fn) / ngt if ngt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DetectionScores(precision, recall, f1, tp, fp, fn, npred, ngt, degenerate=(npred == 0 or ngt == 0))


def detection_f1(pred_skel, gt_skel, distance: float = 3.0) -> DetectionScores:
    tp, fp, fn = detection_counts(pred_skel, gt_skel, distance)
    return _detection_scores(tp, fp, fn, int(np.asarray(pred_skel, dtype=bool).sum()), int(np.asarray(gt_skel, dtype=bool).sum()))


@dataclass
class MetricsReport:
    tasks: tuple[str, ...]
    thin: tuple[bool, ...]
    distance: float
    seg_raw: dict[str, SegScores]
    seg_dilated: dict[str, SegScores]
    detection: dict[str, DetectionScores]

    def lines(self) -> list[str]:
        out = []
        for t, scores in self.seg_raw.items():
            out.extend(_score_lines(f"{t}.raw", scores))
        for t, scores in self.seg_dilated.items():
            out.extend(_score_lines(f"{t}.dilated", scores))
        for t, s in self.detection.items():
            prefix = f"{t}.detection"
            out.append(f"{prefix}.distance={self.distance:g}")
            out.append(f"{prefix}.precision={s.precision:.6f}")
            out.append(f"{prefix}.recall={s.recall:.6f}")
            out.append(f"{prefix}.f1={s.f1:.6f}")
            out.append(f"{prefix}.degenerate={int(s.degenerate)}")
        return out

    def tsv_header(self) -> str:
        cols = []
        for t in self.tasks:
            variants = ["raw"] + (["dilated", "det"] if t in self.detection else [])
            for v in variants:
                if v == "det":
                    cols.append(f"{t}.det_f1")
                else:
                    cols.extend([f"{t}.{v}.f1", f"{t}.{v}.iou"])
        return "\t".join(cols)

    def tsv_row(self) -> str:
        cols = []
        for t in self.tasks:
            cols.extend([f"{self.seg_raw[t].f1:.4f}", f"{self.seg_raw[t].iou:.4f}"])
            if t in self.seg_dilated:
                cols.extend([f"{self.seg_dilated[t].f1:.4f}", f"{self.seg_dilated[t].iou:.4f}"])
            if t in self.detection:
                cols.append(f"{self.detection[t].f1:.4f}")
        return "\t".join(cols)


def evaluate_dataset(
    model,
    dataset,
    mode: str = "direct",
    distance: float = 3.0,
    dilate_element: int = 6,
    patch: int | None = None,
) -> MetricsReport:
    """Micro-averaged metrics over a dataset.

    Thin classes are scored three ways: against the raw 1-px truth, against
    the dilated truth (matching how they were trained), and with the
    distance-tolerant detection F1 on skeletonized predictions.
    """
    if len(dataset) == 0:
        raise DimensionError("dataset is empty")
    if mode not in ("direct", "tiled"):
        raise DimensionError(f"unknown evaluation mode '{mode}'")
    tasks = dataset.tasks
    raw = {t: np.zeros(3, dtype=np.int64) for t in tasks}
    dil = {t: np.zeros(3, dtype=np.int64) for t, is_thin in zip(tasks, dataset.thin) if is_thin}
    det = {t: np.zeros(5, dtype=np.int64) for t, is_thin in zip(tasks, dataset.thin) if is_thin}

    for sample in dataset.samples():
        if mode == "direct":
            masks = model.predict(sample.image)
            skels = None
        else:
            merged, skels = infer_full(sample.image, model, patch or min(sample.image.shape[:2]))
            masks = [(merged == k).astype(np.uint8) for k in range(1, len(tasks) + 1)]
        for t_idx, (name, is_thin) in enumerate(zip(tasks, dataset.thin)):
            pred = masks[t_idx]
            gt = sample.masks[t_idx]
            raw[name] += seg_counts(pred, gt, 1)
            if is_thin:
                dil[name] += seg_counts(pred, dilate_mask(gt, dilate_element), 1)
                skel = skels[t_idx] if skels is not None else skeletonize(pred)
                tp, fp, fn = detection_counts(skel, gt, distance)
                det[name] += (tp, fp, fn, int(skel.sum()), int(gt.sum()))

    return MetricsReport(
        tasks=tasks,
        thin=dataset.thin,
        distance=distance,
        seg_raw={t: _seg_scores(*raw[t]) for t in tasks},
        seg_dilated={t: _seg_scores(*c) for t, c in dil.items()},
        detection={t: _detection_scores(c[0], c[1], c[2], c[3], c[4]) for t, c in det.items()},
    )


def _score_lines(prefix: str, s: SegScores) -> list[str]:
    return [
        f"{prefix}.precision={s.precision:.6f}",
        f"{prefix}.recall={s.recall:.6f}",
        f"{prefix}.f1={s.f1:.6f}",
        f"{prefix}.iou={s.iou:.6f}",
        f"{prefix}.tp={s.tp}",
        f"{prefix}.fp={s.fp}",
        f"{prefix}.fn={s.fn}",
        f"{prefix}.empty_pair={int(s.empty_pair)}",
    ]
