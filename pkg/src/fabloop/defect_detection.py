"""Layer-image defect detection.

Images are 2-D ``uint8`` numpy arrays indexed ``[v, u]``; binary masks are
``bool`` arrays of the same shape with ``True`` marking defect candidates.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .vision_geometry import BedMapping, BedPoint, Homography, PixelPoint, pixel_to_bed, rectify

log = logging.getLogger(__name__)


class Polarity(str, enum.Enum):
    DEFECTS_DARK = "dark"
    DEFECTS_BRIGHT = "bright"


class Connectivity(enum.IntEnum):
    FOUR = 4
    EIGHT = 8


@dataclass(frozen=True)
class DetectConfig:
    polarity: Polarity = Polarity.DEFECTS_DARK
    min_area_px: int = 1
    connectivity: Connectivity = Connectivity.EIGHT
    # drop components touching the ROI edge (bare bed around the part)
    exclude_border: bool = True

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        object.__setattr__(self, "connectivity", Connectivity(self.connectivity))
        if self.min_area_px < 1:
            raise ValueError("min_area_px must be >= 1")


@dataclass(frozen=True)
class DefectRegion:
    centroid_px: PixelPoint
    area_px: int
    bbox: tuple[int, int, int, int]  # min_u, min_v, max_u, max_v (inclusive)
    centroid_mm: Optional[BedPoint] = None
    equivalent_diameter_mm: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "area_px": self.area_px,
            "bbox": list(self.bbox),
            "centroid_mm": None if self.centroid_mm is None else list(self.centroid_mm),
            "centroid_px": list(self.centroid_px),
            "equivalent_diameter_mm": self.equivalent_diameter_mm,
        }


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255) or np.any(arr != np.round(arr)):
            raise ValueError("intensities must be integers in 0..255")
        arr = arr.astype(np.uint8)
    return arr


def enhance_contrast(img) -> np.ndarray:
    """Linear min-max stretch to 0..255, rounding half up (exact integer maths)."""
    src = as_gray(img)
    lo, hi = int(src.min()), int(src.max())
    if lo == hi:
        return src.copy()
    span = hi - lo
    x = src.astype(np.int64) - lo
    return ((510 * x + span) // (2 * span)).astype(np.uint8)


def otsu_threshold(hist) -> Optional[int]:
    """Lowest threshold maximising between-class variance, or None if unimodal.

    Class 0 is ``intensity <= t``.  The criterion is compared as exact
    rationals, ``(N*S_t - T*n_t)^2 / (n_t * (N - n_t))``, so ties resolve
    deterministically to the lowest ``t``.
    """
    counts = [int(c) for c in hist]
    total_n = sum(counts)
    total_s = sum(i * c for i, c in enumerate(counts))
    best_t = None
    best_num, best_den = 0, 1
    n_t = s_t = 0
    for t, c in enumerate(counts):
        n_t += c
        s_t += t * c
        if n_t == 0 or n_t == total_n:
            continue
        num = (total_n * s_t - total_s * n_t) ** 2
        den = n_t * (total_n - n_t)
        if num * best_den > best_num * den:
            best_num, best_den, best_t = num, den, t
    return best_t


def threshold(img, cfg: DetectConfig = DetectConfig()) -> np.ndarray:
    src = as_gray(img)
    hist = np.bincount(src.ravel(), minlength=256)
    t = otsu_threshold(hist)
    if t is None:
        log.debug("unimodal histogram; returning empty mask")
        return np.zeros(src.shape, dtype=bool)
    if cfg.polarity is Polarity.DEFECTS_DARK:
        return src <= t
    return src > t


def _row_runs(row: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) column spans of True pixels."""
    padded = np.concatenate(([False], row, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def _find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def label_runs(mask, connectivity: Connectivity = Connectivity.EIGHT) -> list[list[tuple[int, int, int]]]:
    """Group foreground runs into connected components.

    Returns one list of ``(v, start, stop)`` runs per component, components
    ordered by their first pixel in raster order.
    """
    mask = np.asarray(mask, dtype=bool)
    reach = 1 if Connectivity(connectivity) is Connectivity.EIGHT else 0
    runs: list[tuple[int, int, int]] = []
    parent: list[int] = []
    prev: list[int] = []  # run indices on the previous row
    for v in range(mask.shape[0]):
        cur = []
        j = 0
        for start, stop in _row_runs(mask[v]):
            idx = len(runs)
            runs.append((v, start, stop))
            parent.append(idx)
            cur.append(idx)
            # previous-row runs are sorted and disjoint; skip those ending too early
            while j < len(prev) and runs[prev[j]][2] + reach <= start:
                j += 1
            k = j
            while k < len(prev) and runs[prev[k]][1] < stop + reach:
                ra, rb = _find(parent, idx), _find(parent, prev[k])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
                k += 1
        prev = cur

    groups: dict[int, list[tuple[int, int, int]]] = {}
    for idx, run in enumerate(runs):
        groups.setdefault(_find(parent, idx), []).append(run)
    return [groups[root] for root in sorted(groups)]


def segment(binary, cfg: DetectConfig = DetectConfig()) -> list[DefectRegion]:
    """Connected components of ``binary`` with pixel-frame statistics."""
    regions = []
    for runs in label_runs(binary, cfg.connectivity):
        area = sum_u = sum_v = 0
        min_u = min_v = math.inf
        max_u = max_v = -1
        for v, start, stop in runs:
            n = stop - start
            area += n
            sum_u += (start + stop - 1) * n // 2
            sum_v += v * n
            min_u, max_u = min(min_u, start), max(max_u, stop - 1)
            min_v, max_v = min(min_v, v), max(max_v, v)
        if area < cfg.min_area_px:
            continue
        regions.append(
            DefectRegion(
                centroid_px=PixelPoint(sum_u / area, sum_v / area),
                area_px=area,
                bbox=(int(min_u), int(min_v), int(max_u), int(max_v)),
            )
        )
    return regions


def quantify(regions, m: BedMapping) -> list[DefectRegion]:
    """Attach bed-frame centroid and equivalent diameter; sort by x then y."""
    out = [
        replace(
            r,
            centroid_mm=pixel_to_bed(r.centroid_px, m),
            equivalent_diameter_mm=2.0 * math.sqrt(r.area_px / math.pi) * m.mm_per_pixel,
        )
        for r in regions
    ]
    out.sort(key=lambda r: (r.centroid_mm.x, r.centroid_mm.y))
    return out


@dataclass(frozen=True)
class DetectionArtifacts:
    """Intermediate images of one ``detect`` run (for dumps and overlays)."""

    rectified: np.ndarray
    roi: np.ndarray
    enhanced: np.ndarray
    mask: np.ndarray
    regions: list


def detect(raw, h: Homography, m: BedMapping, cfg: DetectConfig = DetectConfig()) -> list[DefectRegion]:
    return detect_with_artifacts(raw, h, m, cfg).regions


def detect_with_artifacts(raw, h: Homography, m: BedMapping, cfg: DetectConfig = DetectConfig()) -> DetectionArtifacts:
    rectified = rectify(as_gray(raw), h, m.frame_size)
    rows, cols = m.roi_slices
    roi = rectified[rows, cols]
    enhanced = enhance_contrast(roi)
    mask = threshold(enhanced, cfg)

    du, dv = int(m.roi_origin.u), int(m.roi_origin.v)
    last = m.roi_size - 1
    shifted = []
    for r in segment(mask, cfg):
        min_u, min_v, max_u, max_v = r.bbox
        if cfg.exclude_border and (min_u == 0 or min_v == 0 or max_u == last or max_v == last):
            continue
        shifted.append(
            DefectRegion(
                centroid_px=PixelPoint(r.centroid_px.u + du, r.centroid_px.v + dv),
                area_px=r.area_px,
                bbox=(min_u + du, min_v + dv, max_u + du, max_v + dv),
            )
        )
    return DetectionArtifacts(rectified, roi, enhanced, mask, quantify(shifted, m))


def draw_overlay(image, regions, value: int = 255) -> np.ndarray:
    """Copy of ``image`` with each region's bounding box outlined."""
    out = as_gray(image).copy()
    h, w = out.shape
    for r in regions:
        u0, v0, u1, v1 = r.bbox
        u0, u1 = max(u0 - 1, 0), min(u1 + 1, w - 1)
        v0, v1 = max(v0 - 1, 0), min(v1 + 1, h - 1)
        out[v0, u0 : u1 + 1] = value
        out[v1, u0 : u1 + 1] = value
        out[v0 : v1 + 1, u0] = value
        out[v0 : v1 + 1, u1] = value
    return out
