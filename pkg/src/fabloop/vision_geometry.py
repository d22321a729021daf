"""Four-corner homographies, image rectification and pixel to bed mapping.

Pixel coordinates are (u right, v down) with the origin at the centre of
the top-left pixel, so pixel ``img[v, u]`` sits at integer ``(u, v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateQuad, NonInvertible, PointAtInfinity

DEFAULT_RECT_SIZE = 400
_DET_EPS = 1e-12
# relative triangle area below which three corners count as collinear
_COLLINEAR_EPS = 1e-9


class PixelPoint(NamedTuple):
    u: float
    v: float


class BedPoint(NamedTuple):
    x: float
    y: float


class Homography:
    """3x3 projective map, stored normalised so that ``h[2, 2] == 1``."""

    __slots__ = ("_h",)

    def __init__(self, h):
        m = np.array(h, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise NonInvertible("homography entries must be finite")
        if m[2, 2] == 0.0:
            raise NonInvertible("h[2][2] is zero; cannot normalise")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _DET_EPS:
            raise NonInvertible(f"homography is singular (det={np.linalg.det(m):.3g})")
        m.flags.writeable = False
        self._h = m

    @property
    def matrix(self) -> np.ndarray:
        return self._h

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, du: float, dv: float) -> "Homography":
        return cls([[1, 0, du], [0, 1, dv], [0, 0, 1]])

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self._h))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self._h @ other._h)

    def __call__(self, p) -> PixelPoint:
        return apply_homography(self, p)

    def tolist(self) -> list[list[float]]:
        return self._h.tolist()

    def __eq__(self, other):
        return isinstance(other, Homography) and np.array_equal(self._h, other._h)

    def __repr__(self):
        return f"Homography({self._h.tolist()!r})"


def _triangle_area2(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _check_points(points, what: str) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.shape != (4, 2) or not np.all(np.isfinite(pts)):
        raise DegenerateQuad(f"{what}: need four finite (u, v) points")
    scale = max(float(np.ptp(pts[:, 0])), float(np.ptp(pts[:, 1])), 1e-300)
    for i in range(4):
        for j in range(i + 1, 4):
            for k in range(j + 1, 4):
                if abs(_triangle_area2(pts[i], pts[j], pts[k])) <= _COLLINEAR_EPS * scale * scale:
                    raise DegenerateQuad(f"{what}: points {i}, {j}, {k} are collinear or repeated")
    return pts


@dataclass(frozen=True)
class CalibrationQuad:
    """Four raw -> rectified corner correspondences.

    Source corners must form a strictly convex quadrilateral listed in a
    consistent winding order; no three target corners may be collinear.
    """

    source: tuple[PixelPoint, ...]
    target: tuple[PixelPoint, ...]

    def __post_init__(self):
        src = _check_points(self.source, "source")
        dst = _check_points(self.target, "target")
        turns = [
            _triangle_area2(src[i], src[(i + 1) % 4], src[(i + 2) % 4]) for i in range(4)
        ]
        if not (all(t > 0 for t in turns) or all(t < 0 for t in turns)):
            raise DegenerateQuad("source corners are not a convex quad in winding order")
        object.__setattr__(self, "source", tuple(PixelPoint(*map(float, p)) for p in src))
        object.__setattr__(self, "target", tuple(PixelPoint(*map(float, p)) for p in dst))

    @classmethod
    def to_square(cls, corners: Sequence, size: int = DEFAULT_RECT_SIZE) -> "CalibrationQuad":
        """Map raw corners (TL, TR, BR, BL) onto the corners of a size x size frame."""
        edge = float(size - 1)
        target = [(0.0, 0.0), (edge, 0.0), (edge, edge), (0.0, edge)]
        return cls(tuple(corners), tuple(target))


@dataclass(frozen=True)
class BedMapping:
    mm_per_pixel: float = 0.67
    roi_origin: PixelPoint = PixelPoint(50.0, 50.0)
    roi_size: int = 300
    frame_size: int = DEFAULT_RECT_SIZE

    def __post_init__(self):
        if not (math.isfinite(self.mm_per_pixel) and self.mm_per_pixel > 0):
            raise ValueError("mm_per_pixel must be > 0")
        origin = PixelPoint(float(self.roi_origin[0]), float(self.roi_origin[1]))
        object.__setattr__(self, "roi_origin", origin)
        if self.roi_size < 1:
            raise ValueError("roi_size must be >= 1")
        if not (origin.u.is_integer() and origin.v.is_integer()):
            raise ValueError("roi_origin must lie on whole pixels")
        if origin.u < 0 or origin.v < 0 or max(origin) + self.roi_size > self.frame_size:
            raise ValueError("ROI does not fit inside the rectified frame")

    @property
    def roi_slices(self) -> tuple[slice, slice]:
        u0, v0 = int(self.roi_origin.u), int(self.roi_origin.v)
        return slice(v0, v0 + self.roi_size), slice(u0, u0 + self.roi_size)


def estimate_homography(quad: CalibrationQuad) -> Homography:
    """Exact homography through four correspondences.

    Points are conditioned (centred, scaled to mean distance sqrt 2) before
    the 8x8 direct linear system is solved with ``h22`` pinned to 1.
    """
    src = np.asarray(quad.source, dtype=float)
    dst = np.asarray(quad.target, dtype=float)
    t_src, t_dst = _conditioner(src), _conditioner(dst)
    s = _apply_matrix(t_src, src)
    d = _apply_matrix(t_dst, dst)

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (xp, yp)) in enumerate(zip(s, d)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -x * xp, -y * xp]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -x * yp, -y * yp]
        b[2 * i], b[2 * i + 1] = xp, yp
    try:
        sol = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateQuad(f"correspondences do not determine a homography: {exc}") from exc
    if not np.all(np.isfinite(sol)) or np.linalg.cond(a) > 1e12:
        raise DegenerateQuad("correspondence system is numerically singular")

    hn = np.append(sol, 1.0).reshape(3, 3)
    try:
        return Homography(np.linalg.inv(t_dst) @ hn @ t_src)
    except NonInvertible as exc:
        raise DegenerateQuad(str(exc)) from exc


def _conditioner(pts: np.ndarray) -> np.ndarray:
    centre = pts.mean(axis=0)
    spread = np.mean(np.hypot(*(pts - centre).T))
    scale = math.sqrt(2.0) / spread
    return np.array([[scale, 0, -scale * centre[0]], [0, scale, -scale * centre[1]], [0, 0, 1]])


def _apply_matrix(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    hom = np.column_stack([pts, np.ones(len(pts))]) @ m.T
    return hom[:, :2] / hom[:, 2:]


def apply_homography(h: Homography, p) -> PixelPoint:
    m = h.matrix
    u, v = float(p[0]), float(p[1])
    w = m[2, 0] * u + m[2, 1] * v + m[2, 2]
    if w == 0.0:
        raise PointAtInfinity(f"({u}, {v}) maps to infinity")
    return PixelPoint(
        (m[0, 0] * u + m[0, 1] * v + m[0, 2]) / w,
        (m[1, 0] * u + m[1, 1] * v + m[1, 2]) / w,
    )


def rectify(image: np.ndarray, h: Homography, out_size=DEFAULT_RECT_SIZE, background: int = 0) -> np.ndarray:
    """Warp ``image`` through ``h`` into an ``out_size`` frame.

    Each output pixel samples the source at ``h^-1`` of its own coordinates
    with bilinear interpolation.  Samples falling outside the source take
    ``background``.  ``out_size`` is an int (square) or ``(width, height)``.
    """
    src = np.asarray(image)
    if src.ndim != 2:
        raise ValueError("rectify expects a 2-D grayscale image")
    if isinstance(out_size, (int, np.integer)):
        out_w = out_h = int(out_size)
    else:
        out_w, out_h = (int(s) for s in out_size)
    try:
        inv = np.linalg.inv(h.matrix)
    except np.linalg.LinAlgError as exc:
        raise NonInvertible(str(exc)) from exc

    vv, uu = np.mgrid[0:out_h, 0:out_w].astype(float)
    w = inv[2, 0] * uu + inv[2, 1] * vv + inv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        su = (inv[0, 0] * uu + inv[0, 1] * vv + inv[0, 2]) / w
        sv = (inv[1, 0] * uu + inv[1, 1] * vv + inv[1, 2]) / w

    src_h, src_w = src.shape
    # snap round-off at the border back onto the last row/column
    edge = 1e-9
    su = np.where(np.abs(su - np.round(su)) < edge, np.round(su), su)
    sv = np.where(np.abs(sv - np.round(sv)) < edge, np.round(sv), sv)
    inside = (w != 0) & (su >= 0) & (sv >= 0) & (su <= src_w - 1) & (sv <= src_h - 1)

    su = np.where(inside, su, 0.0)
    sv = np.where(inside, sv, 0.0)
    u0 = np.floor(su).astype(np.intp)
    v0 = np.floor(sv).astype(np.intp)
    fu = su - u0
    fv = sv - v0
    u1 = np.minimum(u0 + 1, src_w - 1)
    v1 = np.minimum(v0 + 1, src_h - 1)

    f = src.astype(float)
    top = f[v0, u0] * (1.0 - fu) + f[v0, u1] * fu
    bottom = f[v1, u0] * (1.0 - fu) + f[v1, u1] * fu
    value = top * (1.0 - fv) + bottom * fv

    out = np.floor(value + 0.5)
    out = np.where(inside, out, background)
    return np.clip(out, 0, 255).astype(np.uint8)


def pixel_to_bed(p, m: BedMapping) -> BedPoint:
    return BedPoint(
        (float(p[0]) - m.roi_origin.u) * m.mm_per_pixel,
        (float(p[1]) - m.roi_origin.v) * m.mm_per_pixel,
    )


def bed_to_pixel(p, m: BedMapping) -> PixelPoint:
    return PixelPoint(
        float(p[0]) / m.mm_per_pixel + m.roi_origin.u,
        float(p[1]) / m.mm_per_pixel + m.roi_origin.v,
    )
