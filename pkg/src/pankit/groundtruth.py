"""Ground-truth generation: polygon rasterization, kernel shrinking, ignores.

Text instances come in as polygons (quadrilaterals or curved 14-gon bands).
Each instance gets a full-extent mask plus a "kernel" mask obtained by
eroding the instance mask inward by the offset A*(1 - r^2)/L, where A and L
are the polygon's area and perimeter and r is the shrink ratio. Erosion is
done in the raster domain via the Euclidean distance transform, which is
equivalent to polygon offsetting at pixel resolution and robust for curved
bands. Regions flagged DO-NOT-CARE only populate the ignore mask.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt


class PolygonError(ValueError):
    """Raised for degenerate or self-intersecting polygons."""


class AnnotationError(ValueError):
    """Raised for malformed annotation files."""


@dataclass
class Polygon:
    """Closed polygon in image coordinates, normalized counter-clockwise.

    Vertex order is normalized so the shoelace signed area is positive;
    self-intersecting or zero-area inputs are rejected at construction.
    """

    points: np.ndarray
    ignore: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise PolygonError(f"polygon needs >= 3 (x, y) vertices, got shape "
                               f"{pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise PolygonError("polygon has non-finite coordinates")
        signed = _signed_area(pts)
        if signed < 0:
            pts = pts[::-1].copy()
            signed = -signed
        if signed <= 0:
            raise PolygonError("polygon has zero area")
        if _self_intersects(pts):
            raise PolygonError("polygon is self-intersecting")
        self.points = pts

    @property
    def area(self) -> float:
        return float(_signed_area(self.points))

    @property
    def perimeter(self) -> float:
        closed = np.vstack([self.points, self.points[:1]])
        return float(np.sum(np.linalg.norm(np.diff(closed, axis=0), axis=1)))

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(self.points + np.array([dx, dy], dtype=np.float32),
                       ignore=self.ignore)

    def to_json(self) -> dict:
        return {"points": [[float(x), float(y)] for x, y in self.points],
                "ignore": bool(self.ignore)}

    @classmethod
    def from_json(cls, obj: dict) -> "Polygon":
        return cls(np.asarray(obj["points"], dtype=np.float32),
                   ignore=bool(obj.get("ignore", False)))


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0].astype(np.float64), pts[:, 1].astype(np.float64)
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _self_intersects(pts: np.ndarray) -> bool:
    """O(n^2) proper-intersection test between non-adjacent edges."""
    n = pts.shape[0]
    p = pts.astype(np.float64)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    for i in range(n):
        a1, a2 = p[i], p[(i + 1) % n]
        for j in range(i + 1, n):
            # skip edges sharing a vertex
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = p[j], p[(j + 1) % n]
            d1 = cross(a1, a2, b1)
            d2 = cross(a1, a2, b2)
            d3 = cross(b1, b2, a1)
            d4 = cross(b1, b2, a2)
            if ((d1 > 0) != (d2 > 0.0) and (d3 > 0) != (d4 > 0)
                    and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0):
                return True
    return False


@dataclass
class GroundTruth:
    """Instance/kernel label maps plus the ignore mask, all h x w.

    ``instance_labels`` holds 0 for background and i in 1..n for the i-th
    text instance; ``kernel_labels`` is the same but restricted to the
    shrunken kernels (kernel pixels always carry their instance's label).
    """

    instance_labels: np.ndarray
    kernel_labels: np.ndarray
    ignore_mask: np.ndarray
    n: int

    @property
    def text_mask(self) -> np.ndarray:
        return self.instance_labels > 0

    @property
    def kernel_mask(self) -> np.ndarray:
        return self.kernel_labels > 0


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def rasterize(poly: Polygon, h: int, w: int, scale: float = 1.0) -> np.ndarray:
    """Even-odd scanline fill of a polygon onto an h x w boolean grid.

    Pixel (x, y) is covered when its center (x + 0.5, y + 0.5) falls inside
    the polygon after coordinates are multiplied by ``scale`` (0.25 maps
    image space onto a stride-4 grid).
    """
    return rasterize_points(poly.points, h, w, scale)


def rasterize_points(points: np.ndarray, h: int, w: int,
                     scale: float = 1.0) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64) * scale
    mask = np.zeros((h, w), dtype=bool)
    if pts.shape[0] < 3:
        warnings.warn("degenerate polygon, emitting empty mask")
        return mask
    x1 = pts[:, 0]
    y1 = pts[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)
    y_lo = int(max(0, np.floor(pts[:, 1].min() - 0.5)))
    y_hi = int(min(h - 1, np.ceil(pts[:, 1].max())))
    for row in range(y_lo, y_hi + 1):
        yc = row + 0.5
        # half-open edge rule: an edge covers yc if min(y) <= yc < max(y)
        crossing = ((y1 <= yc) & (yc < y2)) | ((y2 <= yc) & (yc < y1))
        if not crossing.any():
            continue
        t = (yc - y1[crossing]) / (y2[crossing] - y1[crossing])
        xs = np.sort(x1[crossing] + t * (x2[crossing] - x1[crossing]))
        for a, b in zip(xs[0::2], xs[1::2]):
            # pixel x covered iff a <= x + 0.5 < b
            lo = max(0, int(np.ceil(a - 0.5)))
            hi = min(w, int(np.ceil(b - 0.5)))
            if hi > lo:
                mask[row, lo:hi] = True
    return mask


# ---------------------------------------------------------------------------
# Kernel shrinking
# ---------------------------------------------------------------------------

def shrink_offset(poly: Polygon, r: float) -> float:
    """Inward offset distance d = A * (1 - r^2) / L for shrink ratio r."""
    if not 0.0 < r <= 1.0:
        raise ValueError(f"shrink ratio must be in (0, 1], got {r}")
    perimeter = poly.perimeter
    if perimeter <= 0.0:
        raise ValueError("polygon has zero perimeter")
    return poly.area * (1.0 - r * r) / perimeter


def shrink_mask(mask: np.ndarray, d: float) -> np.ndarray:
    """Erode a binary mask inward by d pixels (Euclidean distance transform)."""
    if d < 0:
        raise ValueError(f"shrink distance must be >= 0, got {d}")
    if d == 0:
        return mask.copy()
    if not mask.any():
        return np.zeros_like(mask)
    return distance_transform_edt(mask) > d


# ---------------------------------------------------------------------------
# Scene -> ground truth
# ---------------------------------------------------------------------------

def make_ground_truth(polygons, h: int, w: int, r: float = 0.7,
                      stride: int = 1) -> GroundTruth:
    """Compose per-instance masks and kernels on an (h/stride, w/stride) grid.

    Later-drawn instances win overlapping text pixels. Instances whose
    kernel erodes to nothing (or is wholly overwritten) are demoted to the
    ignore mask, so every surviving label 1..n owns at least one kernel
    pixel. DO-NOT-CARE polygons fill the ignore mask only.
    """
    if h % stride or w % stride:
        raise ValueError(f"canvas {w}x{h} not divisible by stride {stride}")
    gh, gw = h // stride, w // stride
    scale = 1.0 / stride
    instance = np.zeros((gh, gw), dtype=np.int32)
    ignore = np.zeros((gh, gw), dtype=bool)

    drawn = []  # (tentative id, polygon, full mask)
    tid = 0
    for poly in polygons:
        m = rasterize(poly, gh, gw, scale)
        if poly.ignore:
            ignore |= m
            continue
        tid += 1
        instance[m] = tid
        drawn.append((tid, poly, m))

    kernels = {}
    for inst_id, poly, m in drawn:
        d_grid = shrink_offset(poly, r) * scale
        km = shrink_mask(m, d_grid) & (instance == inst_id)
        if km.any():
            kernels[inst_id] = km
        else:
            owned = instance == inst_id
            ignore |= owned
            instance[owned] = 0

    # compact ids so labels run 1..n with every id owning a kernel
    instance_out = np.zeros_like(instance)
    kernel_out = np.zeros_like(instance)
    new_id = 0
    for inst_id, _, _ in drawn:
        if inst_id not in kernels:
            continue
        new_id += 1
        instance_out[instance == inst_id] = new_id
        kernel_out[kernels[inst_id]] = new_id
    return GroundTruth(instance_out, kernel_out, ignore, new_id)


# ---------------------------------------------------------------------------
# Annotation formats
# ---------------------------------------------------------------------------

def load_ctw_annotation(path) -> list[Polygon]:
    """One instance per line: comma-separated integer x,y pairs (14 points)."""
    polygons = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals = [int(v) for v in line.split(",")]
            except ValueError as exc:
                raise AnnotationError(f"{path}:{lineno}: non-integer field "
                                      f"({exc})") from None
            if len(vals) < 6 or len(vals) % 2:
                raise AnnotationError(f"{path}:{lineno}: expected an even number "
                                      f"(>= 6) of coordinates, got {len(vals)}")
            pts = np.asarray(vals, dtype=np.float32).reshape(-1, 2)
            try:
                polygons.append(Polygon(pts))
            except PolygonError as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}") from None
    return polygons


def load_json_annotation(path) -> tuple[list[Polygon], int, int]:
    """Native JSON: {"polygons": [{"points", "ignore"}], "width", "height"}."""
    with open(path) as fh:
        obj = json.load(fh)
    try:
        w = int(obj["width"])
        h = int(obj["height"])
        polys = [Polygon.from_json(p) for p in obj["polygons"]]
    except (KeyError, TypeError, PolygonError) as exc:
        raise AnnotationError(f"{path}: {exc}") from None
    return polys, h, w


def save_json_annotation(path, polygons, h: int, w: int, extra: dict | None = None):
    obj = {"width": int(w), "height": int(h),
           "polygons": [p.to_json() for p in polygons]}
    if extra:
        obj.update(extra)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
