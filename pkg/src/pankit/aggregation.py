"""Similarity-guided post-processing: from prediction maps to instances.

Pipeline: threshold the maps, label connected components of the kernel
mask (these seed the instances), then grow each kernel over the text mask
with a multi-source breadth-first search. A text pixel joins the instance
whose front reaches it first, and only if its similarity vector lies
within distance ``d`` of that kernel's mean vector (the mean is computed
once from kernel pixels and frozen during growth). Surviving pixel groups
become :class:`TextInstance` objects with a traced boundary polygon and an
optional minimum-area rotated rectangle.

``aggregate_oracle`` re-implements the growth as a naive generation-by-
generation fixed-point simulation in pure Python; it is the reference
semantics the fast path is tested against (exact label-map equality).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _fast

NEIGHBORS_4 = _fast.NEIGHBORS_4


@dataclass(frozen=True)
class PAConfig:
    d: float = 6.0
    text_thresh: float = 0.5
    kernel_thresh: float = 0.5
    min_area: int = 16
    min_score: float = 0.85
    connectivity: int = 4

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError(f"distance threshold must be positive, got {self.d}")
        if not (0 < self.text_thresh < 1 and 0 < self.kernel_thresh < 1):
            raise ValueError("thresholds must lie in (0, 1)")
        if self.min_area < 1:
            raise ValueError(f"min_area must be >= 1, got {self.min_area}")
        if self.connectivity != 4:
            raise ValueError("only 4-connectivity is supported")


@dataclass(frozen=True)
class RotatedRect:
    cx: float
    cy: float
    w: float
    h: float
    angle_deg: float

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_json(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h,
                "angle_deg": self.angle_deg}


@dataclass
class TextInstance:
    pixels: np.ndarray          # (n, 2) int32 rows/cols on the map grid
    score: float
    polygon: np.ndarray         # (m, 2) float, x/y in image coordinates
    rect: RotatedRect | None = None

    def to_json(self) -> dict:
        return {
            "polygon": [[float(x), float(y)] for x, y in self.polygon],
            "rect": self.rect.to_json() if self.rect else None,
            "score": float(self.score),
        }


# ---------------------------------------------------------------------------
# Thresholding and component labeling
# ---------------------------------------------------------------------------

def binarize(p_tex, p_ker, cfg: PAConfig = PAConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Strict thresholding; kernel pixels must also be text pixels."""
    text_bin = np.asarray(p_tex) > cfg.text_thresh
    kernel_bin = (np.asarray(p_ker) > cfg.kernel_thresh) & text_bin
    return text_bin, kernel_bin


def connected_components(mask: np.ndarray, connectivity: int = 4,
                         ) -> tuple[np.ndarray, int]:
    """4-way component labeling, labels 1..n in raster discovery order."""
    if connectivity != 4:
        raise ValueError("only 4-connectivity is supported")
    labels, count = _fast.label_components(np.ascontiguousarray(mask, dtype=np.bool_))
    return labels, int(count)


# ---------------------------------------------------------------------------
# Region growing
# ---------------------------------------------------------------------------

def aggregate(text_bin: np.ndarray, kernel_labels: np.ndarray, sim: np.ndarray,
              d: float) -> np.ndarray:
    """Grow kernel labels over the text mask (see module docstring).

    ``d`` may be ``inf`` to disable the similarity gate, in which case the
    result is plain first-come connected growth from the kernels.
    """
    text = np.ascontiguousarray(text_bin, dtype=np.bool_)
    klab = np.ascontiguousarray(kernel_labels, dtype=np.int32)
    if ((klab > 0) & ~text).any():
        raise ValueError("kernel pixels must be a subset of the text mask")
    simf = np.ascontiguousarray(sim, dtype=np.float64)
    n = int(klab.max())
    if n == 0:
        return np.zeros_like(klab)
    means = _fast.kernel_centers(klab, simf, n)
    return _fast.grow_labels(text, klab, simf, means, float(d) * float(d))


def aggregate_oracle(text_bin: np.ndarray, kernel_labels: np.ndarray,
                     sim: np.ndarray, d: float) -> np.ndarray:
    """Reference growth: explicit frontier generations, full rescans.

    Deliberately naive (pure Python, no precomputation beyond the kernel
    means); defines the semantics the fast path must match exactly,
    including label identities under first-come conflicts.
    """
    text = np.asarray(text_bin, dtype=bool)
    klab = np.asarray(kernel_labels, dtype=np.int64)
    simf = np.asarray(sim, dtype=np.float64)
    h, w = text.shape
    if ((klab > 0) & ~text).any():
        raise ValueError("kernel pixels must be a subset of the text mask")
    n = int(klab.max())
    labels = np.zeros((h, w), dtype=np.int32)
    if n == 0:
        return labels

    sums = [[0.0, 0.0, 0.0, 0.0] for _ in range(n)]
    counts = [0] * n
    frontier = []
    for y in range(h):
        for x in range(w):
            k = int(klab[y, x])
            if k > 0:
                for c in range(4):
                    sums[k - 1][c] += float(simf[c, y, x])
                counts[k - 1] += 1
                labels[y, x] = k
                frontier.append((y, x))
    means = [[s / cnt for s in row] if cnt else [0.0] * 4
             for row, cnt in zip(sums, counts)]

    d2 = float(d) * float(d)
    while frontier:
        nxt = []
        for (y, x) in frontier:
            center = means[labels[y, x] - 1]
            for dy, dx in NEIGHBORS_4:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and text[ny, nx] \
                        and labels[ny, nx] == 0:
                    acc = 0.0
                    for c in range(4):
                        dv = float(simf[c, ny, nx]) - center[c]
                        acc += dv * dv
                    if acc < d2:
                        labels[ny, nx] = labels[y, x]
                        nxt.append((ny, nx))
        frontier = nxt
    return labels


# ---------------------------------------------------------------------------
# Instance extraction
# ---------------------------------------------------------------------------

def extract_instances(labels: np.ndarray, p_tex: np.ndarray,
                      cfg: PAConfig = PAConfig(), scale: float = 4.0,
                      fit_rect: bool = True) -> list[TextInstance]:
    """Group labeled pixels, filter small/low-confidence groups, fit geometry.

    Filtering only drops whole groups; surviving pixel sets are untouched.
    Polygons and rectangles are emitted in image coordinates (map coords
    times ``scale``).
    """
    tex = np.asarray(p_tex, dtype=np.float64)
    out = []
    for lab in range(1, int(labels.max()) + 1):
        mask = labels == lab
        count = int(mask.sum())
        if count == 0 or count < cfg.min_area:
            continue
        score = float(tex[mask].mean())
        if score < cfg.min_score:
            continue
        polygon = trace_contour(mask, scale=scale)
        rect = None
        if fit_rect:
            rect = min_area_rect(_hull_candidate_centers(mask) * scale)
        pixels = np.argwhere(mask).astype(np.int32)
        out.append(TextInstance(pixels=pixels, score=score, polygon=polygon,
                                rect=rect))
    return out


def _hull_candidate_centers(mask: np.ndarray) -> np.ndarray:
    """Row-wise extremal pixel centers; enough to determine the hull."""
    pts = []
    for y in np.nonzero(mask.any(axis=1))[0]:
        xs = np.nonzero(mask[y])[0]
        pts.append((xs[0] + 0.5, y + 0.5))
        if xs[-1] != xs[0]:
            pts.append((xs[-1] + 0.5, y + 0.5))
    return np.asarray(pts, dtype=np.float64)


# ---------------------------------------------------------------------------
# Geometry fitting
# ---------------------------------------------------------------------------

def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull; collinear boundary points are dropped."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if pts.shape[0] <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2:
                o, a = chain[-2], chain[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    return np.asarray(lower[:-1] + upper[:-1])


def min_area_rect(points: np.ndarray) -> RotatedRect:
    """Minimum-area enclosing rectangle via rotating calipers.

    Only hull edge orientations can be optimal, so the search scans them.
    The reported angle is folded into [0, 90) degrees; ``w`` is the extent
    along that direction. Degenerate inputs give zero-area rectangles.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("need at least one point")
    hull = convex_hull(pts)
    if hull.shape[0] == 1:
        return RotatedRect(float(hull[0, 0]), float(hull[0, 1]), 0.0, 0.0, 0.0)
    best = None
    m = hull.shape[0]
    for i in range(m if m > 2 else 1):
        edge = hull[(i + 1) % m] - hull[i]
        norm = math.hypot(edge[0], edge[1])
        if norm == 0.0:
            continue
        theta = math.atan2(edge[1], edge[0]) % (math.pi / 2)
        u = np.array([math.cos(theta), math.sin(theta)])
        v = np.array([-u[1], u[0]])
        pu = hull @ u
        pv = hull @ v
        extent_u = pu.max() - pu.min()
        extent_v = pv.max() - pv.min()
        area = extent_u * extent_v
        if best is None or area < best[0] - 1e-12:
            cu = 0.5 * (pu.max() + pu.min())
            cv = 0.5 * (pv.max() + pv.min())
            center = cu * u + cv * v
            best = (area, center, extent_u, extent_v, math.degrees(theta))
    _, center, ew, eh, angle = best
    return RotatedRect(float(center[0]), float(center[1]), float(ew), float(eh),
                       float(angle))


# ---------------------------------------------------------------------------
# Contour tracing
# ---------------------------------------------------------------------------

_RIGHT_TURN = {(1, 0): (0, 1), (0, 1): (-1, 0), (-1, 0): (0, -1), (0, -1): (1, 0)}
_LEFT_TURN = {v: k for k, v in _RIGHT_TURN.items()}


def trace_contour(mask: np.ndarray, scale: float = 1.0,
                  max_deviation: float = 0.5) -> np.ndarray:
    """Trace the outer boundary of a 4-connected pixel set, clockwise.

    Follows the lattice edges between set and non-set pixels (interior kept
    on the right of the walk), so every pixel center lies strictly inside
    the returned polygon; interior holes are ignored (filled). Vertices are
    then decimated, removing points that deviate less than
    ``max_deviation`` pixels from the simplified boundary. Output is (m, 2)
    x/y coordinates multiplied by ``scale``.
    """
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise ValueError("cannot trace an empty pixel set")
    h, w = mask.shape

    # directed boundary edges, interior on the right (clockwise on screen)
    outgoing: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add_edge(x0, y0, x1, y1):
        outgoing.setdefault((x0, y0), []).append((x1, y1))

    for y, x in zip(ys, xs):
        if y == 0 or not mask[y - 1, x]:
            add_edge(x, y, x + 1, y)          # top, heading +x
        if y == h - 1 or not mask[y + 1, x]:
            add_edge(x + 1, y + 1, x, y + 1)  # bottom, heading -x
        if x == 0 or not mask[y, x - 1]:
            add_edge(x, y + 1, x, y)          # left, heading -y
        if x == w - 1 or not mask[y, x + 1]:
            add_edge(x + 1, y, x + 1, y + 1)  # right, heading +y

    # start on the top edge of the first set pixel in raster order
    first = np.lexsort((xs, ys))[0]
    start = (int(xs[first]), int(ys[first]))
    direction = (1, 0)

    corners = [start]
    pos = (start[0] + 1, start[1])
    prev_dir = direction
    guard = 4 * (h + 1) * (w + 1)
    while pos != start and guard > 0:
        guard -= 1
        cands = outgoing.get(pos, ())
        nxt = None
        # tightest clockwise continuation: right turn, straight, left turn
        for want in (_RIGHT_TURN[prev_dir], prev_dir, _LEFT_TURN[prev_dir]):
            target = (pos[0] + want[0], pos[1] + want[1])
            if target in cands:
                nxt = target
                break
        if nxt is None:
            raise RuntimeError("open boundary; input was not 4-connected")
        new_dir = (nxt[0] - pos[0], nxt[1] - pos[1])
        if new_dir != prev_dir:
            corners.append(pos)
            prev_dir = new_dir
        pos = nxt
    ring = np.asarray(corners, dtype=np.float64)
    ring = _decimate_ring(ring, max_deviation)
    return ring * scale


def _decimate_ring(ring: np.ndarray, eps: float) -> np.ndarray:
    if ring.shape[0] <= 4:
        return ring
    # anchor at two mutually distant vertices, simplify both halves
    i0 = int(np.lexsort((ring[:, 1], ring[:, 0]))[0])
    rolled = np.roll(ring, -i0, axis=0)
    i1 = int(np.argmax(np.sum((rolled - rolled[0]) ** 2, axis=1)))
    a = _douglas_peucker(rolled[:i1 + 1], eps)
    b = _douglas_peucker(np.vstack([rolled[i1:], rolled[:1]]), eps)
    return np.vstack([a[:-1], b[:-1]])


def _douglas_peucker(chain: np.ndarray, eps: float) -> np.ndarray:
    if chain.shape[0] <= 2:
        return chain
    p0, p1 = chain[0], chain[-1]
    seg = p1 - p0
    seg_len = math.hypot(seg[0], seg[1])
    rel = chain[1:-1] - p0
    if seg_len == 0.0:
        dist = np.sqrt(np.sum(rel ** 2, axis=1))
    else:
        dist = np.abs(rel[:, 0] * seg[1] - rel[:, 1] * seg[0]) / seg_len
    imax = int(np.argmax(dist))
    # keep a vertex once its deviation reaches eps, drop strictly-below
    if dist[imax] >= eps:
        left = _douglas_peucker(chain[:imax + 2], eps)
        right = _douglas_peucker(chain[imax + 1:], eps)
        return np.vstack([left[:-1], right])
    return np.vstack([chain[:1], chain[-1:]])


# ---------------------------------------------------------------------------
# Whole pipeline
# ---------------------------------------------------------------------------

def postprocess(p_tex, p_ker, sim, cfg: PAConfig = PAConfig(),
                scale: float = 4.0, fit_rect: bool = True,
                ) -> list[TextInstance]:
    """binarize -> label kernels -> grow -> extract, in one call."""
    text_bin, kernel_bin = binarize(p_tex, p_ker, cfg)
    kernel_labels, n = connected_components(kernel_bin, cfg.connectivity)
    if n == 0:
        return []
    labels = aggregate(text_bin, kernel_labels, sim, cfg.d)
    return extract_instances(labels, p_tex, cfg, scale=scale, fit_rect=fit_rect)
