"""Convex polygons from Voronoi diagrams and their shape metrics.

Polygons are stored as counter-clockwise vertex arrays. All metric
computations are pure functions, so they can safely run in parallel
workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import QhullError, Voronoi

from .errors import DegenerateInputError, ParseError

# Tolerances tied to the polygon's own scale.
_COINCIDENT_REL = 1e-12      # consecutive vertices closer than this x diameter are invalid
_VORONOI_MERGE_REL = 1e-10   # near-cocircular Voronoi vertices merged below this x diameter
_COLLINEAR_REL = 1e-12       # cross products below this x diameter^2 are treated as collinear


def _cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """z-component of the cross product of stacked 2D vectors."""
    a = np.asarray(a)
    b = np.asarray(b)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class Point2(NamedTuple):
    x: float
    y: float


class Circle(NamedTuple):
    center: Point2
    radius: float


@dataclass(frozen=True, eq=False)
class Polygon:
    """Strictly convex polygon, vertices counter-clockwise."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs an (n, 2) array with n >= 3")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon vertices must be finite")
        object.__setattr__(self, "vertices", v)
        d = diameter(self)
        edges = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        if np.any(lengths <= _COINCIDENT_REL * d):
            raise ValueError("polygon has coincident consecutive vertices")
        cross = _cross2(edges, np.roll(edges, -1, axis=0))
        if not np.all(cross > 0.0):
            raise ValueError("polygon must be strictly convex and counter-clockwise")
        # positive turns alone admit multiply-wound chains; one full turn
        # of 2 pi guarantees the boundary is simple
        turning = np.arctan2(cross, (edges * np.roll(edges, -1, axis=0)).sum(axis=1)).sum()
        if abs(turning - 2.0 * math.pi) > 1e-6:
            raise ValueError("polygon boundary must wind exactly once")

    @property
    def n(self) -> int:
        return self.vertices.shape[0]


def sample_points(n: int, side: float, seed: int) -> np.ndarray:
    """Sample n points uniformly on [0, side]^2, reproducibly."""
    if n < 4:
        raise ValueError(f"need at least 4 points, got {n}")
    if side <= 0:
        raise ValueError(f"side must be positive, got {side}")
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, side, size=(n, 2))


def _clean_cell(verts: np.ndarray) -> np.ndarray | None:
    """Order a raw Voronoi region CCW and strip degenerate vertices."""
    v = np.asarray(verts, dtype=float)
    # qhull regions are ordered around the cell but orientation varies
    if _signed_area(v) < 0:
        v = v[::-1]
    scale = _point_set_diameter(v)
    if scale == 0.0:
        return None
    changed = True
    while changed and len(v) >= 3:
        changed = False
        edges = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        keep = lengths > _VORONOI_MERGE_REL * scale
        if not np.all(keep):
            v = v[keep]
            changed = True
            continue
        cross = _cross2(v - np.roll(v, 1, axis=0), np.roll(v, -1, axis=0) - v)
        # cross ~ 0 at vertex i means v[i] lies on its neighbors' chord
        keep = cross > _COLLINEAR_REL * scale * scale
        if not np.all(keep):
            v = v[keep]
            changed = True
    if len(v) < 3:
        return None
    return v


def voronoi_cells(points: np.ndarray) -> list[Polygon]:
    """Bounded cells of the Voronoi diagram of `points`, as convex polygons.

    Cells are returned in increasing site order; sites on the convex hull
    of the input (unbounded cells) produce no polygon.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise ValueError("need an (n, 2) array with n >= 4 points")
    centered = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-12 * max(1.0, np.abs(pts).max())) < 2:
        raise DegenerateInputError("all points are collinear")
    try:
        vor = Voronoi(pts)
    except QhullError as exc:
        raise DegenerateInputError(f"Voronoi construction failed: {exc}") from exc
    cells = []
    for site in range(pts.shape[0]):
        region = vor.regions[vor.point_region[site]]
        if len(region) < 3 or -1 in region:
            continue
        cleaned = _clean_cell(vor.vertices[np.asarray(region, dtype=int)])
        if cleaned is not None:
            cells.append(Polygon(cleaned))
    return cells


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _point_set_diameter(v: np.ndarray) -> float:
    diff = v[:, None, :] - v[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=2).max()))


def area(p: Polygon) -> float:
    """Shoelace area, positive for CCW polygons."""
    return _signed_area(p.vertices)


def perimeter(p: Polygon) -> float:
    edges = np.roll(p.vertices, -1, axis=0) - p.vertices
    return float(np.hypot(edges[:, 0], edges[:, 1]).sum())


def diameter(p: Polygon) -> float:
    """Largest distance between two vertices."""
    return _point_set_diameter(np.asarray(p.vertices, dtype=float))


def centroid(p: Polygon) -> np.ndarray:
    """Area centroid; lies strictly inside a convex polygon."""
    v = p.vertices
    nxt = np.roll(v, -1, axis=0)
    w = v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]
    a = 0.5 * w.sum()
    return (v + nxt).T @ w / (6.0 * a)


def _circumcircle(a, b, c):
    """Circle through three points, or None if collinear."""
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0.0:
        return None
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    r = math.hypot(ax - ux, ay - uy)
    return (ux, uy), r


def _diametral(a, b):
    cx, cy = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    return (cx, cy), math.hypot(a[0] - cx, a[1] - cy)


def _contains(circle, q, eps=1e-12) -> bool:
    (cx, cy), r = circle
    return math.hypot(q[0] - cx, q[1] - cy) <= r * (1.0 + eps) + 1e-300


def smallest_enclosing_circle(p: Polygon) -> Circle:
    """Minimal circle containing all vertices (randomized Welzl, expected O(n)).

    The shuffle uses a fixed internal seed so results are reproducible.
    """
    pts = [tuple(v) for v in p.vertices]
    order = np.random.default_rng(0x5EC).permutation(len(pts))
    pts = [pts[i] for i in order]

    c = None
    for i, q in enumerate(pts):
        if c is None or not _contains(c, q):
            c = _circle_with_one(pts[: i + 1], q)
    (cx, cy), r = c
    return Circle(Point2(float(cx), float(cy)), float(r))


def _circle_with_one(pts, q):
    c = (q, 0.0)
    for j, r in enumerate(pts):
        if not _contains(c, r):
            if c[1] == 0.0:
                c = _diametral(q, r)
            else:
                c = _circle_with_two(pts[: j + 1], q, r)
    return c


def _circle_with_two(pts, q, r):
    circ = _diametral(q, r)
    left = None
    right = None
    qr = (r[0] - q[0], r[1] - q[1])
    for s in pts:
        if _contains(circ, s):
            continue
        cross = qr[0] * (s[1] - q[1]) - qr[1] * (s[0] - q[0])
        c = _circumcircle(q, r, s)
        if c is None:
            continue
        ccross = qr[0] * (c[0][1] - q[1]) - qr[1] * (c[0][0] - q[0])
        if cross > 0.0 and (left is None or ccross > qr[0] * (left[0][1] - q[1]) - qr[1] * (left[0][0] - q[0])):
            left = c
        elif cross < 0.0 and (right is None or ccross < qr[0] * (right[0][1] - q[1]) - qr[1] * (right[0][0] - q[0])):
            right = c
    if left is None and right is None:
        return circ
    if left is None:
        return right
    if right is None:
        return left
    return left if left[1] <= right[1] else right


def inscribed_circle(p: Polygon) -> Circle:
    """Largest circle inside a convex polygon (Chebyshev center).

    Solved as a small linear program: maximize r subject to the center
    staying at distance >= r from every edge line.
    """
    v = p.vertices
    edges = np.roll(v, -1, axis=0) - v
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    # inward normal of each CCW edge
    normals = np.column_stack([-edges[:, 1], edges[:, 0]]) / lengths[:, None]
    a_ub = np.column_stack([-normals, np.ones(len(v))])
    b_ub = -(normals * v).sum(axis=1)
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=[(None, None), (None, None), (0.0, None)],
        method="highs",
    )
    if not res.success:
        raise DegenerateInputError(f"Chebyshev center LP failed: {res.message}")
    cx, cy, r = res.x
    return Circle(Point2(float(cx), float(cy)), float(r))


def inner_angles(p: Polygon) -> tuple[float, float]:
    """(min, max) interior angle in radians, computed from atan2 turn angles."""
    v = p.vertices
    e_next = np.roll(v, -1, axis=0) - v
    e_prev = v - np.roll(v, 1, axis=0)
    turn = np.arctan2(_cross2(e_prev, e_next), (e_prev * e_next).sum(axis=1))
    interior = math.pi - turn
    return float(interior.min()), float(interior.max())


def isotropy(p: Polygon) -> float:
    """Ratio of the covariance matrix eigenvalues, in (0, 1].

    The covariance integral is evaluated exactly through the second
    moments of a fan triangulation, so the result is quadrature-free.
    """
    v = p.vertices
    second = np.zeros((2, 2))
    total_area = 0.0
    first = np.zeros(2)
    for i in range(1, len(v) - 1):
        tri = np.array([v[0], v[i], v[i + 1]])
        a = _signed_area(tri)
        s = tri.sum(axis=0)
        second += (a / 12.0) * (np.outer(s, s) + tri.T @ tri)
        first += a * s / 3.0
        total_area += a
    mean = first / total_area
    cov = second / total_area - np.outer(mean, mean)
    lam = np.linalg.eigvalsh(cov)
    return float(min(lam[0] / lam[1], 1.0))


@dataclass(frozen=True)
class MetricVector:
    """The 13 per-polygon shape metrics kept for convex polygons.

    Kernel-based quantities are omitted: a convex polygon is its own
    kernel, so kernel area equals the area, the kernel-area ratio is 1
    and shape regularity equals the circle ratio.
    """

    cc: float    # circumscribed circle radius
    ic: float    # inscribed circle radius
    cr: float    # ic / cc
    ar: float    # area
    apr: float   # area / perimeter^2
    se: float    # shortest edge
    sse: float   # se / (2 cc), circumcircle-diameter scaling keeps this in [0, 1]
    er: float    # shortest / longest edge
    mpd: float   # min vertex-pair distance
    smpd: float  # mpd / (2 cc)
    ma: float    # min interior angle
    mx: float    # max interior angle
    iso: float   # covariance eigenvalue ratio

    COLUMNS = ("cc", "ic", "cr", "ar", "apr", "se", "sse", "er",
               "mpd", "smpd", "ma", "mx", "iso")

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.COLUMNS}


# acronyms used in exported correlation tables
METRIC_LABELS = {
    "ic": "IC", "cc": "CC", "cr": "CR", "ar": "AR", "apr": "APR",
    "se": "SE", "sse": "sSE", "er": "ER", "mpd": "MPD", "smpd": "sMPD",
    "ma": "MA", "mx": "MX", "iso": "ISO",
}


def compute_metrics(p: Polygon) -> MetricVector:
    """All 13 metrics of one polygon."""
    v = p.vertices
    cc = smallest_enclosing_circle(p).radius
    ic = inscribed_circle(p).radius
    ar = area(p)
    per = perimeter(p)
    edges = np.roll(v, -1, axis=0) - v
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    se = float(lengths.min())
    longest = float(lengths.max())
    diff = v[:, None, :] - v[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    mpd = float(dist[np.triu_indices(len(v), k=1)].min())
    ma, mx = inner_angles(p)
    return MetricVector(
        cc=cc,
        ic=ic,
        cr=ic / cc,
        ar=ar,
        apr=ar / per ** 2,
        se=se,
        sse=se / (2.0 * cc),
        er=se / longest,
        mpd=mpd,
        smpd=mpd / (2.0 * cc),
        ma=ma,
        mx=mx,
        iso=isotropy(p),
    )


def save_polygons(polygons: Sequence[Polygon], path, header: dict | None = None) -> None:
    """One polygon per line: `x1 y1 x2 y2 ...`, CCW, 17 significant digits.

    Header metadata is written as leading `# key=value` lines.
    """
    with open(path, "w") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        for poly in polygons:
            fh.write(" ".join(f"{c:.17g}" for c in poly.vertices.ravel()) + "\n")


def load_polygons(path) -> tuple[list[Polygon], dict[str, str]]:
    """Inverse of save_polygons; returns (polygons, header)."""
    polygons = []
    header: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    header[key.strip()] = value.strip()
                continue
            fields = line.split()
            if len(fields) % 2 != 0 or len(fields) < 6:
                raise ParseError("expected an even number (>= 6) of coordinates",
                                 path=str(path), line=lineno)
            try:
                coords = np.array([float(f) for f in fields]).reshape(-1, 2)
            except ValueError as exc:
                raise ParseError(f"bad coordinate: {exc}", path=str(path), line=lineno) from exc
            try:
                polygons.append(Polygon(coords))
            except ValueError as exc:
                raise ParseError(f"invalid polygon: {exc}", path=str(path), line=lineno) from exc
    return polygons, header
