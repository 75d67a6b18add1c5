"""
Planar geometry on pixel coordinates: polygons, convex hulls and the minimum-area
enclosing triangle.

Points are (x, y) = (column, row). "Counterclockwise" means positive shoelace area in
that frame.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from scripts.utils.errors import MeasurementError


@dataclass
class Polygon:
    """
    Ordered 2-D point list; closed implicitly (the last point connects to the first).

    Attributes:
        points (np.ndarray): n x 2 float64 array of (x, y).
        warning (str, optional): Soft problem noticed while producing the polygon.
    """

    points: np.ndarray
    warning: Optional[str] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.points)

    def signed_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def area(self) -> float:
        return abs(self.signed_area())

    def is_counterclockwise(self) -> bool:
        return self.signed_area() > 0

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Start and end points of every closing edge."""
        return self.points, np.roll(self.points, -1, axis=0)


def cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """z-component of (a - o) x (b - o); broadcasts over leading axes."""
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def convex_hull(points) -> Polygon:
    """
    Counterclockwise convex hull by Andrew's monotone chain; collinear points dropped.

    Args:
        points (Polygon | array-like): Input points.

    Returns:
        Polygon: Hull vertices, counterclockwise, starting at the lexicographically
        smallest point.

    Raises:
        MeasurementError: If fewer than 3 non-collinear points are given.
    """
    pts = points.points if isinstance(points, Polygon) else np.asarray(points, dtype=np.float64)
    # 重複点を除いて x, y の順に並べる
    unique = sorted(set(map(tuple, pts.reshape(-1, 2).tolist())))
    if len(unique) < 3:
        raise MeasurementError(f"convex hull needs 3 distinct points, got {len(unique)}")

    def chain(sequence):
        out = []
        for p in sequence:
            while len(out) > 1 and cross(np.array(out[-2]), np.array(out[-1]), np.array(p)) <= 0:
                out.pop()
            out.append(p)
        return out

    # 下側と上側の鎖をつなぐと符号付き面積が正になる
    lower = chain(unique)
    upper = chain(reversed(unique))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise MeasurementError("convex hull of collinear points is degenerate")
    return Polygon(np.array(hull))


def _outward_lines(hull: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # edge k runs hull[k] -> hull[k+1]; interior on the left, so (ey, -ex) points out
    direction = np.roll(hull, -1, axis=0) - hull
    normals = np.stack([direction[:, 1], -direction[:, 0]], axis=1)
    offsets = np.einsum("ij,ij->i", normals, hull)
    return normals, offsets


def _intersect(n1: np.ndarray, c1, n2: np.ndarray, c2) -> Tuple[np.ndarray, np.ndarray]:
    """Intersection of lines n1.x = c1 and n2.x = c2 (broadcasting); returns (points, det)."""
    det = n1[..., 0] * n2[..., 1] - n1[..., 1] * n2[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (c1 * n2[..., 1] - c2 * n1[..., 1]) / det
        y = (n1[..., 0] * c2 - n2[..., 0] * c1) / det
    return np.stack([x, y], axis=-1), det


def _contains(triangles: np.ndarray, points: np.ndarray, tolerance: float) -> np.ndarray:
    """For T x 3 x 2 triangles, whether every point lies inside or on each triangle."""
    a, b, c = (triangles[:, k, None, :] for k in range(3))
    orientation = np.sign(cross(triangles[:, 0], triangles[:, 1], triangles[:, 2]))[:, None]
    p = points[None, :, :]
    inside = ((cross(a, b, p) * orientation >= -tolerance)
              & (cross(b, c, p) * orientation >= -tolerance)
              & (cross(c, a, p) * orientation >= -tolerance))
    return inside.all(axis=1)


def min_enclosing_triangle(hull: Polygon) -> Polygon:
    """
    Minimum-area triangle enclosing a convex polygon.

    Some optimal triangle has two sides flush with hull edges; its third side is
    either flush with a third edge or touches the hull at a vertex that is the
    midpoint of that side. Every such candidate is built for every pair of edges and
    the smallest one that contains all hull vertices is kept (first found on ties).

    Args:
        hull (Polygon): Convex polygon, counterclockwise, no collinear vertices.

    Returns:
        Polygon: The three triangle vertices, counterclockwise.

    Raises:
        MeasurementError: If the hull is degenerate or no candidate is valid.
    """
    pts = hull.points
    n = len(pts)
    if n < 3 or hull.area() <= 0:
        raise MeasurementError("enclosing triangle needs a non-degenerate convex polygon")
    if not hull.is_counterclockwise():
        pts = pts[::-1]
    if n == 3:
        return Polygon(pts.copy())

    normals, offsets = _outward_lines(pts)
    centroid = pts.mean(axis=0)
    scale = float(np.abs(pts - centroid).max()) or 1.0
    tolerance = 1e-9 * scale ** 2

    best_area = np.inf
    best = None
    for i in range(n):
        for j in range(i + 1, n):
            apex, det = _intersect(normals[i], offsets[i], normals[j], offsets[j])
            if abs(det) <= 1e-12 * scale ** 2:
                continue

            # third side through vertex v with v at the side's midpoint: reflecting
            # line i through v and meeting line j gives the far endpoint
            reflected = 2.0 * (pts @ normals[i]) - offsets[i]
            far, _ = _intersect(np.broadcast_to(normals[i], pts.shape), reflected,
                                np.broadcast_to(normals[j], pts.shape), offsets[j])
            direction = far - pts
            mid_normals = np.stack([direction[:, 1], -direction[:, 0]], axis=1)
            mid_offsets = np.einsum("ij,ij->i", mid_normals, pts)
            flip = mid_normals @ centroid > mid_offsets
            mid_normals[flip] *= -1
            mid_offsets[flip] *= -1

            others = np.array([k for k in range(n) if k not in (i, j)], dtype=int)
            cand_normals = np.concatenate([normals[others], mid_normals])
            cand_offsets = np.concatenate([offsets[others], mid_offsets])
            usable = np.isfinite(cand_normals).all(axis=1) & (np.abs(cand_normals).sum(axis=1) > 0)
            if not usable.any():
                continue
            cand_normals, cand_offsets = cand_normals[usable], cand_offsets[usable]

            on_i, det_i = _intersect(np.broadcast_to(normals[i], cand_normals.shape), offsets[i],
                                     cand_normals, cand_offsets)
            on_j, det_j = _intersect(np.broadcast_to(normals[j], cand_normals.shape), offsets[j],
                                     cand_normals, cand_offsets)
            valid = (np.abs(det_i) > 1e-12) & (np.abs(det_j) > 1e-12)
            if not valid.any():
                continue
            triangles = np.stack([np.broadcast_to(apex, on_i.shape), on_i, on_j], axis=1)[valid]
            areas = 0.5 * np.abs(cross(triangles[:, 0], triangles[:, 1], triangles[:, 2]))
            ok = np.isfinite(areas) & (areas > tolerance) & _contains(triangles, pts, tolerance)
            if not ok.any():
                continue
            k = int(np.argmin(np.where(ok, areas, np.inf)))
            if areas[k] < best_area - tolerance:
                best_area = float(areas[k])
                best = triangles[k]

    if best is None:
        raise MeasurementError("no enclosing triangle candidate contains the hull")
    triangle = Polygon(best.copy())
    if not triangle.is_counterclockwise():
        triangle = Polygon(best[::-1].copy())
    return triangle


def point_line_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Distance from p to the line through a and b (to a itself when a == b)."""
    ab = b - a
    length = float(np.hypot(*ab))
    if length == 0:
        return float(np.hypot(*(p - a)))
    return abs(float(cross(a, b, p))) / length
