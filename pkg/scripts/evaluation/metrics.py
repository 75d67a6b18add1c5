"""
Segmentation agreement metrics.

Overlap scores (Dice, Jaccard) compare masks; distance scores (Hausdorff, MAD) compare
contour point sets and return pixels, or mm when a calibration is given.
"""
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from scripts.measurement.geometry import Polygon
from scripts.utils.errors import ContractViolation


def _binary_pair(a: np.ndarray, b: np.ndarray):
    a, b = np.asarray(a) > 0, np.asarray(b) > 0
    if a.shape != b.shape:
        raise ContractViolation(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|A n B| / (|A| + |B|); 1 when both masks are empty."""
    a, b = _binary_pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    """|A n B| / |A u B|; 1 when both masks are empty."""
    a, b = _binary_pair(a, b)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def _points(points) -> np.ndarray:
    pts = points.points if isinstance(points, Polygon) else np.asarray(points, dtype=np.float64)
    pts = pts.reshape(-1, 2)
    if len(pts) == 0:
        raise ContractViolation("distance metrics need non-empty point sets")
    return pts


def _scale(value: float, calibration: Optional[float]) -> float:
    return value if calibration is None else value * calibration


def hausdorff(a, b, calibration: Optional[float] = None) -> float:
    """
    Symmetric Hausdorff distance between two point sets.

    Args:
        a (Polygon | array-like): First point set.
        b (Polygon | array-like): Second point set.
        calibration (float, optional): mm per pixel; result in mm when given.

    Raises:
        ContractViolation: If either set is empty.
    """
    distances = cdist(_points(a), _points(b))
    return _scale(float(max(distances.min(axis=1).max(), distances.min(axis=0).max())), calibration)


def mad(a, b, calibration: Optional[float] = None) -> float:
    """
    Mean over the points of `a` of the distance to the nearest point of `b`.

    Averaged over the automatic contour `a` only, so mad(a, b) != mad(b, a) in
    general.

    Raises:
        ContractViolation: If either set is empty.
    """
    distances = cdist(_points(a), _points(b))
    return _scale(float(distances.min(axis=1).mean()), calibration)
