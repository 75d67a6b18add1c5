import logging
from typing import List, Tuple

import numpy as np
from scipy.ndimage import label

from scripts.measurement.geometry import Polygon
from scripts.utils.errors import MeasurementError

logger = logging.getLogger(__name__)

# Moore neighbourhood as (drow, dcol), clockwise on screen starting north
_NEIGHBOURS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def largest_component(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Largest 4-connected foreground component of a binary mask.

    Returns:
        Tuple[np.ndarray, int]: (boolean component mask, number of components).
    """
    labels, count = label(np.asarray(mask) > 0)
    if count <= 1:
        return labels > 0, count
    sizes = np.bincount(labels.ravel())[1:]
    return labels == int(np.argmax(sizes)) + 1, count


def _moore_trace(padded: np.ndarray, start: Tuple[int, int]) -> List[Tuple[int, int]]:
    contour = [start]
    current = start
    backtrack = (start[0], start[1] - 1)
    limit = 4 * padded.size + 8
    for _ in range(limit):
        offset = (backtrack[0] - current[0], backtrack[1] - current[1])
        first = _NEIGHBOURS.index(offset)
        previous = backtrack
        nxt = None
        for step in range(1, 9):
            dr, dc = _NEIGHBOURS[(first + step) % 8]
            candidate = (current[0] + dr, current[1] + dc)
            if padded[candidate]:
                nxt = candidate
                break
            previous = candidate
        if nxt is None:
            # isolated pixel
            return contour
        if current == start and len(contour) > 1 and nxt == contour[1]:
            contour.pop()
            return contour
        contour.append(nxt)
        current, backtrack = nxt, previous
    raise MeasurementError("boundary trace did not close")


def extract_contour(mask: np.ndarray) -> Polygon:
    """
    Moore-neighbour boundary trace of the largest 4-connected component.

    The trace starts at the first foreground pixel in raster order and stops when it
    re-enters the start pixel heading to the second contour pixel. Points are pixel
    centres (x = column, y = row), ordered counterclockwise (positive shoelace area),
    without repeating the first point.

    Args:
        mask (np.ndarray): Binary H x W mask.

    Returns:
        Polygon: The closed boundary. `warning` is set when the mask had more than
        one component.

    Raises:
        MeasurementError: If the mask is empty.
    """
    component, count = largest_component(mask)
    if count == 0:
        raise MeasurementError("empty mask has no contour")
    padded = np.pad(component, 1)
    rows, cols = np.nonzero(padded)
    start = (int(rows[0]), int(cols[0]))
    traced = _moore_trace(padded, start)

    points = np.array([(c - 1, r - 1) for r, c in traced], dtype=np.float64)
    polygon = Polygon(points)
    if polygon.signed_area() < 0:
        polygon = Polygon(points[::-1])
    if count > 1:
        polygon.warning = f"mask has {count} components; traced the largest"
        logger.warning(polygon.warning)
    return polygon
