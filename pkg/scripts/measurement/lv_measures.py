"""
Left-ventricle measurements from a segmentation mask.

Pipeline: contour -> convex hull -> minimum enclosing triangle -> landmarks (two
mitral annulus points and the apex) -> length along the perpendicular erected at the
annulus midpoint; area by pixel census; single-plane area-length volume; ejection
fraction from the ED / ES volumes.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from scripts.measurement.contour import extract_contour
from scripts.measurement.geometry import Polygon, convex_hull, min_enclosing_triangle, point_line_distance
from scripts.measurement.units import cm3_to_ml, pixel_count_to_cm2, px_to_cm
from scripts.utils.errors import ContractViolation, MeasurementError

logger = logging.getLogger(__name__)


@dataclass
class Landmarks:
    """
    Attributes:
        annulus_a (np.ndarray): First mitral annulus point (x, y).
        annulus_b (np.ndarray): Second mitral annulus point (x, y).
        apex (np.ndarray): Apex point (x, y).
        indices (tuple): Contour indices of (annulus_a, annulus_b, apex).
    """

    annulus_a: np.ndarray
    annulus_b: np.ndarray
    apex: np.ndarray
    indices: tuple = ()

    @property
    def base_midpoint(self) -> np.ndarray:
        return (self.annulus_a + self.annulus_b) / 2.0


@dataclass
class LVMeasures:
    """
    Measurements of one mask.

    Attributes:
        length_cm (float): D; NaN when the length procedure failed.
        area_cm2 (float): S.
        volume_ml (float): V = 8 S^2 / (3 pi D); NaN when D is unavailable.
        landmarks (Landmarks, optional): Landmarks used for D.
        phase (str): Phase tag of the frame.
        flag (str, optional): Why a value is missing, or a soft warning.
    """

    length_cm: float
    area_cm2: float
    volume_ml: float
    landmarks: Optional[Landmarks] = None
    phase: str = "other"
    flag: Optional[str] = None


def lv_landmarks(contour: Polygon, triangle: Polygon) -> Landmarks:
    """
    Nearest contour point to each triangle vertex (lowest contour index on ties).

    The apex is the landmark farthest from the line through the other two; the
    remaining two, in triangle order, are the annulus points.

    Raises:
        MeasurementError: If the contour or triangle is empty.
    """
    points = contour.points
    if len(points) == 0 or len(triangle) != 3:
        raise MeasurementError("landmarks need a contour and a 3-vertex triangle")
    distances = np.linalg.norm(points[None, :, :] - triangle.points[:, None, :], axis=2)
    nearest = [int(np.argmin(row)) for row in distances]
    marks = [points[k] for k in nearest]

    spread = [point_line_distance(marks[k], marks[(k + 1) % 3], marks[(k + 2) % 3]) for k in range(3)]
    apex = int(np.argmax(spread))
    a, b = (apex + 1) % 3, (apex + 2) % 3
    if a > b:
        a, b = b, a
    return Landmarks(
        annulus_a=marks[a].copy(),
        annulus_b=marks[b].copy(),
        apex=marks[apex].copy(),
        indices=(nearest[a], nearest[b], nearest[apex]),
    )


def lv_length(contour: Polygon, landmarks: Landmarks, calibration: float) -> float:
    """
    LV length D in cm.

    The perpendicular to the annulus baseline is erected at the midpoint of the two
    annulus points and pointed toward the apex; D is the distance from the midpoint to
    its farthest crossing with the closed contour.

    Args:
        contour (Polygon): Closed LV contour.
        landmarks (Landmarks): Annulus points and apex.
        calibration (float): mm per pixel.

    Raises:
        MeasurementError: If the annulus points coincide or nothing is hit on the apex
            side.
    """
    base = landmarks.annulus_b - landmarks.annulus_a
    base_length = float(np.hypot(*base))
    if base_length == 0:
        raise MeasurementError("annulus points coincide; baseline undefined")
    origin = landmarks.base_midpoint
    direction = np.array([-base[1], base[0]]) / base_length
    if np.dot(landmarks.apex - origin, direction) < 0:
        direction = -direction

    starts, ends = contour.edges()
    segment = ends - starts
    denom = direction[0] * segment[:, 1] - direction[1] * segment[:, 0]
    rel = starts - origin
    parallel = np.abs(denom) < 1e-12
    safe = np.where(parallel, 1.0, denom)
    # origin + t * direction == start + s * segment
    t = (rel[:, 0] * segment[:, 1] - rel[:, 1] * segment[:, 0]) / safe
    s = (rel[:, 0] * direction[1] - rel[:, 1] * direction[0]) / safe
    hits = ~parallel & (t > 1e-9) & (s >= -1e-12) & (s <= 1 + 1e-12)
    if not hits.any():
        raise MeasurementError("perpendicular from the annulus midpoint misses the contour")
    return px_to_cm(float(t[hits].max()), calibration)


def lv_area(mask: np.ndarray, calibration: float) -> float:
    """S in cm^2: foreground pixel count times the pixel area."""
    return pixel_count_to_cm2(int(np.count_nonzero(mask)), calibration)


def lv_volume(area_cm2: float, length_cm: float) -> float:
    """
    Single-plane area-length volume V = 8 S^2 / (3 pi D) in mL.

    Raises:
        ContractViolation: If D <= 0.
    """
    if not length_cm > 0:
        raise ContractViolation(f"LV length must be positive, got {length_cm}")
    return cm3_to_ml(8.0 * area_cm2 ** 2 / (3.0 * math.pi * length_cm))


def ejection_fraction(volume_ed: float, volume_es: float) -> float:
    """
    EF = 100 (V_ED - V_ES) / V_ED in percent.

    Raises:
        ContractViolation: If V_ED <= 0.
    """
    if not volume_ed > 0:
        raise ContractViolation(f"end-diastolic volume must be positive, got {volume_ed}")
    if volume_es < 0 or volume_es > volume_ed:
        logger.warning(f"V_ES={volume_es:.3f} outside [0, V_ED={volume_ed:.3f}]")
    return 100.0 * (volume_ed - volume_es) / volume_ed


def measure_mask(mask: np.ndarray, calibration: float, phase: str = "other") -> LVMeasures:
    """
    Run the whole measurement pipeline on one mask.

    Geometric failures do not raise: D and V become NaN and `flag` carries the
    reason, so a batch of masks can still be reported.
    """
    area = lv_area(mask, calibration)
    try:
        contour = extract_contour(mask)
        triangle = min_enclosing_triangle(convex_hull(contour))
        landmarks = lv_landmarks(contour, triangle)
        length = lv_length(contour, landmarks, calibration)
    except MeasurementError as e:
        logger.warning(f"measurement failed: {e}")
        return LVMeasures(math.nan, area, math.nan, None, phase, flag=str(e))
    return LVMeasures(length, area, lv_volume(area, length), landmarks, phase, flag=contour.warning)
