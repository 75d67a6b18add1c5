"""Unit conversions for the measurement pipeline (pixels -> mm -> cm, cm^3 -> mL)."""

MM_PER_CM = 10.0
ML_PER_CM3 = 1.0


def px_to_cm(length_px: float, calibration_mm: float) -> float:
    """Pixel length times mm-per-pixel, expressed in cm."""
    return length_px * calibration_mm / MM_PER_CM


def px_to_mm(length_px: float, calibration_mm: float) -> float:
    return length_px * calibration_mm


def pixel_count_to_cm2(count: int, calibration_mm: float) -> float:
    """Area of `count` square pixels of side `calibration_mm`, in cm^2."""
    return count * calibration_mm ** 2 / MM_PER_CM ** 2


def cm3_to_ml(volume_cm3: float) -> float:
    return volume_cm3 * ML_PER_CM3
