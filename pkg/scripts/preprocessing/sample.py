from dataclasses import dataclass, replace

import numpy as np

from scripts.utils.errors import ContractViolation

PHASES = ("ED", "ES", "other")


@dataclass(frozen=True)
class ImageSample:
    """
    One annotated echocardiographic frame.

    Attributes:
        image (np.ndarray): H x W grayscale, uint8 in 0..255.
        mask (np.ndarray): H x W binary uint8 ground truth (1 = LV cavity).
        calibration (float): Pixel size in mm (typically 0.23 to 0.36).
        phase (str): "ED", "ES" or "other".
        subject_id (str): Patient / sequence identifier; folds never split a subject.
        sample_id (str): Unique identifier of the frame.
    """

    image: np.ndarray
    mask: np.ndarray
    calibration: float
    phase: str
    subject_id: str
    sample_id: str

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ContractViolation(
                f"{self.sample_id}: image {self.image.shape} and mask {self.mask.shape} differ"
            )
        if not np.isin(self.mask, (0, 1)).all():
            raise ContractViolation(f"{self.sample_id}: mask must be binary")
        if not self.calibration > 0:
            raise ContractViolation(f"{self.sample_id}: calibration must be positive")
        if self.phase not in PHASES:
            raise ContractViolation(f"{self.sample_id}: unknown phase '{self.phase}'")

    def with_arrays(self, image: np.ndarray, mask: np.ndarray, suffix: str = "") -> "ImageSample":
        """Copy with new pixel data (same subject, phase and calibration)."""
        return replace(self, image=image, mask=mask, sample_id=self.sample_id + suffix)
