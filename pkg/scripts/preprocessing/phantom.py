"""
Synthetic apical four-chamber LV phantoms.

The cavity is a truncated ellipse: flat at the mitral annulus (bottom), domed toward
the apex (top), optionally tilted a few degrees. A bright myocardial wall surrounds
the dome, the cavity is dark, the background mid-gray, and multiplicative speckle is
applied to the whole frame.
"""
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter, label

from scripts.preprocessing.sample import ImageSample
from scripts.utils.errors import ContractViolation

PHANTOM_CALIBRATION_MM = 0.3
BACKGROUND_LEVEL = 100.0
CAVITY_LEVEL = 25.0
WALL_LEVEL = 200.0
SPECKLE_LOOKS = 4.0


def rasterize_cavity(size: int, center: Tuple[float, float], semi_major: float,
                     semi_minor: float, tilt: float = 0.0, truncated: bool = True) -> np.ndarray:
    """
    Binary mask of an ellipse, or of its apical half when `truncated`.

    Args:
        size (int): Mask extent N (N x N).
        center (Tuple[float, float]): (x, y) of the ellipse center, which is also the
            base midpoint of the truncated shape.
        semi_major (float): Semi-axis along the long (base-apex) axis, in pixels.
        semi_minor (float): Semi-axis across the cavity, in pixels.
        tilt (float): Rotation of the long axis from vertical, in radians.
        truncated (bool): Keep only the half toward the apex (smaller y).

    Returns:
        np.ndarray: N x N uint8 mask.
    """
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xs - center[0], ys - center[1]
    across = dx * np.cos(tilt) + dy * np.sin(tilt)
    along = dx * np.sin(tilt) - dy * np.cos(tilt)
    inside = (across / semi_minor) ** 2 + (along / semi_major) ** 2 <= 1.0
    if truncated:
        inside &= along >= 0
    return inside.astype(np.uint8)


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, count = label(mask)
    if count <= 1:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    return (labels == int(np.argmax(sizes)) + 1).astype(np.uint8)


def render_frame(cavity: np.ndarray, wall: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Gray levels for background / wall / cavity, light blur, then speckle."""
    frame = np.full(cavity.shape, BACKGROUND_LEVEL)
    frame[wall.astype(bool)] = WALL_LEVEL
    frame[cavity.astype(bool)] = CAVITY_LEVEL
    frame = gaussian_filter(frame, 0.7)
    speckle = rng.gamma(SPECKLE_LOOKS, 1.0 / SPECKLE_LOOKS, size=frame.shape)
    return np.clip(np.rint(frame * speckle), 0, 255).astype(np.uint8)


def generate_phantom(size: int, seed: int,
                     subject_id: Optional[str] = None) -> Tuple[ImageSample, ImageSample]:
    """
    Generate an (ED, ES) phantom pair for one synthetic subject.

    The ES cavity is the ED cavity shrunk about the base midpoint by a random linear
    factor in [0.6, 0.85]. Pixel size is fixed to 0.3 mm.

    Args:
        size (int): Image extent N >= 32.
        seed (int): Seed; the pair is a pure function of (size, seed).
        subject_id (str, optional): Defaults to "phantom<seed>".

    Raises:
        ContractViolation: If size < 32.
    """
    if size < 32:
        raise ContractViolation(f"phantom size must be >= 32, got {size}")
    rng = np.random.default_rng(seed)
    subject_id = subject_id or f"phantom{seed:04d}"

    semi_major = rng.uniform(0.30, 0.40) * size
    semi_minor = rng.uniform(0.13, 0.18) * size
    center = (size / 2 + rng.uniform(-0.04, 0.04) * size, rng.uniform(0.76, 0.82) * size)
    tilt = np.deg2rad(rng.uniform(-10.0, 10.0))
    wall_width = rng.uniform(2.0, 4.0)
    shrink = rng.uniform(0.6, 0.85)

    samples = []
    for phase, scale in (("ED", 1.0), ("ES", shrink)):
        a, b = semi_major * scale, semi_minor * scale
        cavity = _largest_component(rasterize_cavity(size, center, a, b, tilt))
        outer = rasterize_cavity(size, center, a + wall_width, b + wall_width, tilt)
        wall = outer & (1 - cavity)
        samples.append(ImageSample(
            image=render_frame(cavity, wall, rng),
            mask=cavity,
            calibration=PHANTOM_CALIBRATION_MM,
            phase=phase,
            subject_id=subject_id,
            sample_id=f"{subject_id}-{phase}",
        ))
    return samples[0], samples[1]
