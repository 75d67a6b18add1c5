import math
from typing import List

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from scripts.preprocessing.sample import ImageSample
from scripts.utils.errors import ContractViolation


def displacement_field(shape, alpha: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """
    Random smooth displacement: uniform noise in +-1 per pixel and axis, Gaussian
    smoothed with width `sigma`, scaled by `alpha`. Returns 2 x H x W (dy, dx).
    """
    noise = rng.uniform(-1.0, 1.0, size=(2,) + tuple(shape))
    return np.stack([gaussian_filter(noise[c], sigma, mode="constant") * alpha for c in range(2)])


def displacement_rms(alpha: float, sigma: float) -> float:
    """
    Expected per-axis RMS displacement in pixels away from the border.

    Uniform noise in +-1 has deviation 1/sqrt(3); a normalized 2-D Gaussian of width
    sigma divides it by 2 * sqrt(pi) * sigma.
    """
    return alpha / math.sqrt(3.0) / (2.0 * math.sqrt(math.pi) * sigma)


def elastic_deform(sample: ImageSample, alpha: float = 2.0, sigma: float = 6.0,
                   seed: int = 0) -> ImageSample:
    """
    Warp image and mask with the same random elastic displacement field.

    The image is sampled bilinearly, the mask by nearest neighbour so it stays binary.
    The result is fully determined by `seed`.

    `alpha` multiplies the smoothed noise, it is not the displacement in pixels. The
    typical displacement is `displacement_rms(alpha, sigma)`, about 0.05 px at the
    defaults: the image is resampled but mask pixels rarely move. Masks start to
    change once the RMS approaches half a pixel (alpha around 12 at sigma 4).

    Args:
        sample (ImageSample): Sample to deform.
        alpha (float): Scale of the smoothed noise field, >= 0.
        sigma (float): Smoothing width of the field, > 0.
        seed (int): Seed of the displacement field.

    Raises:
        ContractViolation: If alpha < 0 or sigma <= 0.
    """
    if alpha < 0 or sigma <= 0:
        raise ContractViolation(f"elastic_deform needs alpha >= 0 and sigma > 0, got {alpha}, {sigma}")
    rng = np.random.default_rng(seed)
    shape = sample.image.shape
    dy, dx = displacement_field(shape, alpha, sigma, rng)
    rows, cols = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    coordinates = np.stack([rows + dy, cols + dx])

    image = map_coordinates(sample.image.astype(np.float64), coordinates, order=1, mode="reflect")
    mask = map_coordinates(sample.mask, coordinates, order=0, mode="constant", cval=0)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return sample.with_arrays(image, mask.astype(np.uint8), suffix=f"-el{seed}")


def augment_sample(sample: ImageSample, factor: int = 10, alpha: float = 2.0,
                   sigma: float = 6.0, seed: int = 0) -> List[ImageSample]:
    """
    The original sample followed by factor - 1 elastic deformations of it.

    Raises:
        ContractViolation: If factor < 1.
    """
    if factor < 1:
        raise ContractViolation(f"augmentation factor must be >= 1, got {factor}")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 31 - 1, size=factor - 1)
    return [sample] + [elastic_deform(sample, alpha, sigma, int(s)) for s in seeds]
