import numpy as np


def niblack_threshold(image: np.ndarray, k: float = 2.0) -> np.ndarray:
    """
    Global Niblack thresholding.

    T = m + k * sigma with the mean and population standard deviation of the whole
    image; pixels strictly above T become 255, all others 0.

    Args:
        image (np.ndarray): Non-empty grayscale array.
        k (float): Bias parameter.

    Returns:
        np.ndarray: uint8 array of the same shape with values {0, 255}.
    """
    values = np.asarray(image, dtype=np.float64)
    threshold = values.mean() + k * values.std()
    return np.where(values > threshold, 255, 0).astype(np.uint8)


def compose_input(image: np.ndarray, k: float = 2.0, dtype=np.float32) -> np.ndarray:
    """
    Stack the raw image and its Niblack map into a 2 x H x W network input in [0, 1].
    """
    raw = np.asarray(image, dtype=np.float64) / 255.0
    thresholded = niblack_threshold(image, k).astype(np.float64) / 255.0
    return np.stack([raw, thresholded]).astype(dtype)
