"""Segmentation comparison metrics.

Binary-to-binary Jaccard similarity (with Otsu binarization for gray
inputs), gray-to-gray mean absolute error, and the Tanimoto similarity, a
gray-level extension of Jaccard that avoids thresholding altogether.
Includes the synthetic size/object-ratio stability sweep that contrasts
how the metrics react to a fixed boundary perturbation.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "jaccard",
    "otsu_threshold",
    "binarize",
    "mae",
    "tanimoto",
    "stability_experiment",
]


def _as_gray(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name} has values outside [0, 1]")
    return a


def _as_binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    values = np.unique(a)
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"{name} is not a binary mask, found values {values[:8]}")
    return a.astype(bool)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def jaccard(a, b) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    a = _as_binary(a, "a")
    b = _as_binary(b, "b")
    _check_same_shape(a, b)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def otsu_threshold(img) -> np.ndarray:
    """Binarize a [0, 1] gray image at the threshold maximizing between-class variance.

    The image is quantized to 256 levels and every candidate threshold is
    scored; pixels strictly above the best threshold become foreground.
    A constant image has no class separation and maps to an all-zero mask.
    """
    img = _as_gray(img, "img")
    levels = np.rint(img * 255.0).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    probs = hist / total
    cum_w = np.cumsum(probs)
    cum_mean = np.cumsum(probs * np.arange(256))
    grand_mean = cum_mean[-1]
    w0 = cum_w
    w1 = 1.0 - cum_w
    with np.errstate(divide="ignore", invalid="ignore"):
        between = np.where((w0 > 0) & (w1 > 0), (grand_mean * w0 - cum_mean) ** 2 / (w0 * w1), 0.0)
    if between.max() <= 0.0:
        return np.zeros(img.shape, dtype=np.uint8)
    threshold = int(np.argmax(between))
    return (levels > threshold).astype(np.uint8)


def binarize(img) -> np.ndarray:
    """Pass binary inputs through unchanged, Otsu-threshold anything else."""
    arr = np.asarray(img)
    if np.isin(np.unique(arr), (0, 1)).all():
        return arr.astype(np.uint8)
    return otsu_threshold(arr)


def mae(a, b) -> float:
    """Mean absolute error between two [0, 1] gray images, in 8-bit units.

    The summed absolute pixel difference is expressed on the 0..255 scale and
    normalized by ``width * height * 2**8``, so the value lies in [0, 255/256].
    """
    a = _as_gray(a, "a")
    b = _as_gray(b, "b")
    _check_same_shape(a, b)
    return float(np.abs(a - b).sum() * 255.0 / (a.size * 256.0))


def tanimoto(a, b) -> float:
    """Gray-level Jaccard: sum(a*b) / sum(a^2 + b^2 - a*b); 1.0 for two all-zero images.

    Reduces exactly to the set Jaccard index on binary inputs and never needs
    a binarization step, which is what makes it stable under object-ratio and
    image-size changes.
    """
    a = _as_gray(a, "a")
    b = _as_gray(b, "b")
    _check_same_shape(a, b)
    product = a * b
    numerator = product.sum()
    denominator = (a * a + b * b - product).sum()
    if denominator == 0.0:
        return 1.0
    return float(numerator / denominator)


def _ranked_mask(potential: np.ndarray, count: int) -> np.ndarray:
    """Mask of the ``count`` smallest-potential pixels (exact foreground count)."""
    flat = potential.ravel()
    mask = np.zeros(flat.shape, dtype=np.uint8)
    if count > 0:
        mask[np.argsort(flat, kind="stable")[:count]] = 1
    return mask.reshape(potential.shape)


def _disk_potential(size: int) -> np.ndarray:
    center = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - center) ** 2 + (xx - center) ** 2


def _replicate(mask: np.ndarray, factor: int) -> np.ndarray:
    return np.kron(mask, np.ones((factor, factor), dtype=mask.dtype))


def stability_experiment(
    sizes: tuple[int, ...] = (64, 128, 192, 256),
    object_ratios: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5),
    perturbation: float = 0.1,
    shape: str = "disk",
) -> list[dict]:
    """Metric values over an image-size x object-ratio sweep with a fixed boundary error.

    For each ratio a centered disk ground truth is built at the smallest size
    and replicated pixel-for-pixel to the larger sizes (each size must be an
    integer multiple of the smallest), so any metric drift across sizes is
    attributable to the metric, not the data.  The prediction enlarges the
    object area by ``(1 + perturbation)**2``; zero perturbation reproduces the
    ground truth exactly.

    Returns one record per (size, ratio, metric) with metrics ``tanimoto``,
    ``jaccard_otsu`` and ``one_minus_mae``.
    """
    if not sizes or not object_ratios:
        raise ValueError("sizes and object_ratios must be non-empty")
    if shape != "disk":
        raise ValueError(f"unsupported shape {shape!r}")
    if perturbation < 0:
        raise ValueError("perturbation must be non-negative")
    base = min(sizes)
    for s in sizes:
        if s < 8 or s % base:
            raise ValueError(f"every size must be a positive multiple of the smallest ({base}), got {s}")
    potential = _disk_potential(base)
    records = []
    for ratio in object_ratios:
        if not 0.0 < ratio < 1.0:
            raise ValueError(f"object ratio must lie in (0, 1), got {ratio}")
        n = base * base
        gt_count = int(round(ratio * n))
        pred_count = min(n, int(round(ratio * n * (1.0 + perturbation) ** 2)))
        if gt_count < 1:
            raise ValueError(f"ratio {ratio} yields an empty object at size {base}")
        gt_base = _ranked_mask(potential, gt_count)
        pred_base = _ranked_mask(potential, pred_count)
        for size in sizes:
            factor = size // base
            gt = _replicate(gt_base, factor)
            pred = _replicate(pred_base, factor)
            values = {
                "tanimoto": tanimoto(pred, gt),
                "jaccard_otsu": jaccard(binarize(pred), gt),
                "one_minus_mae": 1.0 - mae(pred, gt),
            }
            for metric, value in values.items():
                records.append({"size": size, "ratio": ratio, "metric": metric, "value": value})
    return records
