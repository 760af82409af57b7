"""Dataset ingestion, cross-validation splits and synthetic data.

On-disk layout: a dataset root holds ``images/`` and ``masks/`` with
matching filenames (8-bit PNG; masks strictly binary) and an optional
``groups.csv`` with header ``filename,group`` assigning each file to a
participant/group.  The synthetic generator produces organic blob or
thin-curve targets with a controlled foreground fraction so the whole
pipeline can run without redistributable medical data.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

__all__ = [
    "Sample",
    "FoldPlan",
    "ResizePolicy",
    "load_dataset",
    "save_dataset",
    "kfold_split",
    "grouped_split",
    "generate_synthetic_dataset",
]


@dataclass(frozen=True)
class ResizePolicy:
    """Target (height, width) plus the strategy for non-matching aspect ratios.

    ``stretch`` resamples straight to the target; ``letterbox`` preserves the
    aspect ratio and pads with background.  Images are resampled bilinearly,
    masks with nearest neighbor so they stay binary.
    """

    height: int
    width: int
    mode: str = "stretch"

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("resize target must be positive")
        if self.mode not in ("stretch", "letterbox"):
            raise ValueError(f"unknown resize mode {self.mode!r}")


@dataclass(frozen=True)
class Sample:
    """One image/mask pair: float image in [0, 1], strictly binary mask."""

    image: np.ndarray  # (H, W, 3) float32
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    sample_id: str
    group: str = ""

    def __post_init__(self) -> None:
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError(
                f"sample {self.sample_id!r}: image {self.image.shape[:2]} and mask {self.mask.shape} differ"
            )
        values = np.unique(self.mask)
        if not np.isin(values, (0, 1)).all():
            raise ValueError(f"sample {self.sample_id!r}: mask is not binary, found values {values[:8]}")


@dataclass(frozen=True)
class FoldPlan:
    """Partition of sample ids into k mutually exclusive, exhaustive folds."""

    k: int
    folds: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if self.k != len(self.folds):
            raise ValueError(f"k={self.k} but {len(self.folds)} folds given")
        seen: set[str] = set()
        for fold in self.folds:
            overlap = seen.intersection(fold)
            if overlap:
                raise ValueError(f"ids appear in more than one fold: {sorted(overlap)[:5]}")
            seen.update(fold)

    @property
    def all_ids(self) -> frozenset[str]:
        return frozenset(i for fold in self.folds for i in fold)

    def validation_ids(self, fold: int) -> tuple[str, ...]:
        return self.folds[fold]

    def training_ids(self, fold: int) -> tuple[str, ...]:
        return tuple(i for j, f in enumerate(self.folds) if j != fold for i in f)


def _resize_image(image: np.ndarray, policy: ResizePolicy) -> np.ndarray:
    pil = Image.fromarray((image * 255.0).round().astype(np.uint8))
    if policy.mode == "stretch":
        out = pil.resize((policy.width, policy.height), Image.BILINEAR)
        return np.asarray(out, dtype=np.float32) / 255.0
    scale = min(policy.width / pil.width, policy.height / pil.height)
    new_w, new_h = max(1, round(pil.width * scale)), max(1, round(pil.height * scale))
    resized = np.asarray(pil.resize((new_w, new_h), Image.BILINEAR), dtype=np.float32) / 255.0
    canvas = np.zeros((policy.height, policy.width, 3), dtype=np.float32)
    top, left = (policy.height - new_h) // 2, (policy.width - new_w) // 2
    canvas[top : top + new_h, left : left + new_w] = resized
    return canvas


def _resize_mask(mask: np.ndarray, policy: ResizePolicy) -> np.ndarray:
    pil = Image.fromarray(mask.astype(np.uint8))
    if policy.mode == "stretch":
        out = pil.resize((policy.width, policy.height), Image.NEAREST)
        return (np.asarray(out) > 0).astype(np.uint8)
    scale = min(policy.width / pil.width, policy.height / pil.height)
    new_w, new_h = max(1, round(pil.width * scale)), max(1, round(pil.height * scale))
    resized = (np.asarray(pil.resize((new_w, new_h), Image.NEAREST)) > 0).astype(np.uint8)
    canvas = np.zeros((policy.height, policy.width), dtype=np.uint8)
    top, left = (policy.height - new_h) // 2, (policy.width - new_w) // 2
    canvas[top : top + new_h, left : left + new_w] = resized
    return canvas


def _load_groups(root: Path) -> dict[str, str]:
    path = root / "groups.csv"
    if not path.exists():
        return {}
    groups: dict[str, str] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"filename", "group"} - set(reader.fieldnames):
            raise ValueError(f"{path}: expected header 'filename,group'")
        for row in reader:
            groups[row["filename"]] = row["group"]
    return groups


def load_dataset(root_dir: str | Path, resize_policy: ResizePolicy | None = None) -> list[Sample]:
    """Load all image/mask pairs under a dataset root, sorted by id.

    Every image must have a mask of the same filename and vice versa; source
    masks must be strictly binary ({0, 1} or {0, 255}).  Images are normalized
    to [0, 1]; resizing (if requested) never introduces new mask values.
    """
    root = Path(root_dir)
    image_dir, mask_dir = root / "images", root / "masks"
    if not image_dir.is_dir() or not mask_dir.is_dir():
        raise ValueError(f"{root}: expected 'images/' and 'masks/' subdirectories")
    image_names = {p.name for p in image_dir.iterdir() if p.is_file()}
    mask_names = {p.name for p in mask_dir.iterdir() if p.is_file()}
    orphans = sorted(image_names ^ mask_names)
    if orphans:
        raise ValueError(f"{root}: unmatched image/mask files: {orphans}")
    if not image_names:
        warnings.warn(f"{root}: dataset is empty")
        return []
    groups = _load_groups(root)
    samples = []
    for name in sorted(image_names):
        image = np.asarray(Image.open(image_dir / name).convert("RGB"), dtype=np.float32) / 255.0
        raw_mask = np.asarray(Image.open(mask_dir / name).convert("L"))
        values = np.unique(raw_mask)
        if not np.isin(values, (0, 1, 255)).all() or (1 in values and 255 in values):
            raise ValueError(f"{mask_dir / name}: mask is not binary, found values {values[:8].tolist()}")
        mask = (raw_mask > 0).astype(np.uint8)
        if resize_policy is not None:
            image = _resize_image(image, resize_policy)
            mask = _resize_mask(mask, resize_policy)
        samples.append(Sample(image=image, mask=mask, sample_id=Path(name).stem, group=groups.get(name, "")))
    return samples


def save_dataset(samples: list[Sample], root_dir: str | Path) -> None:
    """Write samples as 8-bit PNG pairs (plus groups.csv when groups are set)."""
    root = Path(root_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    grouped = [s for s in samples if s.group]
    for sample in samples:
        name = f"{sample.sample_id}.png"
        Image.fromarray((sample.image * 255.0).round().astype(np.uint8)).save(root / "images" / name)
        Image.fromarray((sample.mask * 255).astype(np.uint8)).save(root / "masks" / name)
    if grouped:
        with (root / "groups.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["filename", "group"])
            for sample in samples:
                writer.writerow([f"{sample.sample_id}.png", sample.group])


def kfold_split(ids, k: int, seed: int = 0) -> FoldPlan:
    """Random k-fold partition: mutually exclusive, exhaustive, sizes differ by at most 1.

    Deterministic for a given seed regardless of the input ordering.
    """
    unique = sorted(set(ids))
    if len(unique) != len(list(ids)):
        raise ValueError("ids contain duplicates")
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > len(unique):
        raise ValueError(f"k={k} exceeds the {len(unique)} available ids")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unique))
    shuffled = [unique[i] for i in order]
    folds = tuple(tuple(part) for part in np.array_split(np.array(shuffled, dtype=object), k))
    return FoldPlan(k=k, folds=folds)


def grouped_split(samples: list[Sample]) -> FoldPlan:
    """One fold per group so no participant spans a training/validation boundary."""
    missing = [s.sample_id for s in samples if not s.group]
    if missing:
        raise ValueError(f"samples without a group label: {missing[:5]}")
    by_group: dict[str, list[str]] = {}
    for s in samples:
        by_group.setdefault(s.group, []).append(s.sample_id)
    folds = tuple(tuple(sorted(by_group[g])) for g in sorted(by_group))
    return FoldPlan(k=len(folds), folds=folds)


def _smooth_field(shape: tuple[int, int], rng: np.random.Generator, sigma_frac: float = 0.12) -> np.ndarray:
    noise = rng.standard_normal(shape)
    sigma = max(1.0, sigma_frac * min(shape))
    return gaussian_filter(noise, sigma=sigma, mode="wrap")


def _synthetic_mask(
    shape: tuple[int, int], object_ratio: float, rng: np.random.Generator, kind: str
) -> np.ndarray:
    field = _smooth_field(shape, rng)
    count = int(round(object_ratio * field.size))
    if kind == "blob":
        potential = -field  # largest field values become foreground
    elif kind == "curve":
        potential = np.abs(field - np.median(field))  # level band around the median
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    order = np.argsort(potential.ravel(), kind="stable")[:count]
    mask = np.zeros(field.size, dtype=np.uint8)
    mask[order] = 1
    return mask.reshape(shape)


def _render_image(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    body = gaussian_filter(mask.astype(np.float64), sigma=1.0)
    image = np.empty(mask.shape + (3,), dtype=np.float32)
    tints = 0.55 + 0.1 * rng.random(3)
    for c in range(3):
        channel = 0.2 + tints[c] * body + 0.06 * rng.standard_normal(mask.shape)
        image[..., c] = np.clip(channel, 0.0, 1.0)
    return image


def generate_synthetic_dataset(
    n: int,
    image_size: tuple[int, int] | int,
    object_ratio: float,
    seed: int = 0,
    kind: str = "blob",
    group_count: int = 0,
) -> list[Sample]:
    """Deterministic synthetic image/mask pairs with a controlled foreground fraction.

    ``kind`` selects region-style blobs or thin level-set curves.  The mask
    foreground fraction matches ``object_ratio`` to well within 2%.  With
    ``group_count > 0`` samples are assigned round-robin group labels for
    grouped cross-validation.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    height, width = image_size
    if not 0.0 < object_ratio < 1.0:
        raise ValueError(f"object_ratio must lie in (0, 1), got {object_ratio}")
    if round(object_ratio * height * width) < 1:
        raise ValueError(f"object_ratio {object_ratio} is infeasible at {height}x{width}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        mask = _synthetic_mask((height, width), object_ratio, rng, kind)
        image = _render_image(mask, rng)
        group = f"g{i % group_count:02d}" if group_count else ""
        samples.append(Sample(image=image, mask=mask, sample_id=f"synth-{i:04d}", group=group))
    return samples
