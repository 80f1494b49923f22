"""Detector dataset preprocessing: 2x2 tiling, grayscale subset, 90-degree
rotations and the train/val/test split.

Boxes are in continuous pixel-edge coordinates: an image of width W spans
x in [0, W].
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ValidationError

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Annotation:
    label: str
    box: tuple

    @property
    def area(self):
        x0, y0, x1, y1 = self.box
        return (x1 - x0) * (y1 - y0)


@dataclass(eq=False)
class AnnotatedImage:
    image: np.ndarray
    annotations: list = field(default_factory=list)
    name: str = ""

    @property
    def width(self):
        return self.image.shape[1]

    @property
    def height(self):
        return self.image.shape[0]

    def __post_init__(self):
        self.image = np.asarray(self.image)
        w, h = self.width, self.height
        for a in self.annotations:
            x0, y0, x1, y1 = a.box
            if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                raise ValidationError(f"box {a.box} outside {w}x{h} image")


def tile_bounds(width, height):
    """Quadrant rectangles (x0, y0, x1, y1), row-major; odd extra pixel goes right/bottom."""
    mx, my = width // 2, height // 2
    return [(0, 0, mx, my), (mx, 0, width, my), (0, my, mx, height), (mx, my, width, height)]


def tile_annotations(width, height, annotations, min_area_keep=0.10):
    """Per-quadrant annotation lists in tile coordinates, without touching pixels.

    A box is clipped to each quadrant it overlaps and kept there when the
    clipped area is at least ``min_area_keep`` of the original.
    """
    out = []
    for tx0, ty0, tx1, ty1 in tile_bounds(width, height):
        anns = []
        for ann in annotations:
            x0, y0, x1, y1 = ann.box
            cx0, cy0 = max(x0, tx0), max(y0, ty0)
            cx1, cy1 = min(x1, tx1), min(y1, ty1)
            if cx1 <= cx0 or cy1 <= cy0:
                continue
            if (cx1 - cx0) * (cy1 - cy0) < min_area_keep * ann.area:
                continue
            anns.append(Annotation(ann.label, (cx0 - tx0, cy0 - ty0, cx1 - tx0, cy1 - ty0)))
        out.append(anns)
    return out


def tile_2x2(a: AnnotatedImage, min_area_keep=0.10):
    if a.width < 2 or a.height < 2:
        raise ValidationError("image too small to tile")
    per_tile = tile_annotations(a.width, a.height, a.annotations, min_area_keep)
    tiles = []
    for t, ((tx0, ty0, tx1, ty1), anns) in enumerate(zip(tile_bounds(a.width, a.height), per_tile)):
        name = f"{a.name}_t{t}" if a.name else ""
        tiles.append(AnnotatedImage(a.image[ty0:ty1, tx0:tx1].copy(), anns, name))
    return tiles


def _rotate_box_once(box, width):
    x0, y0, x1, y1 = box
    return (y0, width - x1, y1, width - x0)


def rotate_box(box, width, height, turns):
    """Box after ``turns`` counter-clockwise quarter turns of a width x height image."""
    for _ in range(int(turns) % 4):
        box = _rotate_box_once(box, width)
        width, height = height, width
    return box


def rotate90(a: AnnotatedImage, turns=1):
    """Counter-clockwise rotation by 90 * turns degrees."""
    turns = int(turns) % 4
    anns = [Annotation(x.label, rotate_box(x.box, a.width, a.height, turns)) for x in a.annotations]
    return AnnotatedImage(np.ascontiguousarray(np.rot90(a.image, turns)), anns, a.name)


def random_rotate90(dataset, seed=0):
    """Rotate each image by a seeded random multiple of 90 degrees (0 included)."""
    rng = np.random.default_rng(seed)
    turns = rng.integers(0, 4, size=len(dataset))
    return [rotate90(a, int(t)) for a, t in zip(dataset, turns)]


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def to_grayscale(image):
    img = np.asarray(image)
    if img.ndim == 2:
        return img.copy()
    gray = img[..., :3].astype(float) @ LUMA
    if np.issubdtype(img.dtype, np.integer):
        gray = np.clip(np.rint(gray), np.iinfo(img.dtype).min, np.iinfo(img.dtype).max)
    out = np.repeat(gray[..., None], img.shape[2], axis=2).astype(img.dtype)
    if img.shape[2] > 3:
        out[..., 3:] = img[..., 3:]
    return out


def grayscale_selection(n, fraction=0.15, seed=0):
    """Sorted indices of the images chosen for grayscale conversion."""
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError("fraction must be in [0, 1]")
    count = _round_half_up(fraction * n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.permutation(n)[:count])


def grayscale_fraction(dataset, fraction=0.15, seed=0):
    chosen = set(grayscale_selection(len(dataset), fraction, seed).tolist())
    return [
        AnnotatedImage(to_grayscale(a.image), list(a.annotations), a.name) if i in chosen else a
        for i, a in enumerate(dataset)
    ]


def split_sizes(n, ratios=(0.85, 0.09, 0.06)):
    """Rounded val/test targets; train takes the remainder."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError("split ratios must sum to 1")
    if any(r < 0 for r in ratios):
        raise ValidationError("split ratios must be non-negative")
    n_val = _round_half_up(ratios[1] * n)
    n_test = _round_half_up(ratios[2] * n)
    return n - n_val - n_test, n_val, n_test


def split(dataset, ratios=(0.85, 0.09, 0.06), seed=0):
    items = list(dataset)
    if not items:
        raise ValidationError("cannot split an empty dataset")
    n_train, n_val, _ = split_sizes(len(items), ratios)
    order = np.random.default_rng(seed).permutation(len(items))
    shuffled = [items[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]
