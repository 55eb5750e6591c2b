"""Image ingestion, preprocessing, splitting, augmentation and synthetic data."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image
from scipy import ndimage

logger = logging.getLogger(__name__)

BENIGN, MALIGNANT = 0, 1
CLASS_DIRS = {"benign": BENIGN, "malignant": MALIGNANT}
IMAGE_SUFFIXES = (".png",)


class DataError(RuntimeError):
    """Dataset missing, empty or unreadable."""


@dataclass
class ImageRecord:
    id: str
    pixels: np.ndarray  # [C, H, W] float32 in [0, 1]
    label: int
    source: str = "synthetic"


def record_seed(global_seed: int, record_id: str, *extra: int) -> int:
    """Stable per-record seed, independent of processing order."""
    key = f"{global_seed}:{record_id}:" + ":".join(str(e) for e in extra)
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


# ---------------------------------------------------------------------------
# ingestion

def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    return arr[None]


def load_dataset(root, permissive: bool = False) -> list[ImageRecord]:
    """Load ``root/benign/*.png`` and ``root/malignant/*.png``.

    Records come back benign first, each class in lexicographic file order.
    Unreadable files raise :class:`DataError` unless ``permissive``, in which
    case they are logged and skipped.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    records = []
    for name, label in CLASS_DIRS.items():
        sub = root / name
        if not sub.is_dir():
            raise DataError(f"dataset root {root} has no {name}/ subdirectory")
        for path in sorted(p for p in sub.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
            try:
                pixels = read_image(path)
            except Exception as exc:  # PIL raises a zoo of types
                if not permissive:
                    raise DataError(f"cannot read {path}: {exc}") from exc
                logger.warning("skipping unreadable image %s: %s", path, exc)
                continue
            records.append(ImageRecord(f"{name}/{path.stem}", pixels, label, str(path)))
    if not records:
        raise DataError(f"dataset root {root} contains no images")
    return records


def write_png(path: Path, pixels: np.ndarray) -> None:
    """Write a [1, H, W] or [H, W] image in [0, 1] as 8-bit grayscale, atomically."""
    img = pixels[0] if pixels.ndim == 3 else pixels
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    atomic_write_bytes(Path(path), buf.getvalue())


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(Path(path), text.encode("utf-8"))


# ---------------------------------------------------------------------------
# preprocessing

def cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the weights of output sample i over the input samples."""
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        base = math.floor(src)
        for tap in range(base - 1, base + 3):
            m[i, min(max(tap, 0), n_in - 1)] += cubic_kernel(np.array(src - tap))
    return m


def resize_bicubic(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable Catmull-Rom resize with half-pixel centers and edge clamping.

    Output is clipped to [0, 1].
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    C, H, W = img.shape
    if (H, W) == (out_h, out_w):
        return img.astype(np.float32, copy=True)
    rows = _bicubic_matrix(H, out_h)
    cols = _bicubic_matrix(W, out_w)
    out = np.einsum("ih,chw,jw->cij", rows, img.astype(np.float64), cols)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def median_filter_3x3(img: np.ndarray) -> np.ndarray:
    """Per-channel 3x3 median with replicate-padded edges."""
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))
    return np.median(windows.reshape(windows.shape[:3] + (9,)), axis=-1).astype(img.dtype)


def preprocess(img: np.ndarray, height: int, width: int, channels: int = 1) -> np.ndarray:
    """Median filter at native resolution, then bicubic resize; grayscale is
    replicated when the model expects more channels."""
    out = resize_bicubic(median_filter_3x3(img), height, width)
    if out.shape[0] != channels:
        if out.shape[0] != 1:
            raise DataError(f"cannot map {out.shape[0]} image channels to {channels}")
        out = np.repeat(out, channels, axis=0)
    return out


def preprocess_records(records: Iterable[ImageRecord], height: int, width: int,
                       channels: int = 1) -> list[ImageRecord]:
    return [replace(r, pixels=preprocess(r.pixels, height, width, channels)) for r in records]


# ---------------------------------------------------------------------------
# splitting

@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int = 0
    fractions: tuple = (0.7, 0.1, 0.2)

    def manifest_rows(self) -> list[tuple[str, int, str]]:
        rows = []
        for name, recs in (("train", self.train), ("validation", self.validation), ("test", self.test)):
            rows.extend((r.id, r.label, name) for r in recs)
        return rows

    def manifest_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "label", "split"])
        w.writerows(self.manifest_rows())
        return buf.getvalue()


def largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    """Integer apportionment of ``total``; ties go to the earlier part."""
    quotas = [total * f for f in fractions]
    counts = [math.floor(q + 1e-9) for q in quotas]
    rest = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts


def split_dataset(records: Sequence[ImageRecord], fractions=(0.7, 0.1, 0.2),
                  seed: int = 0) -> DatasetSplit:
    """Stratified split: per-class seeded shuffle, then contiguous slices sized
    by largest-remainder rounding."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    parts: list[list] = [[], [], []]
    for label in (BENIGN, MALIGNANT):
        members = [r for r in records if r.label == label]
        if not members:
            raise DataError(f"class {label} has no records")
        rng = np.random.default_rng([seed, label])
        order = rng.permutation(len(members))
        counts = largest_remainder(len(members), fractions)
        start = 0
        for k, n in enumerate(counts):
            parts[k].extend(members[i] for i in order[start:start + n])
            start += n
    return DatasetSplit(parts[0], parts[1], parts[2], seed, tuple(fractions))


# ---------------------------------------------------------------------------
# augmentation

@dataclass
class AugmentationSpec:
    horizontal_flip_prob: float = 0.5
    vertical_flip_prob: float = 0.5
    scale_range: tuple = (0.9, 1.1)
    shear_range_degrees: tuple = (-10.0, 10.0)
    seed: int = 0

    @classmethod
    def identity(cls) -> "AugmentationSpec":
        return cls(0.0, 0.0, (1.0, 1.0), (0.0, 0.0))


def affine_warp(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Warp about the image center with bilinear sampling and replicate borders.

    ``matrix`` maps centered output coordinates (x, y) to source coordinates.
    """
    C, H, W = img.shape
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64) - cy,
                         np.arange(W, dtype=np.float64) - cx, indexing="ij")
    sx = matrix[0, 0] * xx + matrix[0, 1] * yy + cx
    sy = matrix[1, 0] * xx + matrix[1, 1] * yy + cy
    sx = np.clip(sx, 0, W - 1)
    sy = np.clip(sy, 0, H - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx, fy = sx - x0, sy - y0
    out = ((img[:, y0, x0] * (1 - fx) + img[:, y0, x1] * fx) * (1 - fy)
           + (img[:, y1, x0] * (1 - fx) + img[:, y1, x1] * fx) * fy)
    return out.astype(img.dtype)


def augment(rec: ImageRecord, spec: AugmentationSpec, draw_seed: int) -> ImageRecord:
    """Random flip / reflection / scale / shear composed into one affine warp."""
    rng = np.random.default_rng(draw_seed)
    hflip = rng.random() < spec.horizontal_flip_prob
    vflip = rng.random() < spec.vertical_flip_prob
    scale = rng.uniform(*spec.scale_range)
    shear = math.radians(rng.uniform(*spec.shear_range_degrees))
    forward = (np.diag([-1.0 if hflip else 1.0, -1.0 if vflip else 1.0])
               @ (scale * np.eye(2))
               @ np.array([[1.0, math.tan(shear)], [0.0, 1.0]]))
    if not hflip and not vflip and scale == 1.0 and shear == 0.0:
        return replace(rec, pixels=rec.pixels.copy())
    return replace(rec, pixels=affine_warp(rec.pixels, np.linalg.inv(forward)))


# ---------------------------------------------------------------------------
# synthetic two-class data

@dataclass
class SyntheticSpec:
    count_per_class: int = 32
    size: int = 64
    noise: float = 0.25
    seed: int = 0
    prefix: str = "syn"


def _smoothstep_edge(signed_dist: np.ndarray, width: float) -> np.ndarray:
    """1 inside the lesion, 0 outside, with a logistic transition of ``width`` px."""
    return 1.0 / (1.0 + np.exp(np.clip(signed_dist / max(width, 1e-3), -50, 50)))


def _lesion(rng: np.random.Generator, size: int, malignant: bool) -> tuple[np.ndarray, np.ndarray]:
    """Return (lesion mask in [0,1], posterior-acoustic modulation)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size * (0.45 + rng.uniform(-0.08, 0.08))
    cx = size * (0.5 + rng.uniform(-0.1, 0.1))
    radius = size * rng.uniform(0.15, 0.22)
    dy, dx = yy - cy, xx - cx
    theta = np.arctan2(dy, dx)
    if malignant:
        # irregular, taller-than-wide, spiculated margin
        aspect = rng.uniform(0.8, 1.05)
        r = np.ones_like(theta)
        for k in (2, 3, 5):
            r += rng.uniform(0.04, 0.12) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
        spikes = rng.integers(7, 13)
        r += rng.uniform(0.18, 0.3) * np.maximum(np.cos(spikes * theta + rng.uniform(0, 2 * np.pi)), 0) ** 3
        width = rng.uniform(0.4, 0.8)
    else:
        # smooth, wider-than-tall ellipse
        aspect = rng.uniform(1.3, 1.8)
        r = np.ones_like(theta)
        width = rng.uniform(1.8, 3.0)
    rot = rng.uniform(-0.25, 0.25)
    ex = dx * math.cos(rot) + dy * math.sin(rot)
    ey = -dx * math.sin(rot) + dy * math.cos(rot)
    rad = np.sqrt((ex / aspect) ** 2 + ey ** 2)
    mask = _smoothstep_edge(rad - radius * r, width)
    # posterior band below the lesion: shadowing (malignant) or enhancement (benign)
    below = np.clip((yy - cy) / size * 2.0, 0, 1) * np.exp(-((xx - cx) / (radius * aspect)) ** 2)
    posterior = (-0.25 if malignant else 0.15) * below
    return mask, posterior


def synthetic_image(rng: np.random.Generator, size: int, malignant: bool, noise: float) -> np.ndarray:
    yy = np.arange(size, dtype=np.float64)[:, None] / size
    xx = np.arange(size, dtype=np.float64)[None, :] / size
    tissue = (0.5 + 0.08 * np.sin(2 * np.pi * (yy * rng.uniform(2, 4) + rng.uniform(0, 1)))
              + 0.05 * np.cos(2 * np.pi * xx * rng.uniform(1, 2)))
    mask, posterior = _lesion(rng, size, malignant)
    lesion_level = rng.uniform(0.08, 0.18)
    img = tissue * (1 - mask) + lesion_level * mask + posterior * (1 - mask)
    if noise > 0:
        shape = 1.0 / noise ** 2
        img = img * rng.gamma(shape, 1.0 / shape, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)[None]


def generate_synthetic(spec: SyntheticSpec) -> list[ImageRecord]:
    """Balanced ultrasound-like phantom images; benign records first."""
    if spec.count_per_class < 1:
        raise ValueError("count_per_class must be >= 1")
    records = []
    for label, name in ((BENIGN, "benign"), (MALIGNANT, "malignant")):
        for i in range(spec.count_per_class):
            rid = f"{spec.prefix}-{name}-{i:04d}"
            rng = np.random.default_rng(record_seed(spec.seed, rid))
            records.append(ImageRecord(rid, synthetic_image(rng, spec.size, label == MALIGNANT,
                                                            spec.noise), label, "synthetic"))
    return records


def boundary_gradient_statistic(img: np.ndarray, fraction: float = 0.05) -> float:
    """Mean of the strongest ``fraction`` of gradient magnitudes.

    Speckle is suppressed first (3x3 median, then a sigma-1 Gaussian), so the
    retained pixels sit on the lesion boundary and posterior band.
    """
    smooth = ndimage.gaussian_filter(median_filter_3x3(img)[0].astype(np.float64), 1.0)
    gy, gx = np.gradient(smooth)
    mag = np.sort(np.hypot(gx, gy).ravel())
    k = max(1, int(round(fraction * mag.size)))
    return float(mag[-k:].mean())


def save_dataset(records: Sequence[ImageRecord], root) -> None:
    """Write records as ``root/<class>/<name>.png``."""
    root = Path(root)
    names = {BENIGN: "benign", MALIGNANT: "malignant"}
    for r in records:
        stem = r.id.split("/")[-1]
        write_png(root / names[r.label] / f"{stem}.png", r.pixels)


def stack(records: Sequence[ImageRecord]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([r.pixels for r in records]).astype(np.float32)
    y = np.array([r.label for r in records], dtype=np.intp)
    return x, y
