"""Cartesian k-space undersampling and dataset construction.

Images are 2-D real arrays of shape (rows, cols); rows are the phase-encode
direction, and undersampling removes whole rows.  Masks are expressed in
*centred* k-space order (DC at index ``rows // 2``), matching the usual
picture of a k-space raster; :func:`degrade` moves them into FFT order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EvoreconError
from .tensor_engine import read_tensor, write_tensor

UNIFORM = "UNIFORM"
RANDOM_VARIABLE_DENSITY = "RANDOM_VARIABLE_DENSITY"


def _check_pow2(shape):
    for d in shape[-2:]:
        if d <= 0 or d & (d - 1):
            raise ValueError(f"FFT dims must be powers of two, got {shape[-2:]}")


def fft2(x: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DFT over the last two axes (unshifted order)."""
    _check_pow2(np.shape(x))
    return np.fft.fft2(x, norm="ortho")


def ifft2(k: np.ndarray) -> np.ndarray:
    _check_pow2(np.shape(k))
    return np.fft.ifft2(k, norm="ortho")


@dataclass(frozen=True)
class KSpaceMask:
    keep: np.ndarray = field(repr=False)  # bool, centred order
    pattern: str
    reduction: float
    center_fraction: float
    seed: int | None = None

    @property
    def rows(self) -> int:
        return int(self.keep.size)

    @property
    def kept(self) -> int:
        return int(np.count_nonzero(self.keep))

    @property
    def effective_acceleration(self) -> float:
        return self.rows / self.kept

    def fft_order(self) -> np.ndarray:
        """Keep-vector rearranged to unshifted FFT row order."""
        return np.fft.ifftshift(self.keep)

    def __eq__(self, other):
        if not isinstance(other, KSpaceMask):
            return NotImplemented
        return (np.array_equal(self.keep, other.keep) and self.pattern == other.pattern
                and self.reduction == other.reduction
                and self.center_fraction == other.center_fraction and self.seed == other.seed)

    __hash__ = None


def center_rows(rows: int, center_fraction: float) -> np.ndarray:
    """Indices of the ceil(c * rows) contiguous rows around DC.

    For an even count the extra row falls on the lower-index side.
    """
    count = min(rows, math.ceil(center_fraction * rows - 1e-9))
    start = rows // 2 - count // 2
    return np.arange(start, start + count)


def make_uniform_mask(rows: int, reduction: int, center_fraction: float) -> KSpaceMask:
    """Every ``reduction``-th row from row 0, plus the centre block."""
    if reduction < 1:
        raise ValueError("reduction factor must be >= 1")
    if not 0 <= center_fraction <= 1:
        raise ValueError("center fraction must be in [0, 1]")
    keep = np.zeros(rows, dtype=bool)
    keep[::reduction] = True
    keep[center_rows(rows, center_fraction)] = True
    return KSpaceMask(keep, UNIFORM, reduction, center_fraction)


def make_random_mask(rows: int, target_reduction: float, center_fraction: float,
                     seed: int) -> KSpaceMask:
    """Centre block plus variable-density random rows.

    Non-centre rows are drawn without replacement with triangular weights
    that fall off linearly with distance from DC, until exactly
    ``ceil(rows / target_reduction)`` rows are kept.
    """
    keep = np.zeros(rows, dtype=bool)
    keep[center_rows(rows, center_fraction)] = True
    budget = math.ceil(rows / target_reduction)
    n_draw = budget - int(keep.sum())
    if n_draw > 0:
        candidates = np.flatnonzero(~keep)
        dist = np.abs(candidates - rows // 2)
        weights = (rows / 2 + 1) - dist
        rng = np.random.default_rng(seed)
        picks = rng.choice(candidates, size=n_draw, replace=False, p=weights / weights.sum())
        keep[picks] = True
    return KSpaceMask(keep, RANDOM_VARIABLE_DENSITY, target_reduction, center_fraction, seed)


@dataclass(frozen=True)
class ImagePair:
    aliased: np.ndarray
    target: np.ndarray
    scale: float


def degrade(image: np.ndarray, mask: KSpaceMask) -> ImagePair:
    """Zero-fill the rows dropped by ``mask`` and return the aliased magnitude.

    Both images are divided by the ground-truth maximum magnitude.  The
    aliased image is clipped to 1 so inputs share the target's [0, 1] range
    (zero-filling ringing can overshoot slightly).
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    if image.shape[0] != mask.rows:
        raise ValueError(f"mask has {mask.rows} rows, image has {image.shape[0]}")
    truth = np.abs(image).astype(np.float64)
    scale = float(truth.max())
    if scale == 0.0:
        raise EvoreconError("cannot normalise an all-zero image")
    spectrum = fft2(image.astype(np.complex128))
    spectrum[~mask.fft_order(), :] = 0
    aliased = np.abs(ifft2(spectrum))
    return ImagePair(np.minimum(aliased / scale, 1.0), truth / scale, scale)


# -- synthetic phantoms -------------------------------------------------------

def generate_phantoms(count: int, size: int, seed: int) -> list[np.ndarray]:
    """Random soft-edged ellipse phantoms, nonnegative, float64.

    Each image sums 3-7 ellipses; the first is a large bright "body" so every
    image has substantial signal.
    """
    rng = np.random.default_rng(seed)
    coords = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    images = []
    for _ in range(count):
        n_ell = int(rng.integers(3, 8))
        img = np.zeros((size, size))
        for e in range(n_ell):
            if e == 0:
                cy, cx = rng.uniform(-0.1, 0.1, 2)
                ay, ax = rng.uniform(0.55, 0.85, 2)
                amp = rng.uniform(0.6, 1.0)
            else:
                cy, cx = rng.uniform(-0.5, 0.5, 2)
                ay, ax = rng.uniform(0.08, 0.35, 2)
                amp = rng.uniform(0.1, 0.6)
            theta = rng.uniform(0, np.pi)
            c, s = np.cos(theta), np.sin(theta)
            u = ((xx - cx) * c + (yy - cy) * s) / ax
            v = (-(xx - cx) * s + (yy - cy) * c) / ay
            rho = np.sqrt(u * u + v * v)
            edge = 0.08
            img += amp / (1 + np.exp(np.clip((rho - 1) / edge, -50, 50)))
        images.append(img)
    return images


# -- datasets -----------------------------------------------------------------

@dataclass
class Dataset:
    train: list[ImagePair]
    validation: list[ImagePair]
    test: list[ImagePair]
    fractions: tuple[float, float, float]
    seed: int
    mask: KSpaceMask | None = None

    def arrays(self, split: str, dtype=np.float32):
        """Stacked ``(inputs, targets)`` of shape (N, H, W, 1)."""
        pairs = {"train": self.train, "validation": self.validation, "test": self.test}[split]
        if not pairs:
            h, w = (self.train or self.validation or self.test)[0].target.shape
            empty = np.zeros((0, h, w, 1), dtype=dtype)
            return empty, empty.copy()
        x = np.stack([p.aliased for p in pairs])[..., None].astype(dtype)
        y = np.stack([p.target for p in pairs])[..., None].astype(dtype)
        return x, y

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.train or self.validation or self.test)[0].target.shape


def split_sizes(n: int, fractions) -> tuple[int, int, int]:
    f_train, f_val, f_test = fractions
    if min(fractions) < 0 or abs(f_train + f_val + f_test - 1) > 1e-9:
        raise ValueError(f"split fractions must be nonnegative and sum to 1, got {fractions}")
    n_train = int(math.floor(f_train * n + 0.5))
    n_val = int(math.floor(f_val * n + 0.5))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def build_dataset(images, mask: KSpaceMask, fractions=(0.75, 0.10, 0.15), seed: int = 0) -> Dataset:
    """Shuffle, split, and degrade every image with the one shared mask."""
    n_train, n_val, _ = split_sizes(len(images), fractions)
    order = np.random.default_rng(seed).permutation(len(images))
    pairs = [degrade(images[i], mask) for i in order]
    return Dataset(pairs[:n_train], pairs[n_train:n_train + n_val], pairs[n_train + n_val:],
                   tuple(fractions), seed, mask)


# -- on-disk layout -------------------------------------------------------------

MANIFEST = "manifest.txt"
SPLITS = ("train", "validation", "test")


def save_dataset(ds: Dataset, directory) -> Path:
    """Write ETNS tensors per split plus a ``manifest.txt``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# evorecon dataset manifest", f"seed = {ds.seed}",
             "fractions = " + ",".join(repr(f) for f in ds.fractions)]
    if ds.mask is not None:
        m = ds.mask
        lines += [f"mask_pattern = {m.pattern}", f"mask_rows = {m.rows}",
                  f"mask_reduction = {m.reduction!r}", f"mask_center = {m.center_fraction!r}",
                  f"mask_seed = {'' if m.seed is None else m.seed}",
                  f"effective_acceleration = {m.effective_acceleration:.6f}"]
        write_tensor(out / "mask.etns", m.keep.astype(np.uint8))
        lines.append("file = mask.etns mask keep")
    for split in SPLITS:
        pairs = getattr(ds, split)
        if not pairs:
            continue
        write_tensor(out / f"{split}_input.etns", np.stack([p.aliased for p in pairs]))
        write_tensor(out / f"{split}_target.etns", np.stack([p.target for p in pairs]))
        write_tensor(out / f"{split}_scale.etns", np.array([p.scale for p in pairs]))
        for role in ("input", "target", "scale"):
            lines.append(f"file = {split}_{role}.etns {split} {role}")
    (out / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def load_dataset(directory) -> Dataset:
    src = Path(directory)
    manifest = src / MANIFEST
    if not manifest.exists():
        raise EvoreconError(f"{src} has no {MANIFEST}")
    meta, files = {}, []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "file":
            files.append(value.split())
        else:
            meta[key] = value
    arrays = {(split, role): read_tensor(src / name) for name, split, role in files}
    splits = {}
    for split in SPLITS:
        if (split, "input") not in arrays:
            splits[split] = []
            continue
        x, y, s = arrays[split, "input"], arrays[split, "target"], arrays[split, "scale"]
        splits[split] = [ImagePair(x[i], y[i], float(s[i])) for i in range(len(x))]
    mask = None
    if ("mask", "keep") in arrays:
        seed = meta.get("mask_seed", "")
        mask = KSpaceMask(arrays["mask", "keep"].astype(bool), meta["mask_pattern"],
                          float(meta["mask_reduction"]), float(meta["mask_center"]),
                          int(seed) if seed else None)
    fractions = tuple(float(f) for f in meta["fractions"].split(","))
    return Dataset(splits["train"], splits["validation"], splits["test"], fractions,
                   int(meta["seed"]), mask)
