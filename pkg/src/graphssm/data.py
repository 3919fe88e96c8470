"""Hyperspectral cube I/O, normalization, patches, splits, synthetic cubes.

On disk a cube named ``<base>`` is three files:

* ``<base>.json``      sidecar: height, width, bands, dtype, layout, classes
* ``<base>.raw``       float32 little-endian raster, band-interleaved by
                       pixel (row-major [H, W, D])
* ``<base>.labels.raw`` uint16 little-endian [H, W] class ids, 0 = unlabeled

In memory everything is float64; rasters round through float32 on save, and
the synthesizer pre-rounds so save/load round-trips bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "HsiCube",
    "Splits",
    "DataError",
    "save_cube",
    "load_cube",
    "normalize_bands",
    "extract_patch",
    "make_splits",
    "synth_cube",
]


class DataError(ValueError):
    """Cube or split input is malformed or inconsistent."""


@dataclass
class HsiCube:
    data: np.ndarray            # [H, W, D] float64
    labels: np.ndarray          # [H, W] int64, 0 = unlabeled, classes 1..K
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DataError(f"cube raster must be [H,W,D], got {self.data.shape}")
        if self.labels.shape != self.data.shape[:2]:
            raise DataError(f"label raster {self.labels.shape} does not match "
                            f"cube {self.data.shape[:2]}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def num_classes(self) -> int:
        """Count of real classes; ids run 1..num_classes, 0 marks unlabeled."""
        return int(self.labels.max())


@dataclass
class Splits:
    """Flat row-major pixel indices per role."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def to_json(self) -> str:
        payload = {"seed": self.seed,
                   "train": self.train.tolist(),
                   "val": self.val.tolist(),
                   "test": self.test.tolist()}
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "Splits":
        try:
            payload = json.loads(text)
            return Splits(train=np.asarray(payload["train"], dtype=np.int64),
                          val=np.asarray(payload["val"], dtype=np.int64),
                          test=np.asarray(payload["test"], dtype=np.int64),
                          seed=int(payload["seed"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"bad splits JSON: {exc}") from exc


def save_cube(cube: HsiCube, base: str | Path) -> None:
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "dtype": "float32",
        "layout": "bip",
        "classes": list(cube.class_names),
    }
    Path(str(base) + ".json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    raster = np.ascontiguousarray(cube.data, dtype="<f4")
    Path(str(base) + ".raw").write_bytes(raster.tobytes())
    if cube.labels.min() < 0 or cube.labels.max() > np.iinfo(np.uint16).max:
        raise DataError("labels do not fit in uint16")
    labels = np.ascontiguousarray(cube.labels, dtype="<u2")
    Path(str(base) + ".labels.raw").write_bytes(labels.tobytes())


def load_cube(base: str | Path, normalize: bool = True) -> HsiCube:
    base = Path(base)
    meta_path = Path(str(base) + ".json")
    if not meta_path.is_file():
        raise DataError(f"cube sidecar not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        h, w, d = int(meta["height"]), int(meta["width"]), int(meta["bands"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad cube sidecar {meta_path}: {exc}") from exc
    raw_path = Path(str(base) + ".raw")
    if not raw_path.is_file():
        raise DataError(f"cube raster not found: {raw_path}")
    raw = raw_path.read_bytes()
    expected = h * w * d * 4
    if len(raw) != expected:
        raise DataError(f"cube raster {raw_path} is {len(raw)} bytes, "
                        f"expected {expected} for {h}x{w}x{d} float32")
    data = np.frombuffer(raw, dtype="<f4").reshape(h, w, d).astype(np.float64)
    if not np.isfinite(data).all():
        raise DataError(f"cube raster {raw_path} contains non-finite values")
    labels_path = Path(str(base) + ".labels.raw")
    if not labels_path.is_file():
        raise DataError(f"label raster not found: {labels_path}")
    lraw = labels_path.read_bytes()
    if len(lraw) != h * w * 2:
        raise DataError(f"label raster {labels_path} is {len(lraw)} bytes, "
                        f"expected {h * w * 2}")
    labels = np.frombuffer(lraw, dtype="<u2").reshape(h, w).astype(np.int64)
    if normalize:
        data = normalize_bands(data)
    return HsiCube(data=data, labels=labels,
                   class_names=list(meta.get("classes", [])))


def normalize_bands(data: np.ndarray) -> np.ndarray:
    """Min-max each band to [0, 1]; a constant band maps to all zeros."""
    data = np.asarray(data, dtype=np.float64)
    lo = data.min(axis=(0, 1), keepdims=True)
    hi = data.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    out = np.zeros_like(data)
    np.divide(data - lo, span, out=out, where=span > 0)
    return out


def extract_patch(data: np.ndarray, row: int, col: int, size: int) -> np.ndarray:
    """Zero-padded size x size x D window centered on (row, col)."""
    if size % 2 == 0 or size < 1:
        raise DataError(f"patch size must be odd and positive, got {size}")
    h, w, d = data.shape
    if not (0 <= row < h and 0 <= col < w):
        raise DataError(f"center ({row},{col}) outside {h}x{w} raster")
    half = size // 2
    out = np.zeros((size, size, d))
    r0, r1 = max(0, row - half), min(h, row + half + 1)
    c0, c1 = max(0, col - half), min(w, col + half + 1)
    out[r0 - (row - half):r1 - (row - half),
        c0 - (col - half):c1 - (col - half)] = data[r0:r1, c0:c1]
    return out


def make_splits(labels: np.ndarray, counts, seed: int) -> Splits:
    """Fixed-count per-class sampling without replacement.

    ``counts`` is either one (train, val) pair used for every class or a
    mapping class_id -> (train, val). The remainder of each class goes to
    test; id 0 marks unlabeled pixels and never enters any split. Sampling
    order is deterministic in ``seed``; classes are processed in ascending
    id order with a child generator each, so adding a class does not
    reshuffle the others.
    """
    flat = np.asarray(labels).ravel()
    classes = np.unique(flat)
    classes = classes[classes != 0]
    if classes.size == 0:
        raise DataError("label raster has no labeled pixels")
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(len(classes))
    train, val, test = [], [], []
    for cls, child in zip(classes, children):
        cls = int(cls)
        if isinstance(counts, dict):
            if cls not in counts:
                raise DataError(f"no split counts for class {cls}")
            n_train, n_val = counts[cls]
        else:
            n_train, n_val = counts
        idx = np.flatnonzero(flat == cls)
        if n_train + n_val > idx.size:
            raise DataError(f"class {cls} has {idx.size} pixels, cannot take "
                            f"{n_train} train + {n_val} val")
        rng = np.random.Generator(np.random.PCG64(child))
        perm = rng.permutation(idx)
        train.append(perm[:n_train])
        val.append(perm[n_train:n_train + n_val])
        test.append(perm[n_train + n_val:])
    return Splits(train=np.sort(np.concatenate(train)),
                  val=np.sort(np.concatenate(val)),
                  test=np.sort(np.concatenate(test)),
                  seed=seed)


def _smooth_curves(rng: np.random.Generator, count: int, bands: int) -> np.ndarray:
    """Random smooth band curves, rows orthonormalized."""
    window = max(3, bands // 4)
    kernel = np.ones(window) / window
    raw = rng.standard_normal((count, bands + window - 1))
    smooth = np.array([np.convolve(row, kernel, mode="valid") for row in raw])
    # Gram-Schmidt over the band axis
    basis = np.zeros_like(smooth)
    for i in range(count):
        v = smooth[i].copy()
        for j in range(i):
            v -= (v @ basis[j]) * basis[j]
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            raise DataError("degenerate signature draw; use more bands")
        basis[i] = v / norm
    return basis

# Distance between any two class signatures, in units of `separation`.
# Chosen so separation 0.5 with noise 0.1 is ambiguous pixel by pixel but
# clean with patch context (see the training tests).
SIGNATURE_SCALE = 0.85


def synth_cube(height: int, width: int, bands: int, classes: int,
               separation: float, noise_sigma: float, seed: int,
               min_class_pixels: int = 1, class_names: list[str] | None = None) -> HsiCube:
    """Voronoi class regions with smooth separated spectral signatures.

    Two region seeds per class are scattered uniformly; each pixel takes the
    class of its nearest seed, giving spatially contiguous regions. Class k's
    signature is base + separation * SIGNATURE_SCALE / sqrt(2) * u_k with
    orthonormal smooth u_k, so every signature pair sits at L2 distance
    separation * SIGNATURE_SCALE; i.i.d. N(0, noise_sigma^2) per band on top.
    Separation 0 collapses all signatures onto the base curve. Class ids run
    1..classes; synthetic cubes have no unlabeled (0) pixels.

    Requires bands >= classes (orthonormal signatures). Re-draws the region
    seeds (deterministically) until every class has ``min_class_pixels``.
    """
    if classes < 2:
        raise DataError(f"need at least two classes, got {classes}")
    if bands < classes:
        raise DataError(f"need bands >= classes for distinct signatures, "
                        f"got {bands} < {classes}")
    if separation < 0 or noise_sigma < 0:
        raise DataError("separation and noise_sigma must be nonnegative")
    root = np.random.SeedSequence(seed)
    sig_seq, region_seq, noise_seq = root.spawn(3)

    rng = np.random.Generator(np.random.PCG64(sig_seq))
    curves = _smooth_curves(rng, classes, bands)
    t = np.linspace(0.0, 1.0, bands)
    base = 0.45 + 0.25 * np.sin(2.0 * np.pi * (t + 0.13)) * (0.6 + 0.4 * t)
    amp = separation * SIGNATURE_SCALE / np.sqrt(2.0)
    signatures = base[None, :] + amp * curves          # [K, D]

    labels = None
    for attempt, child in enumerate(region_seq.spawn(64)):
        rrng = np.random.Generator(np.random.PCG64(child))
        centers = np.column_stack([rrng.uniform(0, height, 2 * classes),
                                   rrng.uniform(0, width, 2 * classes)])
        rows, cols = np.mgrid[0:height, 0:width]
        d2 = ((rows[..., None] - centers[:, 0]) ** 2
              + (cols[..., None] - centers[:, 1]) ** 2)
        cand = (d2.argmin(axis=2) % classes).astype(np.int64) + 1
        counts = np.bincount(cand.ravel(), minlength=classes + 1)[1:]
        if counts.min() >= min_class_pixels:
            labels = cand
            break
    if labels is None:
        raise DataError(f"could not place {classes} classes with at least "
                        f"{min_class_pixels} pixels each on {height}x{width}")

    nrng = np.random.Generator(np.random.PCG64(noise_seq))
    data = signatures[labels - 1] + nrng.normal(0.0, noise_sigma, (height, width, bands))
    data = data.astype(np.float32).astype(np.float64)   # bitwise save/load
    names = class_names or [f"class_{k}" for k in range(1, classes + 1)]
    if len(names) != classes:
        raise DataError(f"{len(names)} class names for {classes} classes")
    return HsiCube(data=data, labels=labels, class_names=list(names))
