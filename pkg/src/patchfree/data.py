"""Scene containers, the on-disk scene format, splits and the synthetic scene.

A scene on disk is a header plus raw payload files next to it::

    scene.hdr     UTF-8 ``key: value`` lines
    scene.cube    float32 little-endian, band-row-column order
    scene.labels  uint16 little-endian, row-major (0 = unlabeled)
    scene.train   optional uint8 0/1 mask, row-major
    scene.test    optional uint8 0/1 mask, row-major

Header keys: ``bands``, ``height``, ``width``, ``classes``, ``dtype``
(``float32``), ``byte_order`` (``little``), ``labels_dtype`` (``uint16``),
``class_names`` (comma separated, optional), ``train_mask`` / ``test_mask``
(payload file names relative to the header, optional).
"""
from dataclasses import dataclass, field
import math
import os
import warnings

import numpy as np

from .errors import ConfigError, FormatError
from .rng import SplitMix64


@dataclass
class HsiScene:
    cube: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray = None
    test_mask: np.ndarray = None
    class_names: list = field(default_factory=list)
    num_classes: int = 0

    def __post_init__(self):
        self.cube = np.ascontiguousarray(self.cube, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.cube.ndim != 3 or self.labels.shape != self.cube.shape[1:]:
            raise FormatError(f"cube {self.cube.shape} and labels {self.labels.shape} disagree")
        if not self.num_classes:
            self.num_classes = int(self.labels.max(initial=0))
        for name in ("train_mask", "test_mask"):
            m = getattr(self, name)
            if m is not None:
                m = np.asarray(m, dtype=bool)
                if m.shape != self.labels.shape:
                    raise FormatError(f"{name} shape {m.shape} != {self.labels.shape}")
                if (m & (self.labels == 0)).any():
                    raise FormatError(f"{name} covers unlabeled pixels")
                setattr(self, name, m)
        if self.train_mask is not None and self.test_mask is not None:
            if (self.train_mask & self.test_mask).any():
                raise FormatError("train and test masks overlap")

    @property
    def bands(self):
        return self.cube.shape[0]

    @property
    def height(self):
        return self.cube.shape[1]

    @property
    def width(self):
        return self.cube.shape[2]

    def class_counts(self, mask=None):
        lab = self.labels if mask is None else np.where(mask, self.labels, 0)
        counts = np.bincount(lab.ravel(), minlength=self.num_classes + 1)
        return {k: int(counts[k]) for k in range(1, self.num_classes + 1)}


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def scene_paths(prefix):
    return {ext: f"{prefix}.{ext}" for ext in ("hdr", "cube", "labels", "train", "test")}


def save_scene(scene, prefix):
    """Write ``prefix.hdr``, ``prefix.cube``, ``prefix.labels`` (+ masks)."""
    paths = scene_paths(prefix)
    lines = [
        f"bands: {scene.bands}",
        f"height: {scene.height}",
        f"width: {scene.width}",
        f"classes: {scene.num_classes}",
        "dtype: float32",
        "byte_order: little",
        "labels_dtype: uint16",
    ]
    if scene.class_names:
        lines.append("class_names: " + ",".join(scene.class_names))
    scene.cube.astype("<f4").tofile(paths["cube"])
    scene.labels.astype("<u2").tofile(paths["labels"])
    for key, ext in (("train_mask", "train"), ("test_mask", "test")):
        m = getattr(scene, key)
        if m is not None:
            m.astype(np.uint8).tofile(paths[ext])
            lines.append(f"{key}: {os.path.basename(paths[ext])}")
    with open(paths["hdr"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return paths


def read_header(path):
    header = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise FormatError(f"{path}:{n}: expected 'key: value', got {line!r}")
            key, value = line.split(":", 1)
            header[key.strip()] = value.strip()
    for key in ("bands", "height", "width", "classes"):
        if key not in header:
            raise FormatError(f"{path}: missing header key {key!r}")
        try:
            header[key] = int(header[key])
        except ValueError:
            raise FormatError(f"{path}: {key} must be an integer, got {header[key]!r}") from None
    return header


def _read_raw(path, dtype, count, what):
    expected = count * np.dtype(dtype).itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise FormatError(f"{path}: {what} payload is {actual} bytes, expected {expected}")
    return np.fromfile(path, dtype=dtype, count=count)


def load_scene(cube_path, labels_path, header_path):
    header = read_header(header_path)
    if header.get("dtype", "float32") != "float32":
        raise FormatError(f"{header_path}: unknown cube dtype {header['dtype']!r}")
    if header.get("labels_dtype", "uint16") != "uint16":
        raise FormatError(f"{header_path}: unknown labels dtype {header['labels_dtype']!r}")
    if header.get("byte_order", "little") != "little":
        raise FormatError(f"{header_path}: unsupported byte order {header['byte_order']!r}")
    c, h, w, k = header["bands"], header["height"], header["width"], header["classes"]
    cube = _read_raw(cube_path, "<f4", c * h * w, "cube").reshape(c, h, w)
    labels = _read_raw(labels_path, "<u2", h * w, "labels").reshape(h, w)
    over = np.flatnonzero(labels.ravel() > k)
    if over.size:
        i = int(over[0])
        raise FormatError(f"{labels_path}: label {int(labels.ravel()[i])} at byte offset {2 * i} "
                          f"exceeds the declared {k} classes")
    masks = {}
    base = os.path.dirname(header_path)
    for key in ("train_mask", "test_mask"):
        if key in header:
            mp = os.path.join(base, header[key])
            masks[key] = _read_raw(mp, "u1", h * w, key).reshape(h, w).astype(bool)
    names = [s.strip() for s in header["class_names"].split(",")] if header.get("class_names") else []
    return HsiScene(cube.astype(np.float32), labels.astype(np.uint16), masks.get("train_mask"),
                    masks.get("test_mask"), names, k)


def load_scene_prefix(prefix):
    p = scene_paths(prefix)
    return load_scene(p["cube"], p["labels"], p["hdr"])


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def random_split(labels, per_class_train, seed=0):
    """Pick ``min(per_class_train, count - 1)`` training pixels per class.

    Positions are taken in row-major order and shuffled with the
    ``(seed, class)`` SplitMix64 stream; the rest of the class is test.
    """
    if per_class_train < 1:
        raise ConfigError("per_class_train must be >= 1")
    labels = np.asarray(labels)
    train = np.zeros(labels.shape, bool)
    test = np.zeros(labels.shape, bool)
    for k in np.unique(labels[labels > 0]):
        flat = np.flatnonzero(labels.ravel() == k)
        if flat.size < 2:
            warnings.warn(f"class {int(k)} has {flat.size} sample(s); skipped in split", stacklevel=2)
            continue
        n = min(per_class_train, flat.size - 1)
        order = SplitMix64(seed, int(k)).permutation(flat.size)
        chosen = flat[np.asarray(order[:n])]
        train.ravel()[chosen] = True
        test.ravel()[flat] = True
        test.ravel()[chosen] = False
    return train, test


def normalize_bands(cube):
    """Per-band zero mean, unit standard deviation (std floored at 1e-8)."""
    c = np.asarray(cube, dtype=np.float64)
    mean = c.mean(axis=(1, 2), keepdims=True)
    std = np.maximum(c.std(axis=(1, 2), keepdims=True), 1e-8)
    return ((c - mean) / std).astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic scene
# ---------------------------------------------------------------------------


def tile_bounds(height, width, classes):
    """Rectangles ``(r0, r1, c0, c1)`` for each class, in class order.

    ``floor(sqrt(K))`` tile rows; every row but the last holds
    ``ceil(K / rows)`` tiles, the last row takes the rest.
    """
    nrows = max(1, int(math.isqrt(classes)))
    per_row = math.ceil(classes / nrows)
    counts = [per_row] * (nrows - 1) + [classes - per_row * (nrows - 1)]
    out = []
    for i, n in enumerate(counts):
        r0, r1 = i * height // len(counts), (i + 1) * height // len(counts)
        for j in range(n):
            out.append((r0, r1, j * width // n, (j + 1) * width // n))
    return out


def class_signatures(bands, classes):
    """Smooth, mutually distinct spectra: a cosine of rising frequency per class."""
    b = np.arange(bands) / max(1, bands - 1)
    return np.stack([0.5 + 0.4 * np.cos(np.pi * (k + 1) * b) for k in range(classes)])


def generate_synthetic_scene(height=64, width=64, bands=8, classes=4, noise_sigma=0.1, seed=0):
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if bands < classes:
        raise ConfigError(f"need bands >= classes, got {bands} < {classes}")
    labels = np.zeros((height, width), np.uint16)
    for k, (r0, r1, c0, c1) in enumerate(tile_bounds(height, width, classes), 1):
        labels[r0:r1, c0:c1] = k
    sig = class_signatures(bands, classes)
    cube = sig[labels.astype(np.int64) - 1].transpose(2, 0, 1)
    rng = np.random.default_rng(seed)
    cube = cube + noise_sigma * rng.standard_normal(cube.shape)
    return HsiScene(cube.astype(np.float32), labels, class_names=[f"class{k}" for k in range(1, classes + 1)],
                    num_classes=classes)


def nearest_signature_predict(cube, signatures):
    """1-nearest-signature classifier used as a separability oracle."""
    x = np.asarray(cube, np.float64).reshape(cube.shape[0], -1).T
    d = ((x[:, None, :] - signatures[None, :, :]) ** 2).sum(axis=2)
    return (np.argmin(d, axis=1) + 1).reshape(cube.shape[1:])
