"""Feature images from flattened halves, the four partitions, augmentations."""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels
from .flatten import flatten_disk, split_sphere
from .mesh import FEATURE_NAMES, MeshError
from .seeding import derive_seed

PARTITION_LABELS = ("left_lateral", "left_medial", "right_lateral", "right_medial")
DEFAULT_SIZE = 224

FIMG_MAGIC = b"FIMG"
FIMG_VERSION = 1


class RasterError(ValueError):
    pass


@dataclass
class FeatureImage:
    """C x H x W feature raster with an H x W coverage mask."""

    data: np.ndarray
    mask: np.ndarray
    channels: tuple = FEATURE_NAMES

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.data.ndim != 3 or self.data.shape[1:] != self.mask.shape:
            raise RasterError(f"data {self.data.shape} and mask {self.mask.shape} disagree")
        self.channels = tuple(self.channels)

    @property
    def shape(self):
        return self.data.shape

    @property
    def coverage(self):
        return float(self.mask.mean())

    def copy(self):
        return FeatureImage(self.data.copy(), self.mask.copy(), self.channels)

    def __eq__(self, other):
        return (
            isinstance(other, FeatureImage)
            and self.channels == other.channels
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.mask, other.mask)
        )


@dataclass
class PartitionSet:
    images: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [k for k in PARTITION_LABELS if k not in self.images]
        if missing:
            raise RasterError(f"missing partitions: {missing}")
        shapes = {self.images[k].shape for k in PARTITION_LABELS}
        if len(shapes) != 1:
            raise RasterError(f"partitions disagree in shape: {sorted(shapes)}")

    @property
    def shape(self):
        return self.images[PARTITION_LABELS[0]].shape

    def __getitem__(self, label):
        return self.images[label]

    def map(self, fn):
        return PartitionSet({k: fn(self.images[k]) for k in PARTITION_LABELS})

    def to_array(self):
        """Stacked (4, C, H, W) data in label order."""
        return np.stack([self.images[k].data for k in PARTITION_LABELS])

    def masks(self):
        return np.stack([self.images[k].mask for k in PARTITION_LABELS])

    def __eq__(self, other):
        return isinstance(other, PartitionSet) and all(
            self.images[k] == other.images[k] for k in PARTITION_LABELS
        )


# ---------------------------------------------------------------- rasterization


def rasterize(pmap, mesh, height=DEFAULT_SIZE, width=DEFAULT_SIZE, channels=FEATURE_NAMES):
    """Barycentric interpolation of vertex features at pixel centers."""
    if mesh.n_faces == 0:
        raise RasterError("mesh has no faces")
    missing = [c for c in channels if c not in mesh.features]
    if missing:
        raise RasterError(f"missing feature channel(s): {', '.join(missing)}")
    values = np.column_stack([mesh.features[c] for c in channels])
    data, face_id = _kernels.rasterize_faces(pmap.uv, mesh.faces, values, height, width)
    return FeatureImage(data, face_id >= 0, channels)


def build_partitions(left_sphere, right_sphere, height=DEFAULT_SIZE, width=DEFAULT_SIZE,
                     tol=0.05, max_iter=50, channels=FEATURE_NAMES):
    """Split, flatten and rasterize both spheres into the four partitions.

    Left sphere: x < 0 half is lateral, x >= 0 half medial. The right sphere
    is the mirror convention (x >= 0 lateral).
    """
    for side, sphere in (("left", left_sphere), ("right", right_sphere)):
        missing = [c for c in channels if c not in sphere.features]
        if missing:
            raise RasterError(f"{side} sphere is missing feature channel(s): {', '.join(missing)}")
    images = {}
    for side, sphere in (("left", left_sphere), ("right", right_sphere)):
        pos, neg = split_sphere(sphere)
        halves = {"lateral": neg, "medial": pos} if side == "left" else {"lateral": pos, "medial": neg}
        for part, half in halves.items():
            res = flatten_disk(half, tol=tol, max_iter=max_iter)
            images[f"{side}_{part}"] = rasterize(res.map, half, height, width, channels)
    return PartitionSet(images)


# ---------------------------------------------------------------- augmentations


def rotate_image(img, degrees):
    """Rotate about the image center with bilinear resampling.

    Pixels that sample outside the frame become 0 with mask False; the mask
    itself is resampled by nearest neighbour.
    """
    if degrees == 0:
        return img.copy()
    theta = np.deg2rad(degrees)
    out, mask = _kernels.rotate_bilinear(
        np.ascontiguousarray(img.data, dtype=np.float64), img.mask, np.cos(theta), np.sin(theta)
    )
    return FeatureImage(out, mask, img.channels)


def add_noise(img, sigma, seed):
    """Gaussian noise with std sigma x (per-channel std over masked pixels)."""
    if sigma < 0:
        raise RasterError("sigma must be >= 0")
    if sigma == 0 or not img.mask.any():
        return img.copy()
    rng = np.random.default_rng(seed)
    out = img.data.copy()
    m = img.mask
    n = int(m.sum())
    for ch in range(out.shape[0]):
        scale = sigma * out[ch][m].std()
        out[ch][m] += rng.normal(0.0, 1.0, n) * scale
    return FeatureImage(out, img.mask.copy(), img.channels)


def gaussian_kernel(sigma):
    radius = int(np.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _separable(a, k):
    """Zero-padded separable convolution over the last two axes."""
    out = ndimage.correlate1d(a, k, axis=-1, mode="constant", cval=0.0)
    return ndimage.correlate1d(out, k, axis=-2, mode="constant", cval=0.0)


def gaussian_blur(img, sigma):
    """Separable Gaussian blur renormalized over the in-mask support."""
    if sigma < 0:
        raise RasterError("sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    m = img.mask.astype(np.float64)
    num = _separable(img.data * m, k)
    den = _separable(m, k)
    out = np.zeros_like(img.data)
    ok = img.mask & (den > 0)
    out[:, ok] = num[:, ok] / den[ok]
    return FeatureImage(out, img.mask.copy(), img.channels)


@dataclass(frozen=True)
class AugmentPolicy:
    """Uniform ranges for rotation (degrees), noise sigma and blur sigma.

    ``shared`` applies one draw to all four partitions of a view instead of
    independent draws per partition.
    """

    rotation: tuple = (-15.0, 15.0)
    noise: tuple = (0.01, 0.05)
    blur: tuple = (0.5, 1.5)
    shared: bool = False

    @classmethod
    def identity(cls):
        return cls((0.0, 0.0), (0.0, 0.0), (0.0, 0.0))


def _draw(rng, bounds):
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def augment_image(img, policy, rng):
    deg = _draw(rng, policy.rotation)
    noise = _draw(rng, policy.noise)
    blur = _draw(rng, policy.blur)
    noise_seed = int(rng.integers(2 ** 63 - 1))
    out = rotate_image(img, deg)
    out = add_noise(out, noise, noise_seed)
    return gaussian_blur(out, blur)


def augment_view(partitions, policy, seed):
    rng = np.random.default_rng(seed)
    if policy.shared:
        state = rng.bit_generator.state
        images = {}
        for k in PARTITION_LABELS:
            rng.bit_generator.state = state
            images[k] = augment_image(partitions[k], policy, rng)
        return PartitionSet(images)
    return PartitionSet({k: augment_image(partitions[k], policy, rng) for k in PARTITION_LABELS})


def augment_pair(partitions, policy, seed):
    """Two independently augmented views of one partition set."""
    return (
        augment_view(partitions, policy, derive_seed(seed, "view-0")),
        augment_view(partitions, policy, derive_seed(seed, "view-1")),
    )


# ---------------------------------------------------------------- normalization


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    channels: tuple = FEATURE_NAMES


def channel_stats(dataset):
    """Per-channel mean/std over every masked pixel of every partition."""
    if not dataset:
        raise RasterError("empty dataset")
    n_ch = dataset[0].shape[0]
    total = np.zeros(n_ch)
    count = 0
    for ps in dataset:
        for k in PARTITION_LABELS:
            img = ps[k]
            vals = img.data[:, img.mask]
            total += vals.sum(axis=1)
            count += vals.shape[1]
    mean = total / count
    var = np.zeros(n_ch)
    for ps in dataset:
        for k in PARTITION_LABELS:
            img = ps[k]
            var += ((img.data[:, img.mask] - mean[:, None]) ** 2).sum(axis=1)
    var /= count
    std = np.sqrt(var)
    channels = dataset[0][PARTITION_LABELS[0]].channels
    zero = [channels[c] for c in range(n_ch) if std[c] <= 1e-12 * max(1.0, abs(mean[c]))]
    if zero:
        raise RasterError(f"zero variance in channel(s): {', '.join(zero)}")
    return ChannelStats(mean, std, channels)


def apply_stats(partitions, stats):
    def norm(img):
        data = (img.data - stats.mean[:, None, None]) / stats.std[:, None, None]
        data[:, ~img.mask] = 0.0
        return FeatureImage(data, img.mask.copy(), img.channels)

    return partitions.map(norm)


def normalize_channels(dataset):
    """Z-score every channel with statistics pooled over the dataset."""
    stats = channel_stats(dataset)
    return [apply_stats(ps, stats) for ps in dataset], stats


def select_channels(partitions, keep):
    """Zero every channel not named in ``keep``."""
    def sel(img):
        data = img.data.copy()
        for c, name in enumerate(img.channels):
            if name not in keep:
                data[c] = 0.0
        return FeatureImage(data, img.mask.copy(), img.channels)

    return partitions.map(sel)


# ---------------------------------------------------------------- FIMG format


def write_fimg(path, img):
    c, h, w = img.shape
    with Path(path).open("wb") as fh:
        fh.write(FIMG_MAGIC)
        fh.write(struct.pack("<4I", FIMG_VERSION, c, h, w))
        fh.write(img.data.astype("<f4").tobytes(order="C"))
        fh.write(img.mask.astype(np.uint8).tobytes(order="C"))


def read_fimg(path, channels=FEATURE_NAMES):
    raw = Path(path).read_bytes()
    if raw[:4] != FIMG_MAGIC:
        raise RasterError(f"{path}: not a FIMG file")
    version, c, h, w = struct.unpack_from("<4I", raw, 4)
    if version != FIMG_VERSION:
        raise RasterError(f"{path}: unsupported FIMG version {version}")
    off = 20
    n = c * h * w
    if len(raw) != off + 4 * n + h * w:
        raise RasterError(f"{path}: truncated FIMG payload")
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(c, h, w)
    mask = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=off + 4 * n).reshape(h, w) != 0
    if len(channels) != c:
        channels = tuple(f"ch{i}" for i in range(c))
    return FeatureImage(data, mask, channels)
