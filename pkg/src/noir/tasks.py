"""Synthetic paired-image tasks and grid resampling.

Each task yields an (input, target) image pair per sample on the same
cell-centred grid of [-1, 1]^2:

``seg2d``        noisy gray image of ellipses/rectangles -> binary mask
``multiseg2d``   same image, ellipses and rectangles as separate classes
``complete2d``   binary mask with a rectangular hole -> complete mask
``translate2d``  gray image -> sqrt-remapped, 3x3 box-blurred image

Categorical images are stored one-hot (channel axis last).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .inr import SignalSample, grid_coords

KINDS = ("seg2d", "multiseg2d", "complete2d", "translate2d")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "seg2d"
    resolution: int = 48
    n_samples: int = 320
    noise: float = 0.02
    shape_count: tuple[int, int] = (1, 3)
    seed: int = 0
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        if self.resolution < 8:
            raise ConfigError("resolution must be >= 8")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if len(self.splits) != 3 or abs(sum(self.splits) - 1.0) > 1e-9 or min(self.splits) < 0:
            raise ConfigError(f"split fractions {self.splits} must be nonnegative and sum to 1")
        lo, hi = self.shape_count
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad shape_count range {self.shape_count}")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")

    @property
    def in_channels(self) -> int:
        return 2 if self.kind == "complete2d" else 1

    @property
    def out_channels(self) -> int:
        return {"seg2d": 2, "multiseg2d": 3, "complete2d": 2, "translate2d": 1}[self.kind]

    @property
    def input_categorical(self) -> bool:
        return self.kind == "complete2d"

    @property
    def target_categorical(self) -> bool:
        return self.kind != "translate2d"


def split_sizes(n: int, fractions) -> tuple[int, int, int]:
    """Rounded val/test sizes; whatever is left goes to train."""
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ConfigError(f"split fractions {fractions} leave no room for train with n={n}")
    return n_train, n_val, n_test


@dataclass
class PairedDataset:
    spec: TaskSpec
    inputs: np.ndarray   # (n, R, R, c_in)
    targets: np.ndarray  # (n, R, R, c_out)
    split: np.ndarray    # (n,) of split names
    shapes: list = field(default_factory=list)

    def __len__(self):
        return len(self.inputs)

    def __iter__(self):
        for i in range(len(self)):
            yield self.input_signal(i), self.target_signal(i), str(self.split[i])

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def input_signal(self, i: int) -> SignalSample:
        return SignalSample.from_grid(self.inputs[i], channels=self.inputs.shape[-1])

    def target_signal(self, i: int) -> SignalSample:
        return SignalSample.from_grid(self.targets[i], channels=self.targets.shape[-1])

    def signals(self, side: str, split: str) -> list[SignalSample]:
        get = self.input_signal if side == "input" else self.target_signal
        return [get(i) for i in self.indices(split)]


# ---------------------------------------------------------------------------
# shape primitives


@dataclass(frozen=True)
class Shape:
    kind: str  # "ellipse" or "rectangle"
    center: tuple[float, float]
    radii: tuple[float, float]
    angle: float
    intensity: float

    def level(self, coords: np.ndarray) -> np.ndarray:
        """Implicit function: <= 0 inside, roughly distance / min radius outside."""
        d = coords.astype(np.float64) - np.asarray(self.center)
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = (c * d[:, 0] + s * d[:, 1]) / self.radii[0]
        v = (-s * d[:, 0] + c * d[:, 1]) / self.radii[1]
        if self.kind == "ellipse":
            return np.sqrt(u * u + v * v) - 1.0
        return np.maximum(np.abs(u), np.abs(v)) - 1.0

    def indicator(self, coords: np.ndarray) -> np.ndarray:
        return self.level(coords) <= 0.0

    def soft(self, coords: np.ndarray, edge: float) -> np.ndarray:
        """Indicator blurred over roughly ``edge`` domain units."""
        dist = self.level(coords) * min(self.radii)
        return 0.5 * (1.0 - np.tanh(dist / edge))


def random_shape(rng: np.random.Generator, kind: str | None = None) -> Shape:
    kind = kind or ("ellipse" if rng.random() < 0.5 else "rectangle")
    return Shape(
        kind=kind,
        center=(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.5, 0.5))),
        radii=(float(rng.uniform(0.18, 0.42)), float(rng.uniform(0.18, 0.42))),
        angle=float(rng.uniform(0, np.pi)),
        intensity=float(rng.uniform(0.6, 0.9)),
    )


def smooth_background(rng: np.random.Generator, coords: np.ndarray) -> np.ndarray:
    x, y = coords[:, 0].astype(np.float64), coords[:, 1].astype(np.float64)
    base = rng.uniform(0.15, 0.3)
    gx, gy = rng.uniform(-0.06, 0.06, size=2)
    fx, fy, phase = rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5), rng.uniform(0, 2 * np.pi)
    wave = 0.04 * np.sin(np.pi * (fx * x + fy * y) + phase)
    return base + gx * x + gy * y + wave


def draw_image(shapes: list[Shape], background: np.ndarray, coords: np.ndarray, edge: float) -> np.ndarray:
    img = background.copy()
    for sh in shapes:
        a = sh.soft(coords, edge)
        img = img * (1 - a) + sh.intensity * a
    return img


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k, dtype=np.float32)[labels]


def box_blur3(img: np.ndarray) -> np.ndarray:
    """3x3 mean filter with edge replication."""
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    return sum(p[i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0


# ---------------------------------------------------------------------------
# generation


def _sample_pair(spec: TaskSpec, rng: np.random.Generator, coords: np.ndarray):
    r = spec.resolution
    edge = 1.0 / r  # half a pixel in domain units
    lo, hi = spec.shape_count
    n_shapes = int(rng.integers(lo, hi + 1))
    if spec.kind == "multiseg2d":
        kinds = [("ellipse", "rectangle")[i % 2] for i in range(n_shapes)]
        rng.shuffle(kinds)
        shapes = [random_shape(rng, k) for k in kinds]
    else:
        shapes = [random_shape(rng) for _ in range(n_shapes)]
    background = smooth_background(rng, coords)
    image = draw_image(shapes, background, coords, edge)
    image = image + spec.noise * rng.standard_normal(image.shape)
    image = np.clip(image, 0.0, 1.0).reshape(r, r)

    union = np.zeros(len(coords), dtype=bool)
    for sh in shapes:
        union |= sh.indicator(coords)
    union = union.reshape(r, r)

    if spec.kind == "seg2d":
        return image[..., None], one_hot(union.astype(int), 2), shapes
    if spec.kind == "multiseg2d":
        labels = np.zeros(len(coords), dtype=int)
        for sh in shapes:
            labels[sh.indicator(coords)] = 1 if sh.kind == "ellipse" else 2
        return image[..., None], one_hot(labels.reshape(r, r), 3), shapes
    if spec.kind == "complete2d":
        defect = union.copy()
        # erase a box around a random foreground pixel so the hole hits the shape
        fg = np.argwhere(union)
        cy, cx = fg[rng.integers(len(fg))]
        hy, hx = rng.integers(max(2, r // 10), max(3, r // 5) + 1, size=2)
        defect[max(0, cy - hy):cy + hy, max(0, cx - hx):cx + hx] = False
        return one_hot(defect.astype(int), 2), one_hot(union.astype(int), 2), shapes
    target = box_blur3(np.sqrt(image))
    return image[..., None], target[..., None], shapes


def generate(spec: TaskSpec) -> PairedDataset:
    """Deterministic dataset of ``spec.n_samples`` aligned pairs."""
    r = spec.resolution
    coords = grid_coords((r, r))
    inputs = np.empty((spec.n_samples, r, r, spec.in_channels), dtype=np.float32)
    targets = np.empty((spec.n_samples, r, r, spec.out_channels), dtype=np.float32)
    all_shapes = []
    for i in range(spec.n_samples):
        rng = np.random.default_rng([spec.seed, i])
        x, y, shapes = _sample_pair(spec, rng, coords)
        inputs[i], targets[i] = x, y
        all_shapes.append(shapes)
    n_train, n_val, n_test = split_sizes(spec.n_samples, spec.splits)
    order = np.random.default_rng([spec.seed, 2**31 - 1]).permutation(spec.n_samples)
    split = np.empty(spec.n_samples, dtype=object)
    split[order[:n_train]] = "train"
    split[order[n_train:n_train + n_val]] = "val"
    split[order[n_train + n_val:]] = "test"
    return PairedDataset(spec, inputs, targets, split.astype(str), all_shapes)


# ---------------------------------------------------------------------------
# resampling between grids


def area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic box-filter weights mapping n_in cells onto n_out cells."""
    edges_in = np.arange(n_in + 1, dtype=np.float64) / n_in
    edges_out = np.arange(n_out + 1, dtype=np.float64) / n_out
    lo = np.maximum(edges_out[:-1, None], edges_in[None, :-1])
    hi = np.minimum(edges_out[1:, None], edges_in[None, 1:])
    return np.clip(hi - lo, 0.0, None) * n_out


def area_downsample(img: np.ndarray, resolution) -> np.ndarray:
    """Box-filter a (H, W[, C]) image onto a coarser (h, w) grid."""
    h, w = resolution
    rows = area_matrix(img.shape[0], h)
    cols = area_matrix(img.shape[1], w)
    x = np.asarray(img, dtype=np.float64)
    out = np.einsum("ai,ij...,bj->ab...", rows, x, cols)
    return out.astype(img.dtype)


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    """Input cell containing each output cell centre."""
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(int), n_in - 1)


def nearest_downsample(img: np.ndarray, resolution) -> np.ndarray:
    h, w = resolution
    return img[nearest_indices(img.shape[0], h)][:, nearest_indices(img.shape[1], w)]


def resample(img: np.ndarray, resolution, categorical: bool) -> np.ndarray:
    if tuple(resolution) == tuple(img.shape[:2]):
        return img.copy()
    if categorical:
        return nearest_downsample(img, resolution)
    return area_downsample(img, resolution)
