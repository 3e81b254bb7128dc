"""Procedural ground-truth-factor dataset: binary sprites on a square canvas.

Factors (default): shape ∈ {square, disc, cross}, scale (4 sizes),
posX (8 columns), posY (8 rows) — 768 images at resolution 16. Rendering is
nearest-cell with no anti-aliasing, so images are exactly binary, and the
geometry is chosen so the factor-tuple → image map is injective:

* the twelve (shape, scale) glyphs all have distinct foreground pixel
  counts, so images from different glyphs can never coincide;
* positions move the glyph in whole-pixel steps, so images from the same
  glyph at different positions are nonzero translates of each other.

Position centers form a centered run of single-pixel steps (a full-frame
grid cannot hold the largest glyph without clipping), shrunk enough that
every glyph stays fully inside the frame at every position.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import ctf
from .errors import ConfigError, ShapeError
from .utils import atomic_write_text

GENERATOR_VERSION = 1

SHAPES = ("square", "disc", "cross")
# glyph side lengths as fractions of the canvas; R=16 gives sides 4, 5, 6, 8
SCALE_FRACS = (0.25, 0.3125, 0.375, 0.5)
ORIENTATIONS = 4  # right angles only


@dataclass(frozen=True)
class Factor:
    name: str
    cardinality: int


@dataclass(frozen=True)
class FactorSpec:
    """Ordered generative factors; enumeration order is lexicographic with
    the last factor cycling fastest."""

    factors: tuple

    def __post_init__(self):
        for f in self.factors:
            floor = 1 if f.name == "shape" else 2
            if f.cardinality < floor:
                raise ConfigError(
                    f"invalid cardinality {f.cardinality} for {f.name} (min {floor})")

    @property
    def cardinalities(self):
        return tuple(f.cardinality for f in self.factors)

    @property
    def names(self):
        return tuple(f.name for f in self.factors)

    @property
    def total(self):
        n = 1
        for c in self.cardinalities:
            n *= c
        return n

    def index(self, name):
        return self.names.index(name)


def default_spec(shapes=3, scales=4, positions=8, orientation=False):
    if not 1 <= shapes <= len(SHAPES):
        raise ConfigError(f"invalid cardinality {shapes} for shape (1..{len(SHAPES)})")
    if not 2 <= scales <= len(SCALE_FRACS):
        raise ConfigError(f"invalid cardinality {scales} for scale (2..{len(SCALE_FRACS)})")
    factors = [Factor("shape", shapes), Factor("scale", scales)]
    if orientation:
        factors.append(Factor("orientation", ORIENTATIONS))
    factors.extend([Factor("posX", positions), Factor("posY", positions)])
    return FactorSpec(tuple(factors))


@dataclass
class FactorDataset:
    images: np.ndarray   # (N, R, R) float64 in {0, 1}
    factors: np.ndarray  # (N, F) int64
    spec: FactorSpec
    resolution: int

    def __len__(self):
        return self.images.shape[0]

    @property
    def input_dim(self):
        return self.resolution * self.resolution

    def flat_images(self):
        return self.images.reshape(len(self), -1)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def _glyph(shape, side):
    if shape == "square":
        return np.ones((side, side))
    if shape == "disc":
        yy, xx = np.indices((side, side))
        c = (side - 1) / 2.0
        return (((yy - c) ** 2 + (xx - c) ** 2) <= (side / 2.0) ** 2).astype(np.float64)
    if shape == "cross":
        t = max(1, side // 3)
        g = np.zeros((side, side))
        lo = (side - t) // 2
        g[lo:lo + t, :] = 1.0
        g[:, lo:lo + t] = 1.0
        return g
    raise ShapeError(f"unknown shape {shape!r}")


def _side_px(scale_index, resolution):
    side = int(round(SCALE_FRACS[scale_index] * resolution))
    return max(side, 2)


def _position_centers(n_positions, resolution):
    start = (resolution - n_positions + 1) // 2
    return start + np.arange(n_positions)


def _check_geometry(spec, resolution):
    scales = spec.cardinalities[spec.index("scale")]
    sides = [_side_px(i, resolution) for i in range(scales)]
    if len(set(sides)) != len(sides):
        raise ConfigError(f"resolution {resolution} too small: scale sizes collide")
    n_pos = spec.cardinalities[spec.index("posX")]
    centers = _position_centers(n_pos, resolution)
    smax = max(sides)
    if centers[0] - smax // 2 < 0 or centers[-1] - smax // 2 + smax > resolution:
        raise ConfigError(
            f"resolution {resolution} cannot hold {n_pos} positions of a "
            f"{smax}px glyph without clipping")


def render(spec, factor_tuple, resolution):
    """Deterministic binary image for one factor tuple."""
    factor_tuple = tuple(int(i) for i in factor_tuple)
    if len(factor_tuple) != len(spec.factors):
        raise ShapeError(f"render: tuple length {len(factor_tuple)} vs "
                         f"{len(spec.factors)} factors")
    for idx, f in zip(factor_tuple, spec.factors):
        if not 0 <= idx < f.cardinality:
            raise ShapeError(f"render: index {idx} out of range for {f.name}")
    get = {name: factor_tuple[i] for i, name in enumerate(spec.names)}

    side = _side_px(get["scale"], resolution)
    glyph = _glyph(SHAPES[get["shape"]], side)
    if "orientation" in get:
        glyph = np.rot90(glyph, k=get["orientation"])

    n_pos = spec.cardinalities[spec.index("posX")]
    centers = _position_centers(n_pos, resolution)
    cx, cy = centers[get["posX"]], centers[get["posY"]]
    ty, tx = cy - side // 2, cx - side // 2
    canvas = np.zeros((resolution, resolution))
    canvas[ty:ty + side, tx:tx + side] = glyph
    return canvas


def generate(spec, resolution=16):
    """Full cartesian enumeration of the spec, deterministic order."""
    _check_geometry(spec, resolution)
    cards = spec.cardinalities
    n = spec.total
    factors = np.stack(np.unravel_index(np.arange(n), cards), axis=1).astype(np.int64)
    images = np.empty((n, resolution, resolution))
    for i in range(n):
        images[i] = render(spec, factors[i], resolution)
    return FactorDataset(images=images, factors=factors, spec=spec,
                         resolution=resolution)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

class EpochBatcher:
    """Without-replacement batches; reshuffles at each epoch boundary."""

    def __init__(self, dataset, size, rng):
        if size > len(dataset):
            raise ShapeError(f"batch size {size} exceeds dataset size {len(dataset)}")
        self.dataset = dataset
        self.size = size
        self.rng = rng
        self._order = rng.permutation(len(dataset))
        self._cursor = 0

    def next_indices(self):
        if self._cursor + self.size > len(self._order):
            self._order = self.rng.permutation(len(self.dataset))
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + self.size]
        self._cursor += self.size
        return idx

    def next(self):
        return self.dataset.flat_images()[self.next_indices()]


def fixed_factor_batch(dataset, factor_index, size, rng, replace=False):
    """Images sharing one uniformly-chosen value of the given factor.

    Returns (flat image batch, chosen value). All other factors stay free.
    """
    card = dataset.spec.cardinalities[factor_index]
    if card < 2:
        raise ShapeError(f"factor {factor_index} has cardinality {card} < 2")
    value = int(rng.integers(card))
    pool = np.flatnonzero(dataset.factors[:, factor_index] == value)
    if not replace and size > pool.size:
        raise ShapeError(f"only {pool.size} images match factor value, need {size}")
    rows = rng.choice(pool, size=size, replace=replace)
    return dataset.flat_images()[rows], value


# ---------------------------------------------------------------------------
# disk format: images.ctf + factors.ctf + manifest.txt
# ---------------------------------------------------------------------------

def save_dataset(out_dir, dataset):
    os.makedirs(out_dir, exist_ok=True)
    ctf.write(os.path.join(out_dir, "images.ctf"), dataset.images)
    ctf.write(os.path.join(out_dir, "factors.ctf"),
              dataset.factors.astype(np.float64))
    lines = [f"version={GENERATOR_VERSION}", f"resolution={dataset.resolution}"]
    for i, f in enumerate(dataset.spec.factors):
        lines.append(f"factor.{i}.name={f.name}")
        lines.append(f"factor.{i}.cardinality={f.cardinality}")
    atomic_write_text(os.path.join(out_dir, "manifest.txt"), "\n".join(lines) + "\n")


def load_dataset(data_dir):
    images = ctf.read(os.path.join(data_dir, "images.ctf"))
    factors = ctf.read(os.path.join(data_dir, "factors.ctf")).astype(np.int64)
    kv = {}
    with open(os.path.join(data_dir, "manifest.txt")) as fh:
        for line in fh:
            line = line.strip()
            if line:
                k, _, v = line.partition("=")
                kv[k] = v
    n_factors = factors.shape[1]
    spec = FactorSpec(tuple(
        Factor(kv[f"factor.{i}.name"], int(kv[f"factor.{i}.cardinality"]))
        for i in range(n_factors)))
    resolution = int(kv["resolution"])
    if images.shape != (factors.shape[0], resolution, resolution):
        raise ShapeError(f"dataset mismatch: images {images.shape}, "
                         f"{factors.shape[0]} factor rows, resolution {resolution}")
    return FactorDataset(images=images, factors=factors, spec=spec,
                         resolution=resolution)
