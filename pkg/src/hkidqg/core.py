"""Domain types and the small dense numeric kernel shared by every stage.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 with shape
``(rows, cols)``; one row per token, patch or sentence embedding. The helpers
here validate shapes and keep the arithmetic in one place so that the attention
and fusion code reads like the formulas it implements.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeError",
    "ConfigError",
    "Diagram",
    "TextConstraint",
    "LinearMap",
    "make_rng",
    "as_matrix",
    "matmul",
    "softmax_axis",
    "cosine_sim",
    "gaussian_init",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ConfigError(ValueError):
    """Raised for invalid configuration values (layer counts, empty inputs...)."""


@dataclass(frozen=True)
class Diagram:
    """An RGB image with an identifier.

    ``pixels`` has shape ``(H, W, 3)`` and dtype uint8.
    """

    id: str
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"diagram pixels must be (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError(f"diagram must be at least 1x1, got {px.shape[:2]}")
        px = np.ascontiguousarray(px, dtype=np.uint8)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class TextConstraint:
    target: str
    concept: str

    def __post_init__(self):
        if not self.target.strip():
            raise ConfigError("target text must be non-empty")
        if not self.concept.strip():
            raise ConfigError("concept text must be non-empty")


@dataclass
class LinearMap:
    """A named trainable projection applied as ``x @ weights``."""

    name: str
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError(f"{self.name}: weights must be 2-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError(f"{self.name}: weights contain non-finite values")
        self.weights = w

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return matmul(as_matrix(x), self.weights)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator: numpy's PCG64 bit generator behind ``Generator``.

    PCG64 streams (and the ziggurat normal sampler on top) are identical across
    platforms for a given numpy major version.
    """
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFF_FFFF_FFFF_FFFF))


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-D array; 1-D input becomes a single row."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def softmax_axis(m: np.ndarray, axis: str = "rows") -> np.ndarray:
    """Max-shifted softmax.

    ``axis="rows"`` normalizes each row (values along a row sum to 1);
    ``axis="cols"`` normalizes each column.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ShapeError("softmax of an empty matrix")
    if axis not in ("rows", "cols"):
        raise ValueError(f"axis must be 'rows' or 'cols', got {axis!r}")
    ax = 1 if axis == "rows" else 0
    z = np.exp(m - m.max(axis=ax, keepdims=True))
    return z / z.sum(axis=ax, keepdims=True)


def cosine_sim(u, v) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"cosine_sim needs equal lengths, got {u.size} and {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def gaussian_init(shape, rng: np.random.Generator, mean: float = 0.0, std: float = 0.02) -> np.ndarray:
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s < 1 for s in shape):
        raise ConfigError(f"gaussian_init needs positive dims, got {shape}")
    return rng.normal(mean, std, size=shape)
