"""Multi-scale patch pyramid over a diagram and per-layer patch selection.

Layer ``l`` splits the image into an ``l x l`` grid. Cell boundaries are
``floor(k * H / l)`` so every layer tiles the image exactly for any size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, Diagram, LinearMap, ShapeError, cosine_sim

MAX_LAYERS = 8


@dataclass(frozen=True, order=True)
class PatchRef:
    layer: int
    row: int
    col: int
    rect: tuple  # (row_start, row_end, col_start, col_end), half-open

    @property
    def shape(self):
        r0, r1, c0, c1 = self.rect
        return (r1 - r0, c1 - c0)

    def to_dict(self) -> dict:
        return {"layer": self.layer, "i": self.row, "j": self.col, "rect": list(self.rect)}


@dataclass(frozen=True)
class PatchPyramid:
    n: int
    height: int
    width: int
    patches: tuple

    def layer(self, l: int) -> list:
        return [p for p in self.patches if p.layer == l]


@dataclass(frozen=True)
class SelectedPatches:
    entries: tuple  # ((PatchRef, score), ...) one per layer, ascending layer

    @property
    def refs(self) -> list:
        return [ref for ref, _ in self.entries]


def patch_rect(height: int, width: int, layer: int, i: int, j: int) -> tuple:
    return (
        (i - 1) * height // layer,
        i * height // layer,
        (j - 1) * width // layer,
        j * width // layer,
    )


def decompose(height: int, width: int, n: int = 3) -> PatchPyramid:
    if n < 1:
        raise ConfigError(f"pyramid needs at least one layer, got n={n}")
    if height < n or width < n:
        raise ConfigError(f"image {height}x{width} is too small for {n} layers")
    patches = [
        PatchRef(l, i, j, patch_rect(height, width, l, i, j))
        for l in range(1, n + 1)
        for i in range(1, l + 1)
        for j in range(1, l + 1)
    ]
    return PatchPyramid(n=n, height=height, width=width, patches=tuple(patches))


def crop(diagram: Diagram, ref: PatchRef) -> Diagram:
    r0, r1, c0, c1 = ref.rect
    if not (0 <= r0 < r1 <= diagram.height and 0 <= c0 < c1 <= diagram.width):
        raise AssertionError(f"patch rect {ref.rect} outside {diagram.height}x{diagram.width} image")
    return Diagram(
        id=f"{diagram.id}@{ref.layer}.{ref.row}.{ref.col}",
        pixels=diagram.pixels[r0:r1, c0:c1].copy(),
    )


def score_patches(patch_embs, w_h: LinearMap, e_t, e_c) -> np.ndarray:
    """Constraint relevance of each patch: cos(W_h f, e_t) + cos(W_h f, e_c).

    ``patch_embs`` is a ``(num_patches, d_v)`` matrix; returns one score per row.
    """
    f = np.asarray(patch_embs, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    e_t = np.asarray(e_t, dtype=np.float64).ravel()
    e_c = np.asarray(e_c, dtype=np.float64).ravel()
    if f.shape[1] != w_h.in_dim:
        raise ShapeError(f"patch embeddings have width {f.shape[1]}, W_h expects {w_h.in_dim}")
    if e_t.size != w_h.out_dim or e_c.size != w_h.out_dim:
        raise ShapeError(
            f"text embeddings ({e_t.size}, {e_c.size}) do not match W_h output {w_h.out_dim}"
        )
    projected = w_h(f)
    return np.array([cosine_sim(p, e_t) + cosine_sim(p, e_c) for p in projected])


def select_patches(pyramid: PatchPyramid, scores) -> SelectedPatches:
    """Argmax per layer; ties go to the first patch in row-major order."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size != len(pyramid.patches):
        raise ShapeError(f"expected {len(pyramid.patches)} scores, got {scores.size}")
    entries = []
    start = 0
    for l in range(1, pyramid.n + 1):
        block = scores[start:start + l * l]
        k = int(np.argmax(block))  # np.argmax returns the first maximum
        entries.append((pyramid.patches[start + k], float(block[k])))
        start += l * l
    return SelectedPatches(entries=tuple(entries))
