"""Generalized 2D rotary position embeddings.

Text tokens sit on the diagonal (p, p) of the 2D coordinate plane, image
tokens occupy their (h, w) grid, so an image-free sequence reduces exactly to
1D RoPE. Rotation pair j takes its angle from x when j is even and from y
when j is odd.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seqlayout import Segment, SegmentKind, total_tokens

MAX_COORD = 2**31 - 1


@dataclass(frozen=True)
class PositionGrid:
    xs: np.ndarray  # int64 [n]
    ys: np.ndarray  # int64 [n]
    head_dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.head_dim % 2 != 0:
            raise ValueError(f"head_dim must be even, got {self.head_dim}")
        if len(self.xs) != len(self.ys):
            raise ValueError("xs/ys length mismatch")

    @property
    def n(self) -> int:
        return len(self.xs)

    def dump_csv(self) -> str:
        lines = ["token,x,y"]
        lines += [f"{i},{x},{y}" for i, (x, y) in enumerate(zip(self.xs, self.ys))]
        return "\n".join(lines)


@dataclass(frozen=True)
class RotaryTables:
    cos: np.ndarray  # f64 [n, head_dim], two identical halves
    sin: np.ndarray


def assign_positions(segments: list[Segment], mode: str, head_dim: int,
                     base: float = 10000.0,
                     vit_grid: tuple[int, int] | None = None) -> PositionGrid:
    """Walk the layout with a scalar cursor p.

    Text tokens take (p, p) and advance p by 1. An image with grid (h, w)
    assigns token (r, c) the position (p + r, p + c) and advances p by
    max(h, w). In training mode, a generated image additionally advances the
    cursor by the span of the vision half it will gain once it re-enters the
    context as a conditional image, so every later token already sits at its
    inference-time position.
    """
    if mode not in ("training", "inference"):
        raise ValueError(f"mode must be 'training' or 'inference', got {mode!r}")
    xs, ys = [], []
    p = 0
    for seg in segments:
        if seg.kind is SegmentKind.TEXT:
            for _ in range(seg.token_count):
                xs.append(p)
                ys.append(p)
                p += 1
        else:
            h, w = seg.grid
            for r in range(h):
                for c in range(w):
                    xs.append(p + r)
                    ys.append(p + c)
            p += max(h, w)
            if mode == "training" and seg.kind is SegmentKind.GEN_IMAGE:
                if vit_grid is None:
                    raise ValueError("training layouts with generated images need vit_grid "
                                     "to shift later positions to their inference values")
                p += max(vit_grid)
    if p > MAX_COORD:
        raise OverflowError(f"position cursor {p} exceeds coordinate range")
    return PositionGrid(np.asarray(xs, dtype=np.int64), np.asarray(ys, dtype=np.int64),
                        head_dim, base)


def _thetas(head_dim: int, base: float) -> np.ndarray:
    j = np.arange(head_dim // 2, dtype=np.float64)
    return base ** (-2.0 * j / head_dim)


def rope_tables(positions: PositionGrid) -> RotaryTables:
    half = positions.head_dim // 2
    theta = _thetas(positions.head_dim, positions.base)
    coords = np.where(np.arange(half) % 2 == 0,
                      positions.xs[:, None].astype(np.float64),
                      positions.ys[:, None].astype(np.float64))
    angles = coords * theta[None, :]
    cos = np.concatenate([np.cos(angles), np.cos(angles)], axis=1)
    sin = np.concatenate([np.sin(angles), np.sin(angles)], axis=1)
    return RotaryTables(cos, sin)


def reference_rope_1d(positions_1d: np.ndarray, head_dim: int,
                      base: float = 10000.0) -> RotaryTables:
    """Plain 1D RoPE over scalar positions; the backward-compatibility oracle."""
    if head_dim % 2 != 0:
        raise ValueError(f"head_dim must be even, got {head_dim}")
    j = np.arange(head_dim // 2, dtype=np.float64)
    theta = base ** (-2.0 * j / head_dim)
    angles = positions_1d.astype(np.float64)[:, None] * theta[None, :]
    cos = np.concatenate([np.cos(angles), np.cos(angles)], axis=1)
    sin = np.concatenate([np.sin(angles), np.sin(angles)], axis=1)
    return RotaryTables(cos, sin)


def apply_rope(vectors: np.ndarray, tables: RotaryTables) -> np.ndarray:
    """Rotate each channel pair (v[2j], v[2j+1]) by its table angle."""
    if vectors.shape[-2:] != tables.cos.shape:
        raise ValueError(f"vector shape {vectors.shape} does not match tables "
                         f"{tables.cos.shape}")
    half = tables.cos.shape[1] // 2
    c, s = tables.cos[..., :half], tables.sin[..., :half]
    even, odd = vectors[..., 0::2], vectors[..., 1::2]
    out = np.empty_like(vectors)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c
    return out
