"""Toy image codec: a fixed orthonormal patch projection standing in for the
VAE, and a frozen-at-init patch encoder standing in for the vision tower.

The codec basis always contains the three constant-color directions first, so
the per-patch mean color survives the round trip even when the latent width is
far below 3*f^2. The remaining rows come from a seeded random orthonormal
complement; with c = 3*f^2 the map is a complete basis and exactly invertible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn


@dataclass(frozen=True)
class LatentCodecConfig:
    downsample: int = 4      # pixels per latent token along each axis
    channels: int = 8        # latent channels kept out of the full 3*f*f basis
    seed: int = 0
    norm_scale: float = 2.0  # latent normalization used by the flow objective
    background: float = 0.8

    def __post_init__(self):
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")
        patch_dim = 3 * self.downsample ** 2
        if not 1 <= self.channels <= patch_dim:
            raise ValueError(f"channels must be in [1, {patch_dim}] for an orthonormal basis")


@dataclass(frozen=True)
class VitConfig:
    anchor: int = 32         # square pixel size every conditioning image is resized to
    patch: int = 8
    dim: int = 64
    seed: int = 0

    @property
    def grid(self) -> tuple[int, int]:
        side = self.anchor // self.patch
        return side, side

    @property
    def tokens(self) -> int:
        h, w = self.grid
        return h * w


@dataclass
class LatentBlock:
    """Flow-matching state for one image: h*w latent tokens of c channels."""

    grid: tuple[int, int]
    values: np.ndarray       # [h*w, c], row-major patch order
    timestep: float = 1.0
    noise: np.ndarray | None = None

    def __post_init__(self):
        h, w = self.grid
        if self.values.shape[0] != h * w:
            raise ValueError(f"values rows {self.values.shape[0]} != grid {h}x{w}")
        if not 0.0 <= self.timestep <= 1.0:
            raise ValueError(f"timestep {self.timestep} outside [0, 1]")
        if not np.isfinite(self.values).all():
            raise ValueError("non-finite latent values")

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@lru_cache(maxsize=8)
def _basis(downsample: int, channels: int, seed: int) -> np.ndarray:
    """Orthonormal rows [c, 3*f*f]: constant-R/G/B directions, then a seeded
    random orthonormal completion."""
    f = downsample
    d = 3 * f * f
    color = np.zeros((3, d))
    for ch in range(3):
        color[ch, ch::3] = 1.0 / f  # patch flattens as (f, f, 3); norm = sqrt(f^2)/f = 1
    rows = [color[: min(channels, 3)]]
    if channels > 3:
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((d, d))
        raw -= color.T @ (color @ raw)  # project out the color directions
        q, _ = np.linalg.qr(raw)
        rows.append(q.T[: channels - 3])
    return np.concatenate(rows, axis=0)


def _patchify(image: np.ndarray, f: int) -> tuple[np.ndarray, tuple[int, int]]:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    hpix, wpix, _ = image.shape
    if hpix % f or wpix % f:
        raise ValueError(f"image {hpix}x{wpix} not a multiple of downsample {f}")
    h, w = hpix // f, wpix // f
    patches = image.reshape(h, f, w, f, 3).transpose(0, 2, 1, 3, 4).reshape(h * w, 3 * f * f)
    return patches, (h, w)


def encode(image: np.ndarray, cfg: LatentCodecConfig) -> LatentBlock:
    patches, grid = _patchify(np.asarray(image, dtype=np.float64), cfg.downsample)
    values = patches @ _basis(cfg.downsample, cfg.channels, cfg.seed).T
    return LatentBlock(grid, values)


def decode(latents: LatentBlock, cfg: LatentCodecConfig) -> np.ndarray:
    if latents.channels != cfg.channels:
        raise ValueError(f"latent channels {latents.channels} != config {cfg.channels}")
    f = cfg.downsample
    h, w = latents.grid
    patches = latents.values @ _basis(f, cfg.channels, cfg.seed)
    return patches.reshape(h, w, f, f, 3).transpose(0, 2, 1, 3, 4).reshape(h * f, w * f, 3)


def latent_shift(cfg: LatentCodecConfig) -> np.ndarray:
    """Latent vector of a constant-background patch; the flow works in
    (z - shift) / norm_scale coordinates so the background maps to zero."""
    f = cfg.downsample
    patch = np.full(3 * f * f, cfg.background)
    return _basis(f, cfg.channels, cfg.seed) @ patch


def normalize_latents(values: np.ndarray, cfg: LatentCodecConfig) -> np.ndarray:
    return (values - latent_shift(cfg)) / cfg.norm_scale


def denormalize_latents(values: np.ndarray, cfg: LatentCodecConfig) -> np.ndarray:
    return values * cfg.norm_scale + latent_shift(cfg)


def resize_nearest(image: np.ndarray, size: int) -> np.ndarray:
    hpix, wpix, _ = image.shape
    rows = (np.arange(size) * hpix) // size
    cols = (np.arange(size) * wpix) // size
    return image[rows][:, cols]


class VitStandIn(nn.Module):
    """Frozen-at-init patch encoder over a fixed square input anchor.

    Stage II of the training schedule may unfreeze it; everywhere else it acts
    as a fixed deterministic feature extractor.
    """

    def __init__(self, cfg: VitConfig, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        in_dim = 3 * cfg.patch ** 2
        weight = torch.randn(cfg.dim, in_dim, generator=gen, dtype=torch.float64)
        weight *= in_dim ** -0.5
        self.proj = nn.Linear(in_dim, cfg.dim, bias=False, dtype=dtype)
        with torch.no_grad():
            self.proj.weight.copy_(weight.to(dtype))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """images [b, anchor, anchor, 3] -> features [b, tokens, dim]."""
        b = images.shape[0]
        p, a = self.cfg.patch, self.cfg.anchor
        if images.shape[1:] != (a, a, 3):
            raise ValueError(f"expected [b, {a}, {a}, 3] input, got {tuple(images.shape)}")
        side = a // p
        patches = (images.reshape(b, side, p, side, p, 3)
                   .permute(0, 1, 3, 2, 4, 5)
                   .reshape(b, side * side, 3 * p * p))
        return self.proj(patches)


@lru_cache(maxsize=4)
def _cached_vit(cfg: VitConfig) -> VitStandIn:
    return VitStandIn(cfg, dtype=torch.float64)


def vit_features(image: np.ndarray, cfg: VitConfig) -> np.ndarray:
    """Deterministic features of one image resized to the fixed vision anchor."""
    resized = resize_nearest(np.asarray(image, dtype=np.float64), cfg.anchor)
    with torch.no_grad():
        out = _cached_vit(cfg)(torch.from_numpy(resized[None]))
    return out[0].numpy()
