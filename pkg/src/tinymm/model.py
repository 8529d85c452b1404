"""Decoder backbone with generalized causal attention, 2D rotary embeddings,
MoE feed-forward, dual image projectors, and the hybrid loss: next-token
cross-entropy on text plus flow-matching MSE on generated-image latents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import attnmask, rope2d
from .codec import (LatentCodecConfig, VitConfig, VitStandIn, encode,
                    normalize_latents, resize_nearest)
from .moe import IMAGE, TEXT, ExpertStats, MoEConfig, MoELayer
from .seqlayout import SegmentKind, TokenSequence, Vocab, segment_offsets


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    layers: int = 4
    d_model: int = 128
    heads: int = 4
    head_dim: int = 32
    moe: MoEConfig = field(default_factory=MoEConfig)
    latent_channels: int = 8
    vit_dim: int = 64
    rope_base: float = 10000.0
    precision: str = "f32"  # "f64" for gradient checks and bitwise-reproducible runs
    tie_text_head: bool = True
    lambda_fm: float = 1.0

    def __post_init__(self):
        if self.d_model != self.heads * self.head_dim:
            raise ValueError(f"d_model {self.d_model} != heads*head_dim "
                             f"{self.heads * self.head_dim}")
        for name in ("layers", "d_model", "heads", "head_dim",
                     "latent_channels", "vit_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.vocab_size < 0:
            raise ValueError("vocab_size must be >= 0 (0 = fill in from the vocab)")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision}")

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "f64" else torch.float32


class RMSNorm(nn.Module):
    def __init__(self, d: int, dtype=None, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(d, dtype=dtype))
        self.eps = eps

    def forward(self, x):
        rms = torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + self.eps)
        return x * rms * self.weight


class TimestepEmbed(nn.Module):
    """Sinusoidal features of the flow time in [0, 1], then a small MLP."""

    def __init__(self, d: int, dtype=None):
        super().__init__()
        self.d = d
        self.fc1 = nn.Linear(d, d, dtype=dtype)
        self.fc2 = nn.Linear(d, d, dtype=dtype)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.d // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
        args = t.unsqueeze(-1) * 1000.0 * freqs
        feats = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
        if feats.shape[-1] < self.d:
            feats = F.pad(feats, (0, self.d - feats.shape[-1]))
        return self.fc2(F.silu(self.fc1(feats)))


class VaeProjector(nn.Module):
    """Patch-latent embedding: linear lift to model width, then a residual
    block whose normalization is scaled/shifted by the timestep embedding."""

    def __init__(self, channels: int, d: int, dtype=None):
        super().__init__()
        self.in_proj = nn.Linear(channels, d, dtype=dtype)
        self.norm = RMSNorm(d, dtype=dtype)
        self.mod = nn.Linear(d, 2 * d, dtype=dtype)
        self.fc1 = nn.Linear(d, d, dtype=dtype)
        self.fc2 = nn.Linear(d, d, dtype=dtype)
        with torch.no_grad():
            self.mod.weight.normal_(std=0.02)
            self.mod.bias.zero_()
            self.mod.bias[:d] = 1.0  # scale starts at identity

    def forward(self, z: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.in_proj(z)
        scale, shift = self.mod(temb).chunk(2, dim=-1)
        return h + self.fc2(F.silu(self.fc1(self.norm(h) * scale + shift)))


class VitProjector(nn.Module):
    """Two affine maps with one nonlinearity between."""

    def __init__(self, vit_dim: int, d: int, dtype=None):
        super().__init__()
        self.fc1 = nn.Linear(vit_dim, d, dtype=dtype)
        self.fc2 = nn.Linear(d, d, dtype=dtype)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, dtype = cfg.d_model, cfg.dtype
        self.heads, self.head_dim = cfg.heads, cfg.head_dim
        self.qkv = nn.Linear(d, 3 * d, bias=False, dtype=dtype)
        self.out = nn.Linear(d, d, bias=False, dtype=dtype)

    def forward(self, x, mask, cos, sin):
        b, n, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, n, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, n, self.heads, self.head_dim).transpose(1, 2)
        q = apply_rope_torch(q, cos[:, None], sin[:, None])
        k = apply_rope_torch(k, cos[:, None], sin[:, None])
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~mask[:, None], float("-inf"))
        attn = F.softmax(scores, dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(y)


def apply_rope_torch(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Torch twin of rope2d.apply_rope: rotate interleaved channel pairs."""
    half = cos.shape[-1] // 2
    c, s = cos[..., :half], sin[..., :half]
    even, odd = x[..., 0::2], x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c
    return out


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        dtype = cfg.dtype
        self.norm1 = RMSNorm(cfg.d_model, dtype=dtype)
        self.attn = Attention(cfg)
        self.norm2 = RMSNorm(cfg.d_model, dtype=dtype)
        self.moe = MoELayer(cfg.d_model, cfg.moe, dtype=dtype)

    def forward(self, x, mask, cos, sin, modality, stats, layer_idx):
        x = x + self.attn(self.norm1(x), mask, cos, sin)
        b, n, d = x.shape
        y, aux = self.moe(self.norm2(x).reshape(b * n, d),
                          modality.reshape(b * n) if modality is not None else None,
                          stats, layer_idx)
        return x + y.reshape(b, n, d), aux


@dataclass
class Batch:
    """Padded model inputs for a list of sequences."""

    ids: torch.Tensor             # int64 [B, n]
    lengths: list[int]
    loss_mask: torch.Tensor       # bool [B, n]
    modality: torch.Tensor        # int64 [B, n], IMAGE/TEXT
    latent_in: torch.Tensor       # [B, n, c] x_t at gen positions, clean at cond positions
    vae_flag: torch.Tensor        # bool [B, n]
    ts_flag: torch.Tensor         # bool [B, n]
    gen_flag: torch.Tensor        # bool [B, n]
    t_pos: torch.Tensor           # [B, n] flow time per position (1.0 for cond images)
    velocity_target: torch.Tensor  # [B, n, c]
    mask: torch.Tensor            # bool [B, n, n]
    cos: torch.Tensor             # [B, n, head_dim]
    sin: torch.Tensor
    vit_entries: list[tuple[int, int, torch.Tensor]]  # (batch row, start pos, pixels)

    @property
    def size(self) -> tuple[int, int]:
        return self.ids.shape[0], self.ids.shape[1]


def assemble_batch(seqs: list[TokenSequence], vocab: Vocab, cfg: ModelConfig,
                   codec_cfg: LatentCodecConfig, vit_cfg: VitConfig, mode: str,
                   generator: torch.Generator | None = None,
                   gen_state: dict[tuple[int, int], tuple[np.ndarray, float]] | None = None,
                   ) -> Batch:
    """Pad, encode and tensorize sequences.

    Training (gen_state None): each generated image draws a fresh timestep
    t ~ U[0,1] and noise z0 ~ N(0,I) from `generator`; inputs hold
    x_t = (1-t) z0 + t z1 and targets hold z1 - z0 in normalized latent space.

    Sampling (gen_state given): (seq index, image id) -> (x_t, t) supplies the
    current ODE state and no targets are set.
    """
    dt = cfg.dtype
    bsz, nmax = len(seqs), max(s.n for s in seqs)
    c = cfg.latent_channels

    ids = torch.full((bsz, nmax), vocab.pad, dtype=torch.int64)
    loss_mask = torch.zeros(bsz, nmax, dtype=torch.bool)
    modality = torch.full((bsz, nmax), TEXT, dtype=torch.int64)
    latent_in = torch.zeros(bsz, nmax, c, dtype=dt)
    vae_flag = torch.zeros(bsz, nmax, dtype=torch.bool)
    ts_flag = torch.zeros(bsz, nmax, dtype=torch.bool)
    gen_flag = torch.zeros(bsz, nmax, dtype=torch.bool)
    t_pos = torch.zeros(bsz, nmax, dtype=dt)
    vel_target = torch.zeros(bsz, nmax, c, dtype=dt)
    mask = torch.zeros(bsz, nmax, nmax, dtype=torch.bool)
    cos = torch.zeros(bsz, nmax, cfg.head_dim, dtype=dt)
    sin = torch.zeros(bsz, nmax, cfg.head_dim, dtype=dt)
    vit_entries: list[tuple[int, int, torch.Tensor]] = []

    for b, seq in enumerate(seqs):
        n = seq.n
        ids[b, :n] = torch.from_numpy(seq.ids)
        loss_mask[b, :n] = torch.from_numpy(seq.loss_mask)
        mask[b, :n, :n] = torch.from_numpy(attnmask.build_mask(seq.segments).allowed)
        mask[b, range(n, nmax), range(n, nmax)] = True  # keep padded softmax rows finite
        pos = rope2d.assign_positions(seq.segments, mode, cfg.head_dim, cfg.rope_base,
                                      vit_grid=vit_cfg.grid)
        tables = rope2d.rope_tables(pos)
        cos[b, :n] = torch.from_numpy(tables.cos).to(dt)
        sin[b, :n] = torch.from_numpy(tables.sin).to(dt)

        ts_positions = np.flatnonzero(seq.ids == vocab.timestep)
        offs = segment_offsets(seq.segments)
        for seg, start in zip(seq.segments, offs):
            if not seg.is_image:
                continue
            stop = start + seg.token_count
            modality[b, start:stop] = IMAGE
            # the slot feeding this image its flow time: nearest <timestep> before it
            before = ts_positions[ts_positions < start]
            slot = int(before[-1]) if len(before) else None

            if seg.kind is SegmentKind.COND_IMAGE_VIT:
                payload = seq.images[seg.image_id]
                pix = resize_nearest(payload.pixels, vit_cfg.anchor)
                vit_entries.append((b, start, torch.from_numpy(pix).to(dt)))
                continue

            vae_flag[b, start:stop] = True
            if seg.kind is SegmentKind.COND_IMAGE_VAE:
                payload = seq.images[seg.image_id]
                z1 = normalize_latents(encode(payload.pixels, codec_cfg).values, codec_cfg)
                latent_in[b, start:stop] = torch.from_numpy(z1).to(dt)
                t_val = 1.0
            elif gen_state is not None:
                x_t, t_val = gen_state[(b, seg.image_id)]
                latent_in[b, start:stop] = torch.from_numpy(np.asarray(x_t)).to(dt)
                gen_flag[b, start:stop] = True
            else:
                if generator is None:
                    raise ValueError("training assembly requires a torch.Generator")
                payload = seq.images[seg.image_id]
                if payload.pixels is None:
                    raise ValueError("generated-image segment without clean pixels")
                z1 = torch.from_numpy(
                    normalize_latents(encode(payload.pixels, codec_cfg).values, codec_cfg)
                ).to(dt)
                z0 = torch.randn(z1.shape, generator=generator, dtype=dt)
                t_val = float(torch.rand((), generator=generator, dtype=dt))
                latent_in[b, start:stop] = (1.0 - t_val) * z0 + t_val * z1
                vel_target[b, start:stop] = z1 - z0
                gen_flag[b, start:stop] = True
            t_pos[b, start:stop] = t_val
            if slot is not None:
                ts_flag[b, slot] = True
                t_pos[b, slot] = t_val

    return Batch(ids, [s.n for s in seqs], loss_mask, modality, latent_in, vae_flag,
                 ts_flag, gen_flag, t_pos, vel_target, mask, cos, sin, vit_entries)


class MultimodalModel(nn.Module):
    def __init__(self, cfg: ModelConfig, vit_cfg: VitConfig):
        super().__init__()
        if cfg.vocab_size < 1:
            raise ValueError("model requires a concrete vocab_size")
        self.cfg = cfg
        dtype = cfg.dtype
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model, dtype=dtype)
        self.t_embed = TimestepEmbed(cfg.d_model, dtype=dtype)
        self.vae_proj = VaeProjector(cfg.latent_channels, cfg.d_model, dtype=dtype)
        self.vit_enc = VitStandIn(vit_cfg, dtype=dtype)
        self.vit_proj = VitProjector(cfg.vit_dim, cfg.d_model, dtype=dtype)
        if vit_cfg.dim != cfg.vit_dim:
            raise ValueError("vit feature width mismatch between configs")
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.final_norm = RMSNorm(cfg.d_model, dtype=dtype)
        self.vel_head = nn.Linear(cfg.d_model, cfg.latent_channels, dtype=dtype)
        if not cfg.tie_text_head:
            self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False, dtype=dtype)
        with torch.no_grad():
            self.tok_emb.weight.normal_(std=0.02)

    def backbone_parameter_names(self) -> list[str]:
        """Everything except the vision stand-in and its projector."""
        skip = ("vit_enc.", "vit_proj.")
        return [n for n, _ in self.named_parameters() if not n.startswith(skip)]

    def forward(self, batch: Batch, stats: ExpertStats | None = None):
        """Returns (text logits [B, n, vocab], velocity [B, n, c], aux loss)."""
        x = self.tok_emb(batch.ids).clone()
        temb = self.t_embed(batch.t_pos)

        if batch.vae_flag.any():
            x[batch.vae_flag] = self.vae_proj(batch.latent_in[batch.vae_flag],
                                              temb[batch.vae_flag])
        if batch.ts_flag.any():
            x = x + torch.where(batch.ts_flag[..., None], temb, torch.zeros_like(temb))
        for b, start, pix in batch.vit_entries:
            feats = self.vit_proj(self.vit_enc(pix[None])[0])
            x[b, start:start + feats.shape[0]] = feats

        aux_total = x.new_zeros(())
        for i, block in enumerate(self.blocks):
            x, aux = block(x, batch.mask, batch.cos, batch.sin, batch.modality, stats, i)
            aux_total = aux_total + aux
        h = self.final_norm(x)
        logits = (F.linear(h, self.tok_emb.weight) if self.cfg.tie_text_head
                  else self.lm_head(h))
        velocity = self.vel_head(h)
        return logits, velocity, aux_total / len(self.blocks)

    def gen_velocity(self, batch: Batch, velocity: torch.Tensor) -> list[torch.Tensor]:
        """Per-sequence velocity rows at generated-latent positions (may be empty)."""
        return [velocity[b][batch.gen_flag[b]] for b in range(batch.size[0])]

    def loss(self, batch: Batch, stats: ExpertStats | None = None) -> dict[str, torch.Tensor]:
        logits, velocity, aux = self.forward(batch, stats)
        target_mask = batch.loss_mask[:, 1:]
        has_ce = bool(target_mask.any())
        has_fm = bool(batch.gen_flag.any())
        if not has_ce and not has_fm:
            raise ValueError("batch has no training signal: empty loss mask and no "
                             "generated-image tokens")
        zero = logits.new_zeros(())
        ce = (F.cross_entropy(logits[:, :-1][target_mask], batch.ids[:, 1:][target_mask])
              if has_ce else zero)
        fm = (F.mse_loss(velocity[batch.gen_flag], batch.velocity_target[batch.gen_flag])
              if has_fm else zero)
        aux = self.cfg.moe.aux_loss_weight * aux
        total = ce + self.cfg.lambda_fm * fm + aux
        return {"ce": ce, "fm": fm, "aux": aux, "total": total}
