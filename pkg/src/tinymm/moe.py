"""Mixture-of-experts feed-forward layer with modality-split activation stats.

Routing is softmax-then-top-k with renormalization over the selected experts;
ties break toward the lower expert index so routing is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

IMAGE, TEXT = 0, 1  # modality tag values


@dataclass(frozen=True)
class MoEConfig:
    num_experts: int = 16
    top_k: int = 4
    shared_experts: int = 1
    expert_hidden: int = 256
    shared_hidden: int = 256
    aux_loss_weight: float = 0.01

    def __post_init__(self):
        if not 1 <= self.top_k <= self.num_experts:
            raise ValueError(f"top_k {self.top_k} must be in [1, {self.num_experts}]")
        if self.shared_experts < 0:
            raise ValueError("shared_experts must be >= 0")


class ExpertStats:
    """Per-layer, per-expert activation counters split by token modality."""

    def __init__(self, num_layers: int, num_experts: int):
        self.v = np.zeros((num_layers, num_experts), dtype=np.int64)  # image tokens
        self.t = np.zeros((num_layers, num_experts), dtype=np.int64)  # text tokens
        self.tokens = np.zeros(num_layers, dtype=np.int64)  # tokens routed per layer

    @property
    def shape(self) -> tuple[int, int]:
        return self.v.shape

    def record(self, layer: int, indices: torch.Tensor, modality: torch.Tensor):
        """indices [m, k] selected experts, modality [m] in {IMAGE, TEXT}."""
        e = self.v.shape[1]
        idx = indices.detach().cpu().numpy()
        mod = modality.detach().cpu().numpy()
        img = idx[mod == IMAGE].ravel()
        txt = idx[mod == TEXT].ravel()
        if img.size:
            self.v[layer] += np.bincount(img, minlength=e)
        if txt.size:
            self.t[layer] += np.bincount(txt, minlength=e)
        self.tokens[layer] += idx.shape[0]

    def merge(self, other: "ExpertStats") -> "ExpertStats":
        if other.shape != self.shape:
            raise ValueError("shape mismatch in ExpertStats.merge")
        self.v += other.v
        self.t += other.t
        self.tokens += other.tokens
        return self

    def count_rows(self):
        """(layer, expert, v, t) rows for CSV export."""
        layers, experts = self.shape
        for i in range(layers):
            for j in range(experts):
                yield i, j, int(self.v[i, j]), int(self.t[i, j])


def route(token_states: torch.Tensor, gate: nn.Linear, top_k: int):
    """Top-k expert selection: softmax over gate logits, keep the k largest,
    renormalize the kept weights to sum to one.

    Returns (indices [m, k] int64, weights [m, k]).
    """
    if token_states.ndim != 2 or token_states.shape[0] < 1:
        raise ValueError(f"token_states must be [m, d] with m >= 1, got {tuple(token_states.shape)}")
    logits = gate(token_states)
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite gate logits")
    probs = F.softmax(logits, dim=-1)
    # stable descending sort on detached probs: equal logits keep index order
    order = torch.argsort(-probs.detach(), dim=-1, stable=True)
    indices = order[:, :top_k]
    selected = torch.gather(probs, 1, indices)
    weights = selected / selected.sum(dim=-1, keepdim=True)
    return indices, weights, probs


class _Mlp(nn.Module):
    def __init__(self, d_model: int, hidden: int, dtype=None):
        super().__init__()
        self.fc1 = nn.Linear(d_model, hidden, bias=False, dtype=dtype)
        self.fc2 = nn.Linear(hidden, d_model, bias=False, dtype=dtype)

    def forward(self, x):
        return self.fc2(F.silu(self.fc1(x)))


class MoELayer(nn.Module):
    """Routed experts plus always-on shared experts.

    output = sum(shared_e(x)) + sum over selected experts of weight * expert(x)
    """

    def __init__(self, d_model: int, cfg: MoEConfig, dtype=None):
        super().__init__()
        self.cfg = cfg
        self.gate = nn.Linear(d_model, cfg.num_experts, bias=False, dtype=dtype)
        self.experts = nn.ModuleList(
            _Mlp(d_model, cfg.expert_hidden, dtype) for _ in range(cfg.num_experts))
        self.shared = nn.ModuleList(
            _Mlp(d_model, cfg.shared_hidden, dtype) for _ in range(cfg.shared_experts))

    def forward(self, x: torch.Tensor, modality: torch.Tensor | None = None,
                stats: ExpertStats | None = None, layer_idx: int = 0):
        """x [m, d]; modality [m] tags tokens IMAGE/TEXT for stats accumulation.

        Returns (y [m, d], aux load-balance loss scalar).
        """
        m, d = x.shape
        indices, weights, probs = route(x, self.gate, self.cfg.top_k)
        if stats is not None:
            if modality is None:
                raise ValueError("stats accumulation requires modality tags")
            stats.record(layer_idx, indices, modality)

        y = torch.zeros_like(x)
        for s in self.shared:
            y = y + s(x)
        for e, expert in enumerate(self.experts):
            sel = indices == e  # [m, k]
            rows = sel.any(dim=-1)
            if not rows.any():
                continue
            w = (weights * sel).sum(dim=-1)[rows]
            y[rows] = y[rows] + w[:, None] * expert(x[rows])

        # switch-style load balance: fraction routed vs mean router probability
        frac = torch.zeros(self.cfg.num_experts, dtype=x.dtype, device=x.device)
        frac.scatter_add_(0, indices.reshape(-1),
                          torch.full((m * self.cfg.top_k,), 1.0 / (m * self.cfg.top_k),
                                     dtype=x.dtype, device=x.device))
        aux = self.cfg.num_experts * (frac * probs.mean(dim=0)).sum()
        return y, aux


def heatmap_stat(stats: ExpertStats) -> np.ndarray:
    """Per-layer, per-expert image-specialization score in [0, 1].

    Entry = vhat / (vhat + that) with vhat, that the per-layer normalized
    image and text activation counts; 0.5 means modality-neutral.
    """
    vhat, that = _normalized(stats)
    return vhat / (vhat + that)


def kl_per_layer(stats: ExpertStats, epsilon: float = 1e-8) -> np.ndarray:
    """KL(image distribution || text distribution) per layer, after epsilon
    smoothing and renormalization."""
    vhat, that = _normalized(stats)
    p = vhat + epsilon
    q = that + epsilon
    p = p / p.sum(axis=1, keepdims=True)
    q = q / q.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p / q), 0.0)
    return terms.sum(axis=1)


def _normalized(stats: ExpertStats) -> tuple[np.ndarray, np.ndarray]:
    vsum = stats.v.sum(axis=1)
    tsum = stats.t.sum(axis=1)
    for name, sums in (("image", vsum), ("text", tsum)):
        empty = np.where(sums == 0)[0]
        if empty.size:
            raise ValueError(f"layer {empty[0]} has no {name}-token activations")
    return stats.v / vsum[:, None], stats.t / tsum[:, None]
