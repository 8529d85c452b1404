"""Expert-routing analytics and generation-quality evaluation.

`analyze_experts` runs a batch of prompts through the sampler while recording
which experts every layer routes each token to, split by token modality, and
writes three CSVs (raw counts, image-share heatmap, per-layer image/text KL
divergence) plus a rendered two-panel figure.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .moe import ExpertStats, heatmap_stat, kl_per_layer
from .sampling import Sampler, SampleRequest
from .synth import dominant_color

log = logging.getLogger(__name__)


def check_conservation(stats: ExpertStats, top_k: int) -> None:
    """Every routed token contributes exactly top_k assignments."""
    totals = stats.v.sum(axis=1) + stats.t.sum(axis=1)
    expected = stats.tokens * top_k
    if not np.array_equal(totals, expected):
        raise AssertionError(f"routing conservation violated: assignment totals "
                             f"{totals.tolist()} != top_k * tokens {expected.tolist()}")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def render_figure(heatmap: np.ndarray, kl: np.ndarray, path: Path) -> None:
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    im = ax0.imshow(heatmap, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax0.set_xlabel("expert")
    ax0.set_ylabel("layer")
    ax0.set_title("image share of activations")
    fig.colorbar(im, ax=ax0)
    ax1.plot(np.arange(len(kl)), kl, marker="o")
    ax1.set_xlabel("layer")
    ax1.set_ylabel("KL(image || text)")
    ax1.set_title("modality divergence by depth")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def analyze_experts(sampler: Sampler, prompts: list[str], out_dir: str | Path,
                    steps: int = 12, guidance: float = 3.0, seed: int = 0,
                    size_anchor: int | None = None,
                    ratio_index: int | None = None) -> dict:
    """Generate one image per prompt, accumulate routing statistics, and write
    raw_counts.csv / heatmap.csv / kl.csv / experts.png under out_dir."""
    if not prompts:
        raise ValueError("prompt list is empty: nothing to analyze")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cfg = sampler.model.cfg
    stats = ExpertStats(cfg.layers, cfg.moe.num_experts)
    for i, prompt in enumerate(prompts):
        sampler.sample(SampleRequest(prompt, steps=steps, guidance=guidance,
                                     seed=seed + i, size_anchor=size_anchor,
                                     ratio_index=ratio_index),
                       stats=stats)
    check_conservation(stats, cfg.moe.top_k)

    heat = heatmap_stat(stats)
    kl = kl_per_layer(stats)
    paths = {
        "raw_counts": out / "raw_counts.csv",
        "heatmap": out / "heatmap.csv",
        "kl": out / "kl.csv",
        "figure": out / "experts.png",
    }
    _write_csv(paths["raw_counts"], ["layer", "expert", "image_count", "text_count"],
               stats.count_rows())
    _write_csv(paths["heatmap"], ["layer", "expert", "image_share"],
               ((i, j, f"{heat[i, j]:.6f}") for i in range(heat.shape[0])
                for j in range(heat.shape[1])))
    _write_csv(paths["kl"], ["layer", "kl"],
               ((i, f"{kl[i]:.6f}") for i in range(len(kl))))
    render_figure(heat, kl, paths["figure"])
    log.info("expert KL by depth: first layer %.4f, last layer %.4f, mean %.4f",
             kl[0], kl[-1], kl.mean())
    return {"stats": stats, "heatmap": heat, "kl": kl, "paths": paths}


def evaluate_t2i(sampler: Sampler, eval_prompts: list[dict], steps: int = 12,
                 guidance: float = 3.0, seed: int = 0, background: float = 0.8) -> dict:
    """Score prompt adherence on held-out prompts.

    Each prompt dict carries the text plus its checkable attributes: expected
    dominant color and expected orientation family. Orientation is judged by
    the generated latent grid (taller than wide = vertical), color by the mean
    non-background pixel of the decoded image.
    """
    if not eval_prompts:
        raise ValueError("no evaluation prompts given")
    color_hits = 0
    orient_hits = orient_total = 0
    for i, item in enumerate(eval_prompts):
        res = sampler.sample(SampleRequest(item["prompt"], steps=steps,
                                           guidance=guidance, seed=seed + i))
        if dominant_color(res.image, background) == item["color"]:
            color_hits += 1
        if item["orientation"] in ("vertical", "horizontal"):
            orient_total += 1
            h, w = res.grid
            if (h > w) if item["orientation"] == "vertical" else (w > h):
                orient_hits += 1
    return {
        "n": len(eval_prompts),
        "color_acc": color_hits / len(eval_prompts),
        "orientation_acc": orient_hits / orient_total if orient_total else float("nan"),
        "orientation_n": orient_total,
    }
