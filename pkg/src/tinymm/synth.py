"""Synthetic text-image data: rendered primitive shapes with templated
captions, QA pairs, edit pairs, and reasoning traces.

Captions mention exactly what is rendered, so every label is programmatically
checkable (dominant color, orientation word vs. ratio token, edit locality).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .seqlayout import ShapeSpec, Task, DEFAULT_NUM_RATIOS

DEFAULT_COLORS = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.10, 0.20, 0.85),
    "yellow": (0.90, 0.85, 0.10),
}
DEFAULT_SHAPES = ("square", "circle", "triangle")
BUCKETS = ("left", "right", "top", "bottom", "center")
RELATIONS = ("left of", "right of", "above", "below")


@dataclass(frozen=True)
class SynthSpec:
    colors: tuple[str, ...] = tuple(DEFAULT_COLORS)
    shapes: tuple[str, ...] = DEFAULT_SHAPES
    size_anchor: int = 32
    downsample: int = 4
    num_ratios: int = DEFAULT_NUM_RATIOS
    vertical_ratios: tuple[int, ...] = (10, 12, 14)
    horizontal_ratios: tuple[int, ...] = (18, 20, 22)
    p_square: float = 0.5
    p_two_shapes: float = 0.25
    background: float = 0.8

    @property
    def center_ratio(self) -> int:
        return (self.num_ratios - 1) // 2


@dataclass
class Placement:
    shape: str
    color: str
    cy: float  # fractions of canvas height/width
    cx: float
    r: float   # fraction of min(H, W)

    def bbox(self, hpix: int, wpix: int) -> tuple[int, int, int, int]:
        rad = self.r * min(hpix, wpix)
        y0 = max(0, int(np.floor(self.cy * hpix - rad)) - 1)
        y1 = min(hpix, int(np.ceil(self.cy * hpix + rad)) + 1)
        x0 = max(0, int(np.floor(self.cx * wpix - rad)) - 1)
        x1 = min(wpix, int(np.ceil(self.cx * wpix + rad)) + 1)
        return y0, y1, x0, x1


@dataclass
class SyntheticSample:
    task: Task
    shape: ShapeSpec | None = None
    image: np.ndarray | None = None
    caption: str | None = None
    text: str | None = None
    question: str | None = None
    answer: str | None = None
    reasoning: str | None = None
    source_image: np.ndarray | None = None
    instruction: str | None = None
    placements: list[Placement] = field(default_factory=list)
    source_placements: list[Placement] = field(default_factory=list)
    edit_kind: str | None = None


# ---------------------------------------------------------------------------
# Rendering

_BUCKET_XY = {
    "left": (0.5, 0.25),
    "right": (0.5, 0.75),
    "top": (0.25, 0.5),
    "bottom": (0.75, 0.5),
    "center": (0.5, 0.5),
}


def render(placements: list[Placement], hpix: int, wpix: int,
           background: float = 0.8) -> np.ndarray:
    img = np.full((hpix, wpix, 3), background)
    yy, xx = np.mgrid[0:hpix, 0:wpix]
    for p in placements:
        cy, cx = p.cy * hpix, p.cx * wpix
        rad = p.r * min(hpix, wpix)
        dy, dx = yy + 0.5 - cy, xx + 0.5 - cx
        if p.shape == "square":
            mask = (np.abs(dy) <= rad) & (np.abs(dx) <= rad)
        elif p.shape == "circle":
            mask = dy * dy + dx * dx <= rad * rad
        elif p.shape == "triangle":
            mask = (dy >= -rad) & (dy <= rad) & (np.abs(dx) <= (dy + rad) / 2)
        else:
            raise ValueError(f"unknown shape {p.shape!r}")
        img[mask] = DEFAULT_COLORS[p.color]
    return img


def dominant_color(image: np.ndarray, background: float = 0.8,
                   threshold: float = 0.15) -> str | None:
    """Nearest palette color of the mean non-background pixel; None when the
    canvas is effectively empty."""
    dev = np.abs(image - background).max(axis=-1)
    mask = dev > threshold
    if not mask.any():
        return None
    mean_rgb = image[mask].mean(axis=0)
    names = list(DEFAULT_COLORS)
    dists = [np.linalg.norm(mean_rgb - np.array(DEFAULT_COLORS[n])) for n in names]
    return names[int(np.argmin(dists))]


def orientation_word(ratio_index: int, num_ratios: int = DEFAULT_NUM_RATIOS) -> str:
    center = (num_ratios - 1) // 2
    if ratio_index < center:
        return "vertical"
    if ratio_index > center:
        return "horizontal"
    return "square"


# ---------------------------------------------------------------------------
# Sample generation

def _sample_shape_spec(spec: SynthSpec, rng: np.random.Generator) -> ShapeSpec:
    u = rng.random()
    if u < spec.p_square:
        idx = spec.center_ratio
    elif u < spec.p_square + (1 - spec.p_square) / 2:
        idx = int(rng.choice(spec.vertical_ratios))
    else:
        idx = int(rng.choice(spec.horizontal_ratios))
    return ShapeSpec(spec.size_anchor, idx, spec.downsample, spec.num_ratios)


def _single_placement(spec: SynthSpec, rng: np.random.Generator,
                      bucket: str | None = None) -> tuple[Placement, str]:
    bucket = bucket or str(rng.choice(BUCKETS))
    cy, cx = _BUCKET_XY[bucket]
    p = Placement(shape=str(rng.choice(spec.shapes)), color=str(rng.choice(spec.colors)),
                  cy=cy, cx=cx, r=float(rng.uniform(0.17, 0.23)))
    return p, bucket


def _pair_placements(spec: SynthSpec, rng: np.random.Generator) -> tuple[list[Placement], str]:
    rel = str(rng.choice(RELATIONS))
    spots = {"left of": ("left", "right"), "right of": ("right", "left"),
             "above": ("top", "bottom"), "below": ("bottom", "top")}[rel]
    first, _ = _single_placement(spec, rng, spots[0])
    second, _ = _single_placement(spec, rng, spots[1])
    # the first-mentioned shape is strictly larger so "dominant color" is well defined
    first.r = float(rng.uniform(0.20, 0.24))
    second.r = float(rng.uniform(0.10, 0.13))
    while second.color == first.color:
        second.color = str(rng.choice(spec.colors))
    return [first, second], rel


def _caption(placements: list[Placement], bucket_or_rel: str, shape: ShapeSpec,
             spec: SynthSpec) -> str:
    orient = orientation_word(shape.ratio_index, spec.num_ratios)
    prefix = "" if orient == "square" else f"a {orient} image of "
    p = placements[0]
    if len(placements) == 1:
        where = "in the center" if bucket_or_rel == "center" else f"on the {bucket_or_rel}"
        body = f"a {p.color} {p.shape} {where}"
    else:
        q = placements[1]
        body = f"a {p.color} {p.shape} {bucket_or_rel} a {q.color} {q.shape}"
    return prefix + body


def gen_synthetic(spec: SynthSpec, rng: np.random.Generator,
                  task: Task = Task.T2I) -> SyntheticSample:
    shape = _sample_shape_spec(spec, rng)
    hpix, wpix = shape.pixel_size

    if task is Task.LM:
        # text-only stream reuses the caption grammar
        if rng.random() < spec.p_two_shapes:
            placements, where = _pair_placements(spec, rng)
        else:
            p, where = _single_placement(spec, rng)
            placements = [p]
        return SyntheticSample(task=Task.LM, text=_caption(placements, where, shape, spec))

    if task in (Task.T2I, Task.COT_T2TI, Task.MMU):
        if task is Task.T2I and rng.random() < spec.p_two_shapes:
            placements, where = _pair_placements(spec, rng)
        else:
            p, where = _single_placement(spec, rng)
            placements = [p]
        img = render(placements, hpix, wpix, spec.background)
        caption = _caption(placements, where, shape, spec)
        sample = SyntheticSample(task=task, shape=shape, image=img, caption=caption,
                                 placements=placements)
        if task is Task.COT_T2TI:
            p = placements[0]
            orient = orientation_word(shape.ratio_index, spec.num_ratios)
            sample.reasoning = (f"the prompt asks for a {p.color} {p.shape} . "
                                f"the main object is a {p.shape} colored {p.color} . "
                                f"the canvas should be {orient} .")
        if task is Task.MMU:
            p = placements[0]
            if rng.random() < 0.5:
                sample.question = f"what color is the {p.shape} ?"
                sample.answer = p.color
            else:
                sample.question = "how many shapes are there ?"
                sample.answer = "one" if len(placements) == 1 else "two"
        return sample

    if task is Task.INTL:
        src, bucket = _single_placement(spec, rng)
        src_img = render([src], hpix, wpix, spec.background)
        if rng.random() < 0.5:
            new_color = str(rng.choice([c for c in spec.colors if c != src.color]))
            tgt = Placement(src.shape, new_color, src.cy, src.cx, src.r)
            instruction = f"turn the {src.shape} {new_color}"
            edit_kind = "recolor"
        else:
            new_bucket = str(rng.choice([b for b in BUCKETS if b != bucket]))
            cy, cx = _BUCKET_XY[new_bucket]
            tgt = Placement(src.shape, src.color, cy, cx, src.r)
            instruction = f"move the {src.shape} to the {new_bucket}"
            edit_kind = "move"
        tgt_img = render([tgt], hpix, wpix, spec.background)
        return SyntheticSample(task=Task.INTL, shape=shape, image=tgt_img,
                               source_image=src_img, instruction=instruction,
                               placements=[tgt], source_placements=[src],
                               edit_kind=edit_kind)

    raise ValueError(f"unknown task {task}")


def caption_words(spec: SynthSpec = SynthSpec()) -> tuple[str, ...]:
    words = ["a", "an", "image", "of", "vertical", "horizontal", "square",
             "on", "in", "the", "center", "above", "below",
             "what", "color", "is", "how", "many", "shapes", "are", "there",
             "one", "two", "turn", "move", "to", "?", ".",
             "prompt", "asks", "for", "main", "object", "colored", "canvas",
             "should", "be"]
    words += list(spec.colors) + list(spec.shapes) + list(BUCKETS)
    seen, out = set(), []
    for w in words:
        if w not in seen:
            seen.add(w)
            out.append(w)
    return tuple(out)


def make_eval_prompts(spec: SynthSpec, n: int, rng: np.random.Generator):
    """Held-out single-shape prompts with their checkable attributes.

    Returns a list of dicts: prompt text, expected color, expected
    orientation ('vertical' / 'horizontal' / 'square').
    """
    prompts = []
    for _ in range(n):
        shape = _sample_shape_spec(spec, rng)
        p, bucket = _single_placement(spec, rng)
        prompts.append({
            "prompt": _caption([p], bucket, shape, spec),
            "color": p.color,
            "orientation": orientation_word(shape.ratio_index, spec.num_ratios),
        })
    return prompts


# ---------------------------------------------------------------------------
# Dataset persistence: image files plus line-delimited metadata

def save_dataset(samples: list[SyntheticSample], out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)

    def save_img(arr, name):
        if arr is None:
            return None
        Image.fromarray((np.clip(arr, 0, 1) * 255).round().astype(np.uint8)).save(out / name)
        return name

    with open(out / "metadata.jsonl", "w") as fh:
        for i, s in enumerate(samples):
            rec = {
                "index": i,
                "task": s.task.value,
                "caption": s.caption,
                "text": s.text,
                "question": s.question,
                "answer": s.answer,
                "reasoning": s.reasoning,
                "instruction": s.instruction,
                "edit_kind": s.edit_kind,
                "shape": None if s.shape is None else {
                    "size_anchor": s.shape.size_anchor,
                    "ratio_index": s.shape.ratio_index,
                    "downsample": s.shape.downsample,
                    "num_ratios": s.shape.num_ratios,
                },
                "placements": [asdict(p) for p in s.placements],
                "source_placements": [asdict(p) for p in s.source_placements],
                "image": save_img(s.image, f"images/{i:06d}.png"),
                "source_image": save_img(s.source_image, f"images/{i:06d}_src.png"),
            }
            fh.write(json.dumps(rec) + "\n")
    return out


def load_dataset(path) -> list[SyntheticSample]:
    root = Path(path)

    def load_img(name):
        if name is None:
            return None
        return np.asarray(Image.open(root / name), dtype=np.float64) / 255.0

    samples = []
    with open(root / "metadata.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            shape = None
            if rec["shape"] is not None:
                shape = ShapeSpec(**rec["shape"])
            samples.append(SyntheticSample(
                task=Task(rec["task"]), shape=shape,
                image=load_img(rec["image"]), caption=rec["caption"], text=rec["text"],
                question=rec["question"], answer=rec["answer"], reasoning=rec["reasoning"],
                source_image=load_img(rec["source_image"]), instruction=rec["instruction"],
                placements=[Placement(**p) for p in rec["placements"]],
                source_placements=[Placement(**p) for p in rec["source_placements"]],
                edit_kind=rec["edit_kind"],
            ))
    return samples
