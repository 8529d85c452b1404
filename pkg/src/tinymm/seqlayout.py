"""Token/segment data model, extended vocabulary, task templates, resolution codec.

Everything here is pure and framework-free; the model and trainer consume
these layouts but never mutate them.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np


class SegmentKind(Enum):
    TEXT = "text"
    COND_IMAGE_VAE = "cond_vae"
    COND_IMAGE_VIT = "cond_vit"
    GEN_IMAGE = "gen"


IMAGE_KINDS = frozenset(
    {SegmentKind.COND_IMAGE_VAE, SegmentKind.COND_IMAGE_VIT, SegmentKind.GEN_IMAGE}
)


class Task(Enum):
    T2I = "t2i"
    LM = "lm"
    MMU = "mmu"
    INTL = "intl"
    COT_T2TI = "cot"


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    token_count: int
    grid: tuple[int, int] | None = None
    image_id: int | None = None

    def __post_init__(self):
        if self.token_count < 1:
            raise ValueError(f"segment token_count must be >= 1, got {self.token_count}")
        if self.kind is SegmentKind.TEXT and self.grid is not None:
            raise ValueError("TEXT segments carry no grid")
        if self.kind in IMAGE_KINDS:
            if self.grid is None:
                raise ValueError(f"{self.kind.name} segment requires a grid")
            h, w = self.grid
            if h < 1 or w < 1 or h * w != self.token_count:
                raise ValueError(f"grid {self.grid} inconsistent with token_count {self.token_count}")

    @property
    def is_image(self) -> bool:
        return self.kind in IMAGE_KINDS


def text_segment(n: int) -> Segment:
    return Segment(SegmentKind.TEXT, n)


def gen_segment(h: int, w: int, image_id: int | None = None) -> Segment:
    return Segment(SegmentKind.GEN_IMAGE, h * w, (h, w), image_id)


def cond_vae_segment(h: int, w: int, image_id: int | None = None) -> Segment:
    return Segment(SegmentKind.COND_IMAGE_VAE, h * w, (h, w), image_id)


def cond_vit_segment(h: int, w: int, image_id: int | None = None) -> Segment:
    return Segment(SegmentKind.COND_IMAGE_VIT, h * w, (h, w), image_id)


def total_tokens(segments: list[Segment]) -> int:
    return sum(s.token_count for s in segments)


def segment_offsets(segments: list[Segment]) -> list[int]:
    """Start offset of each segment; a trailing entry holds the total length."""
    offs = [0]
    for s in segments:
        offs.append(offs[-1] + s.token_count)
    return offs


# ---------------------------------------------------------------------------
# Vocabulary

_CHARS = tuple(string.ascii_lowercase + string.digits + ".,?!:-'")

_CONTROL_SPECIALS = ("<bos>", "<eos>", "<pad>", "<unk>", "<img_start>", "<img_end>",
                     "<timestep>", "<think>")

DEFAULT_SIZE_ANCHORS = (16, 32, 64)
DEFAULT_NUM_RATIOS = 33


@dataclass(frozen=True)
class Vocab:
    """Base text tokens plus special tokens at contiguous ids above the base."""

    base_tokens: tuple[str, ...]
    size_anchors: tuple[int, ...]
    num_ratios: int
    specials: dict[str, int] = field(default_factory=dict)

    @property
    def base_size(self) -> int:
        return len(self.base_tokens)

    @property
    def size(self) -> int:
        return self.base_size + len(self.specials)

    def __post_init__(self):
        if len(set(self.base_tokens)) != len(self.base_tokens):
            raise ValueError("duplicate base tokens")
        ids = sorted(self.specials.values())
        if ids != list(range(self.base_size, self.base_size + len(ids))):
            raise ValueError("special ids must be contiguous above base_size")
        object.__setattr__(self, "_base_index", {t: i for i, t in enumerate(self.base_tokens)})
        object.__setattr__(self, "_id_to_name", {i: n for n, i in self.specials.items()})

    # -- special token lookup

    def id_of(self, name: str) -> int:
        if name in self.specials:
            return self.specials[name]
        return self._base_index[name]

    def name_of(self, token_id: int) -> str:
        if token_id < self.base_size:
            return self.base_tokens[token_id]
        return self._id_to_name[token_id]

    @property
    def bos(self) -> int:
        return self.specials["<bos>"]

    @property
    def eos(self) -> int:
        return self.specials["<eos>"]

    @property
    def pad(self) -> int:
        return self.specials["<pad>"]

    @property
    def img_start(self) -> int:
        return self.specials["<img_start>"]

    @property
    def img_end(self) -> int:
        return self.specials["<img_end>"]

    @property
    def timestep(self) -> int:
        return self.specials["<timestep>"]

    @property
    def think(self) -> int:
        return self.specials["<think>"]

    def size_token(self, anchor: int) -> int:
        return self.specials[f"<img_size_{anchor}>"]

    def ratio_token(self, index: int) -> int:
        return self.specials[f"<img_ratio_{index}>"]

    def anchor_of(self, token_id: int) -> int | None:
        name = self._id_to_name.get(token_id, "")
        if name.startswith("<img_size_"):
            return int(name[len("<img_size_"):-1])
        return None

    def ratio_index_of(self, token_id: int) -> int | None:
        name = self._id_to_name.get(token_id, "")
        if name.startswith("<img_ratio_"):
            return int(name[len("<img_ratio_"):-1])
        return None

    # -- toy tokenizer: word level with per-character fallback

    def encode_text(self, text: str) -> list[int]:
        ids = []
        for word in text.lower().split():
            if word in self._base_index:
                ids.append(self._base_index[word])
            else:
                for ch in word:
                    ids.append(self._base_index.get(ch, self.specials["<unk>"]))
        return ids

    def decode_text(self, ids: list[int]) -> str:
        return " ".join(self.name_of(i) for i in ids)

    # -- manifest persistence (human-readable id -> name table)

    def save_manifest(self, path) -> None:
        lines = [f"# base_size={self.base_size} anchors={','.join(map(str, self.size_anchors))} "
                 f"ratios={self.num_ratios}"]
        for i, tok in enumerate(self.base_tokens):
            lines.append(f"{i}\t{tok}")
        for name, i in sorted(self.specials.items(), key=lambda kv: kv[1]):
            lines.append(f"{i}\t{name}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @staticmethod
    def load_manifest(path) -> "Vocab":
        with open(path) as fh:
            lines = fh.read().splitlines()
        header = lines[0].lstrip("# ").split()
        base_size = int(header[0].split("=")[1])
        anchors = tuple(int(a) for a in header[1].split("=")[1].split(","))
        num_ratios = int(header[2].split("=")[1])
        base, specials = [], {}
        for line in lines[1:]:
            sid, tok = line.split("\t")
            if int(sid) < base_size:
                base.append(tok)
            else:
                specials[tok] = int(sid)
        return Vocab(tuple(base), anchors, num_ratios, specials)


def make_vocab(words: tuple[str, ...] = (),
               size_anchors: tuple[int, ...] = DEFAULT_SIZE_ANCHORS,
               num_ratios: int = DEFAULT_NUM_RATIOS) -> Vocab:
    base = list(_CHARS)
    for w in words:
        if w not in base:
            base.append(w)
    specials = {}
    next_id = len(base)
    names = list(_CONTROL_SPECIALS)
    names += [f"<img_size_{a}>" for a in size_anchors]
    names += [f"<img_ratio_{i}>" for i in range(num_ratios)]
    for name in names:
        specials[name] = next_id
        next_id += 1
    return Vocab(tuple(base), tuple(size_anchors), num_ratios, specials)


# ---------------------------------------------------------------------------
# Automatic resolution codec

class RatioToken(NamedTuple):
    index: int
    clamped: bool


def ratio_token_of(aspect: float, num_ratios: int = DEFAULT_NUM_RATIOS) -> RatioToken:
    """Quantize an aspect ratio in [1/4, 4] onto a log-uniform token grid."""
    if num_ratios % 2 == 0:
        raise ValueError("num_ratios must be odd so a 1:1 center token exists")
    if not math.isfinite(aspect) or aspect <= 0:
        raise ValueError(f"aspect must be a positive real, got {aspect}")
    clamped = aspect < 0.25 or aspect > 4.0
    a = min(max(aspect, 0.25), 4.0)
    half = (num_ratios - 1) / 2
    index = round(half * (1.0 + math.log(a) / math.log(4.0)))
    return RatioToken(int(min(max(index, 0), num_ratios - 1)), clamped)


def aspect_of_ratio_token(index: int, num_ratios: int = DEFAULT_NUM_RATIOS) -> float:
    if not 0 <= index <= num_ratios - 1:
        raise ValueError(f"ratio index {index} out of range [0, {num_ratios - 1}]")
    return 4.0 ** ((2 * index - (num_ratios - 1)) / (num_ratios - 1))


def grid_shape(size_anchor: int, aspect: float, downsample: int) -> tuple[int, int]:
    """Latent token grid (h, w) for a pixel anchor and aspect ratio w/h."""
    if size_anchor % downsample != 0:
        raise ValueError(f"size_anchor {size_anchor} not a multiple of downsample {downsample}")
    base = size_anchor / downsample
    s = math.sqrt(aspect)
    # round half away from zero so the mapping stays monotone in aspect
    h = max(1, int(math.floor(base / s + 0.5)))
    w = max(1, int(math.floor(base * s + 0.5)))
    return h, w


@dataclass(frozen=True)
class ShapeSpec:
    size_anchor: int
    ratio_index: int
    downsample: int
    num_ratios: int = DEFAULT_NUM_RATIOS

    def __post_init__(self):
        if not 0 <= self.ratio_index <= self.num_ratios - 1:
            raise ValueError(f"ratio_index {self.ratio_index} out of range")
        if self.size_anchor % self.downsample != 0:
            raise ValueError(f"size_anchor {self.size_anchor} must be a multiple of "
                             f"the downsample factor {self.downsample}")

    @property
    def aspect(self) -> float:
        return aspect_of_ratio_token(self.ratio_index, self.num_ratios)

    @property
    def grid(self) -> tuple[int, int]:
        return grid_shape(self.size_anchor, self.aspect, self.downsample)

    @property
    def pixel_size(self) -> tuple[int, int]:
        h, w = self.grid
        return h * self.downsample, w * self.downsample


# ---------------------------------------------------------------------------
# Token sequences

@dataclass
class ImagePayload:
    """Pixel payload for one image in a sequence (clean target or condition)."""

    pixels: np.ndarray | None  # H x W x 3 in [0, 1]; None for not-yet-generated
    grid: tuple[int, int]


@dataclass
class TokenSequence:
    segments: list[Segment]
    ids: np.ndarray           # int64 [n]; <pad> filler at image-latent positions
    loss_mask: np.ndarray     # bool [n]; True where cross-entropy applies to the token
    images: dict[int, ImagePayload] = field(default_factory=dict)
    task: Task | None = None

    def __post_init__(self):
        n = total_tokens(self.segments)
        if len(self.ids) != n or len(self.loss_mask) != n:
            raise ValueError("ids/loss_mask length must match total segment tokens")
        offs = segment_offsets(self.segments)
        for seg, start in zip(self.segments, offs):
            if seg.is_image and self.loss_mask[start:start + seg.token_count].any():
                raise ValueError("loss_mask must be False on image-latent tokens")

    @property
    def n(self) -> int:
        return len(self.ids)

    def debug_lines(self, vocab: Vocab) -> list[str]:
        """Line-oriented dump for golden tests: one line per segment."""
        lines = []
        offs = segment_offsets(self.segments)
        for i, (seg, start) in enumerate(zip(self.segments, offs)):
            stop = start + seg.token_count
            grid = f"{seg.grid[0]}x{seg.grid[1]}" if seg.grid else "-"
            img = seg.image_id if seg.image_id is not None else "-"
            if seg.kind is SegmentKind.TEXT:
                toks = " ".join(vocab.name_of(t) for t in self.ids[start:stop])
            else:
                toks = "-"
            loss = "".join("1" if m else "0" for m in self.loss_mask[start:stop])
            lines.append(f"seg {i} {seg.kind.name} n={seg.token_count} grid={grid} "
                         f"img={img} loss={loss} toks={toks}")
        return lines


@dataclass(frozen=True)
class LayoutConfig:
    """Template knobs shared by every task layout."""

    vit_grid: tuple[int, int]
    loss_on_img_delims: bool = False


class _SeqBuilder:
    def __init__(self, vocab: Vocab):
        self.vocab = vocab
        self.segments: list[Segment] = []
        self.ids: list[int] = []
        self.loss: list[bool] = []
        self.images: dict[int, ImagePayload] = {}

    def text(self, ids: list[int], loss: bool):
        if not ids:
            return
        self.segments.append(text_segment(len(ids)))
        self.ids.extend(ids)
        self.loss.extend([loss] * len(ids))

    def token(self, tid: int, loss: bool):
        self.text([tid], loss)

    def image(self, seg: Segment, payload: ImagePayload | None = None):
        self.segments.append(seg)
        self.ids.extend([self.vocab.pad] * seg.token_count)
        self.loss.extend([False] * seg.token_count)
        if payload is not None and seg.image_id is not None:
            self.images[seg.image_id] = payload

    def build(self, task: Task) -> TokenSequence:
        # fuse adjacent text segments so layouts stay canonical
        fused: list[Segment] = []
        for seg in self.segments:
            if fused and seg.kind is SegmentKind.TEXT and fused[-1].kind is SegmentKind.TEXT:
                fused[-1] = text_segment(fused[-1].token_count + seg.token_count)
            else:
                fused.append(seg)
        return TokenSequence(fused, np.asarray(self.ids, dtype=np.int64),
                             np.asarray(self.loss, dtype=bool), self.images, task)


def _require(sample, fields: list[str], task: Task):
    for name in fields:
        if getattr(sample, name, None) is None:
            raise ValueError(f"task {task.value} requires sample field '{name}'")


def _gen_image_block(b: _SeqBuilder, shape: ShapeSpec, pixels: np.ndarray | None,
                     image_id: int, cfg: LayoutConfig):
    """[size][ratio][img_start][timestep][GEN h*w][img_end]"""
    v = b.vocab
    b.token(v.size_token(shape.size_anchor), True)
    b.token(v.ratio_token(shape.ratio_index), True)
    b.token(v.img_start, cfg.loss_on_img_delims)
    b.token(v.timestep, False)
    h, w = shape.grid
    b.image(gen_segment(h, w, image_id), ImagePayload(pixels, (h, w)))
    b.token(v.img_end, cfg.loss_on_img_delims)


def _cond_image_block(b: _SeqBuilder, grid: tuple[int, int], pixels: np.ndarray,
                      image_id: int, cfg: LayoutConfig):
    """[img_start][timestep][COND_VAE h*w][COND_VIT hv*wv][img_end]"""
    v = b.vocab
    b.token(v.img_start, cfg.loss_on_img_delims)
    b.token(v.timestep, False)
    h, w = grid
    b.image(cond_vae_segment(h, w, image_id), ImagePayload(pixels, (h, w)))
    hv, wv = cfg.vit_grid
    b.image(cond_vit_segment(hv, wv, image_id))
    b.token(v.img_end, cfg.loss_on_img_delims)


def build_sequence(sample, task: Task, vocab: Vocab, cfg: LayoutConfig) -> TokenSequence:
    """Emit the segment layout and loss mask for one training sample."""
    b = _SeqBuilder(vocab)
    b.token(vocab.bos, False)

    if task is Task.LM:
        _require(sample, ["text"], task)
        b.text(vocab.encode_text(sample.text), True)
        b.token(vocab.eos, True)

    elif task is Task.T2I:
        _require(sample, ["caption", "image", "shape"], task)
        b.text(vocab.encode_text(sample.caption), True)
        _gen_image_block(b, sample.shape, sample.image, image_id=0, cfg=cfg)

    elif task is Task.MMU:
        _require(sample, ["image", "shape", "question", "answer"], task)
        _cond_image_block(b, sample.shape.grid, sample.image, image_id=0, cfg=cfg)
        b.text(vocab.encode_text(sample.question), False)
        b.text(vocab.encode_text(sample.answer), True)
        b.token(vocab.eos, True)

    elif task is Task.INTL:
        _require(sample, ["source_image", "instruction", "image", "shape"], task)
        _cond_image_block(b, sample.shape.grid, sample.source_image, image_id=0, cfg=cfg)
        b.text(vocab.encode_text(sample.instruction), False)
        _gen_image_block(b, sample.shape, sample.image, image_id=1, cfg=cfg)

    elif task is Task.COT_T2TI:
        _require(sample, ["caption", "reasoning", "image", "shape"], task)
        b.text(vocab.encode_text(sample.caption), False)
        b.token(vocab.think, False)
        b.text(vocab.encode_text(sample.reasoning), True)
        _gen_image_block(b, sample.shape, sample.image, image_id=0, cfg=cfg)

    else:
        raise ValueError(f"unknown task {task}")

    return b.build(task)


def replace_gen_with_cond(segments: list[Segment], vit_grid: tuple[int, int]) -> list[Segment]:
    """Inference-layout counterpart of a training layout: every generated image
    re-enters the context as its conditional representation (VAE + vision halves)."""
    out: list[Segment] = []
    for seg in segments:
        if seg.kind is SegmentKind.GEN_IMAGE:
            h, w = seg.grid
            hv, wv = vit_grid
            out.append(cond_vae_segment(h, w, seg.image_id))
            out.append(cond_vit_segment(hv, wv, seg.image_id))
        else:
            out.append(seg)
    return out
