"""Inference: greedy text decoding until the model opens an image, then Euler
integration of the learned velocity field with classifier-free guidance.

The text stream is decoded token by token. When the model proposes a size
token (or an explicit override forces one), the ratio token must follow; the
image is then generated by integrating x' = v(x, t) from t=0 to t=1 on the
token grid implied by the (size, ratio) pair. Generated images re-enter the
dialog as conditional blocks that keep their size/ratio prefix, exactly the
substitution the training-time position shift accounts for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .attnmask import validate_inference_layout
from .codec import LatentCodecConfig, LatentBlock, VitConfig, decode, denormalize_latents
from .model import MultimodalModel, assemble_batch
from .moe import ExpertStats
from .seqlayout import (LayoutConfig, ShapeSpec, Task, Vocab, _cond_image_block,
                        _gen_image_block, _SeqBuilder, gen_segment, ImagePayload)


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleRequest:
    prompt: str
    steps: int = 32
    guidance: float = 3.0
    size_anchor: int | None = None   # force the size token instead of decoding it
    ratio_index: int | None = None   # force the ratio token instead of decoding it
    enable_cot: bool = False
    max_text_tokens: int = 48
    seed: int = 0


@dataclass(frozen=True)
class DialogTurn:
    """One prior dialog element: a text message or an image (or both)."""
    text: str | None = None
    image: np.ndarray | None = None
    shape: ShapeSpec | None = None
    generated: bool = False  # generated images keep their size/ratio prefix


@dataclass
class SampleResult:
    image: np.ndarray
    size_anchor: int
    ratio_index: int
    grid: tuple[int, int]
    shape: ShapeSpec | None = None
    transcript: list[str] = field(default_factory=list)
    reasoning: str | None = None

    def as_turn(self) -> DialogTurn:
        return DialogTurn(image=self.image, shape=self.shape, generated=True)


class Sampler:
    def __init__(self, model: MultimodalModel, vocab: Vocab,
                 codec_cfg: LatentCodecConfig, vit_cfg: VitConfig):
        self.model = model
        self.vocab = vocab
        self.codec_cfg = codec_cfg
        self.vit_cfg = vit_cfg
        self.layout = LayoutConfig(vit_grid=vit_cfg.grid)

    # ------------------------------------------------------------------
    def _history_builder(self, history: tuple[DialogTurn, ...],
                         include_final_text: bool) -> tuple[_SeqBuilder, int]:
        v = self.vocab
        b = _SeqBuilder(v)
        b.token(v.bos, False)
        image_id = 0
        for i, turn in enumerate(history):
            is_final_text = (i == len(history) - 1 and turn.image is None)
            if turn.text is not None and (include_final_text or not is_final_text):
                b.text(v.encode_text(turn.text), False)
            if turn.image is not None:
                if turn.shape is None:
                    raise SamplingError("image turns need a ShapeSpec")
                if turn.generated:
                    b.token(v.size_token(turn.shape.size_anchor), False)
                    b.token(v.ratio_token(turn.shape.ratio_index), False)
                _cond_image_block(b, turn.shape.grid, turn.image, image_id, self.layout)
                image_id += 1
        return b, image_id

    def _forward(self, builder: _SeqBuilder, gen_state=None,
                 stats: ExpertStats | None = None):
        seq = builder.build(Task.T2I)
        problem = validate_inference_layout(seq.segments)
        if problem is not None:
            raise SamplingError(f"internal: invalid inference layout: {problem}")
        batch = assemble_batch([seq], self.vocab, self.model.cfg, self.codec_cfg,
                               self.vit_cfg, "inference", gen_state=gen_state)
        with torch.no_grad():
            logits, velocity, _ = self.model.forward(batch, stats)
        return batch, logits, velocity

    def _greedy_id(self, builder: _SeqBuilder, stats) -> int:
        _, logits, _ = self._forward(builder, stats=stats)
        n = sum(seg.token_count for seg in builder.segments)
        return int(torch.argmax(logits[0, n - 1]))

    # ------------------------------------------------------------------
    def sample(self, request: SampleRequest, history: tuple[DialogTurn, ...] = (),
               stats: ExpertStats | None = None) -> SampleResult:
        v = self.vocab
        turns = tuple(history) + (DialogTurn(text=request.prompt),)
        cond, next_image = self._history_builder(turns, include_final_text=True)
        transcript: list[str] = []
        reasoning_ids: list[int] = []

        if request.enable_cot:
            cond.token(v.think, False)
            transcript.append(v.name_of(v.think))

        # -- text phase: decode until the model proposes a size token
        size_id: int | None = None
        if request.size_anchor is not None and not request.enable_cot:
            size_id = v.size_token(request.size_anchor)
        else:
            for _ in range(request.max_text_tokens):
                tid = self._greedy_id(cond, stats)
                if tid == v.eos:
                    raise SamplingError(
                        "model closed the text stream without starting an image; "
                        f"transcript: {' '.join(transcript) or '<empty>'}")
                if v.anchor_of(tid) is not None:
                    size_id = (v.size_token(request.size_anchor)
                               if request.size_anchor is not None else tid)
                    break
                cond.token(tid, False)
                transcript.append(v.name_of(tid))
                if request.enable_cot:
                    reasoning_ids.append(tid)
            if size_id is None:
                raise SamplingError(
                    f"no size token within {request.max_text_tokens} decoded tokens; "
                    f"transcript: {' '.join(transcript) or '<empty>'}")
        cond.token(size_id, False)
        transcript.append(v.name_of(size_id))

        # -- the ratio token must follow the size token
        if request.ratio_index is not None:
            ratio_id = v.ratio_token(request.ratio_index)
        else:
            ratio_id = self._greedy_id(cond, stats)
            if v.ratio_index_of(ratio_id) is None:
                raise SamplingError(
                    f"model emitted size token {v.name_of(size_id)} but followed it "
                    f"with {v.name_of(ratio_id)} instead of a ratio token")
        cond.token(ratio_id, False)
        transcript.append(v.name_of(ratio_id))

        anchor = v.anchor_of(size_id)
        ratio_index = v.ratio_index_of(ratio_id)
        shape = ShapeSpec(anchor, ratio_index, self.codec_cfg.downsample, v.num_ratios)
        h, w = shape.grid

        # -- open the image block on both guidance branches; the unconditional
        # branch drops the final text turn (and any think/reasoning stream)
        branches = [cond]
        if request.guidance != 1.0:
            uncond, _ = self._history_builder(turns, include_final_text=False)
            uncond.token(size_id, False)
            uncond.token(ratio_id, False)
            branches.append(uncond)
        for b in branches:
            b.token(v.img_start, False)
            b.token(v.timestep, False)
            b.image(gen_segment(h, w, next_image), ImagePayload(None, (h, w)))

        # -- flow integration (Euler, t: 0 -> 1)
        gen = torch.Generator().manual_seed(request.seed)
        x = torch.randn((h * w, self.model.cfg.latent_channels),
                        generator=gen, dtype=self.model.cfg.dtype)
        g = request.guidance
        for k in range(request.steps):
            t = k / request.steps
            state = {(0, next_image): (x.numpy(), t)}
            vel = None
            if g != 0.0:
                batch, _, velocity = self._forward(cond, gen_state=state, stats=stats)
                vel = velocity[0][batch.gen_flag[0]]
            if g != 1.0:
                batch, _, velocity = self._forward(uncond, gen_state=state, stats=stats)
                v_un = velocity[0][batch.gen_flag[0]]
                vel = v_un if vel is None else v_un + g * (vel - v_un)
            x = x + vel / request.steps

        values = denormalize_latents(x.numpy(), self.codec_cfg)
        image = np.clip(decode(LatentBlock((h, w), values), self.codec_cfg), 0.0, 1.0)
        reasoning = (v.decode_text(reasoning_ids) if request.enable_cot else None)
        return SampleResult(image=image, size_anchor=anchor, ratio_index=ratio_index,
                            grid=(h, w), shape=shape, transcript=transcript,
                            reasoning=reasoning)

    # ------------------------------------------------------------------
    def continue_dialog(self, history: tuple[DialogTurn, ...],
                        result: SampleResult, prompt: str) -> tuple[DialogTurn, ...]:
        """History for a follow-up request after `result` was generated."""
        return tuple(history) + (DialogTurn(text=prompt), result.as_turn())
