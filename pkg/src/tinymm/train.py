"""Staged trainer: AdamW with warmup + cosine decay, per-stage task sets and
parameter freezing, JSONL metrics, deterministic checkpointing and resume.

Stage plan:
  I   text-to-image, language modeling, and image understanding; the vision
      stand-in and its projector stay frozen.
  II  image understanding only; *only* the vision stand-in and its projector
      train, the backbone is frozen.
  III adds interleaved editing; everything trains.
  IV  adds reasoned (think-then-draw) generation; everything trains.

Image-resolution anchors on the VAE path may grow but never shrink across
stages; the vision-encoder anchor is a single fixed value.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import torch
import yaml

from .checkpoint import config_hash, load_checkpoint, read_manifest, save_checkpoint
from .config import RunConfig, StageConfig, TrainConfig, from_dict, to_dict
from .model import ModelConfig, MultimodalModel, assemble_batch
from .seqlayout import LayoutConfig, Task, Vocab, build_sequence
from .synth import SyntheticSample

STAGE_TASKS: dict[str, tuple[Task, ...]] = {
    "I": (Task.T2I, Task.LM, Task.MMU),
    "II": (Task.MMU,),
    "III": (Task.T2I, Task.LM, Task.MMU, Task.INTL),
    "IV": (Task.T2I, Task.LM, Task.MMU, Task.INTL, Task.COT_T2TI),
}

_VIT_PREFIXES = ("vit_enc.", "vit_proj.")


def trainable_parameter_names(model: MultimodalModel, stage_name: str) -> list[str]:
    names = [n for n, _ in model.named_parameters()]
    if stage_name == "I":
        return [n for n in names if not n.startswith(_VIT_PREFIXES)]
    if stage_name == "II":
        return [n for n in names if n.startswith(_VIT_PREFIXES)]
    return names


def validate_stage_plan(cfg: TrainConfig) -> None:
    if not cfg.stages:
        raise ValueError("training plan needs at least one stage")
    for stage in cfg.stages:
        if stage.name not in STAGE_TASKS:
            raise ValueError(f"unknown stage {stage.name!r}; expected one of "
                             f"{sorted(STAGE_TASKS)}")
    for prev, cur in zip(cfg.stages, cfg.stages[1:]):
        if max(cur.vae_anchors) < max(prev.vae_anchors) or \
           min(cur.vae_anchors) < min(prev.vae_anchors):
            raise ValueError(
                f"vae anchors must be non-decreasing across stages: stage "
                f"{prev.name} uses {prev.vae_anchors}, then {cur.name} uses "
                f"{cur.vae_anchors}")


def lr_at(step: int, stage: StageConfig, floor_frac: float = 0.1) -> float:
    if step < stage.warmup:
        return stage.lr * (step + 1) / stage.warmup
    span = max(1, stage.steps - stage.warmup)
    progress = min(1.0, (step - stage.warmup) / span)
    return stage.lr * (floor_frac + (1 - floor_frac) * 0.5 * (1 + math.cos(math.pi * progress)))


class Trainer:
    def __init__(self, run_cfg: RunConfig, vocab: Vocab,
                 samples: list[SyntheticSample], out_dir: str | Path):
        validate_stage_plan(run_cfg.train)
        if run_cfg.model.vocab_size == 0:
            run_cfg = dataclasses.replace(
                run_cfg, model=dataclasses.replace(run_cfg.model, vocab_size=vocab.size))
        elif run_cfg.model.vocab_size != vocab.size:
            raise ValueError(f"config vocab_size {run_cfg.model.vocab_size} != "
                             f"actual vocab size {vocab.size}")
        self.cfg = run_cfg
        self.vocab = vocab
        self.samples = samples
        self.layout = LayoutConfig(vit_grid=run_cfg.vit.grid)
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(run_cfg)

        torch.manual_seed(run_cfg.train.seed)  # model init
        self.model = MultimodalModel(run_cfg.model, run_cfg.vit)
        self.gen = torch.Generator().manual_seed(run_cfg.train.seed + 1)
        self.global_step = 0
        self._metrics_path = self.out_dir / "metrics.jsonl"

    # ------------------------------------------------------------------
    def _pool(self, stage: StageConfig) -> list[SyntheticSample]:
        tasks = set(STAGE_TASKS[stage.name])
        pool = [s for s in self.samples
                if s.task in tasks and (s.shape is None
                                        or s.shape.size_anchor in stage.vae_anchors)]
        if not pool:
            raise ValueError(f"no samples available for stage {stage.name} "
                             f"(tasks {sorted(t.value for t in tasks)}, "
                             f"anchors {stage.vae_anchors})")
        return pool

    def _draw_batch(self, pool: list[SyntheticSample], stage: StageConfig):
        idx = torch.randint(len(pool), (stage.batch_size,), generator=self.gen)
        seqs = []
        for i in idx.tolist():
            s = pool[i]
            if s.task is Task.T2I and stage.caption_dropout > 0:
                if float(torch.rand((), generator=self.gen)) < stage.caption_dropout:
                    s = dataclasses.replace(s, caption="")
            seqs.append(build_sequence(s, s.task, self.vocab, self.layout))
        return seqs

    def _make_optimizer(self, stage: StageConfig) -> torch.optim.AdamW:
        trainable = set(trainable_parameter_names(self.model, stage.name))
        params = []
        for name, p in self.model.named_parameters():
            p.requires_grad_(name in trainable)
            if name in trainable:
                params.append(p)
        return torch.optim.AdamW(params, lr=stage.lr,
                                 weight_decay=self.cfg.train.weight_decay)

    def _log(self, record: dict) -> None:
        with open(self._metrics_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")

    def _save(self, tag: str, optimizer, stage_index: int, stage_step: int) -> Path:
        path = save_checkpoint(
            self.out_dir / tag, self.model, optimizer, self.global_step, self.hash,
            generator=self.gen,
            extra={"stage_index": stage_index, "stage_step": stage_step,
                   "global_step": self.global_step,
                   "stage_name": self.cfg.train.stages[stage_index].name})
        (path / "config.yaml").write_text(yaml.safe_dump(to_dict(self.cfg)))
        self.vocab.save_manifest(path / "vocab.tsv")
        return path

    # ------------------------------------------------------------------
    def run(self, resume_from: str | Path | None = None) -> Path:
        start_stage, start_step = 0, 0
        resume_dir = None
        if resume_from is not None:
            resume_dir = Path(resume_from)
            manifest = load_checkpoint(resume_dir, self.model, None, self.gen,
                                       expect_hash=self.hash)
            start_stage = manifest["extra"]["stage_index"]
            start_step = manifest["extra"]["stage_step"]
            self.global_step = manifest["extra"]["global_step"]

        stages = self.cfg.train.stages
        optimizer = None
        for si, stage in enumerate(stages):
            if si < start_stage:
                continue
            first_step = start_step if si == start_stage else 0
            if first_step >= stage.steps:
                continue
            optimizer = self._make_optimizer(stage)
            if resume_dir is not None and si == start_stage:
                # mid-stage resume: restore the optimizer moments as well
                load_checkpoint(resume_dir, self.model, optimizer, self.gen,
                                expect_hash=self.hash)
                resume_dir = None
            pool = self._pool(stage)

            for step in range(first_step, stage.steps):
                lr = lr_at(step, stage)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                seqs = self._draw_batch(pool, stage)
                batch = assemble_batch(seqs, self.vocab, self.cfg.model, self.cfg.codec,
                                       self.cfg.vit, "training", generator=self.gen)
                losses = self.model.loss(batch)
                optimizer.zero_grad(set_to_none=True)
                losses["total"].backward()
                optimizer.step()
                self.global_step += 1

                last = step == stage.steps - 1
                if last or step % max(1, self.cfg.train.log_every) == 0:
                    self._log({"global_step": self.global_step, "stage": stage.name,
                               "stage_step": step + 1, "lr": lr,
                               **{k: float(v.detach()) for k, v in losses.items()}})
                if self.cfg.train.ckpt_every and (step + 1) % self.cfg.train.ckpt_every == 0 \
                        and not last:
                    self._save(f"step_{self.global_step:06d}", optimizer, si, step + 1)

            self._save(f"stage_{stage.name}", optimizer, si, stage.steps)
        if optimizer is None:  # resumed past the end of the plan
            optimizer = self._make_optimizer(stages[-1])
        final = self._save("final", optimizer, len(stages) - 1, stages[-1].steps)
        return final


def load_for_inference(ckpt_dir: str | Path) -> tuple[RunConfig, Vocab, MultimodalModel]:
    """Rebuild the model and vocab from a self-contained checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    run_cfg = from_dict(yaml.safe_load((ckpt_dir / "config.yaml").read_text()))
    vocab = Vocab.load_manifest(ckpt_dir / "vocab.tsv")
    model = MultimodalModel(run_cfg.model, run_cfg.vit)
    load_checkpoint(ckpt_dir, model, expect_hash=config_hash(run_cfg))
    model.eval()
    return run_cfg, vocab, model
