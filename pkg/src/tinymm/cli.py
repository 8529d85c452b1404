"""Command-line interface.

Subcommands: gen-data, train, sample, analyze, inspect-mask, inspect-positions.
Layout strings for the inspect commands look like
``text:5,condvae:2x2,condvit:4x4,text:3,gen:4x6``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import analyze as analyze_mod
from . import attnmask, rope2d
from .config import RunConfig, apply_overrides, load_yaml
from .sampling import Sampler, SampleRequest
from .seqlayout import (Segment, Task, cond_vae_segment, cond_vit_segment,
                        gen_segment, make_vocab, text_segment)
from .synth import SynthSpec, caption_words, gen_synthetic, load_dataset, \
    make_eval_prompts, save_dataset
from .train import Trainer, load_for_inference


def parse_layout(spec: str) -> list[Segment]:
    segments: list[Segment] = []
    image_id = 0
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        kind, _, arg = part.partition(":")
        if kind == "text":
            segments.append(text_segment(int(arg)))
            continue
        try:
            h, w = (int(x) for x in arg.split("x"))
        except ValueError:
            raise ValueError(f"image layout entry {part!r} needs HxW") from None
        if kind == "gen":
            segments.append(gen_segment(h, w, image_id))
        elif kind == "condvae":
            segments.append(cond_vae_segment(h, w, image_id))
        elif kind == "condvit":
            segments.append(cond_vit_segment(h, w, image_id))
        else:
            raise ValueError(f"unknown layout kind {kind!r}")
        image_id += 1
    if not segments:
        raise ValueError("empty layout")
    return segments


def _load_run_config(args) -> RunConfig:
    cfg = load_yaml(args.config) if args.config else RunConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def cmd_gen_data(args) -> int:
    spec = SynthSpec(size_anchor=args.anchor, downsample=args.downsample)
    rng = np.random.default_rng(args.seed)
    mix = {Task.T2I: 0.45, Task.LM: 0.10, Task.MMU: 0.15,
           Task.INTL: 0.15, Task.COT_T2TI: 0.15}
    samples = []
    for task, frac in mix.items():
        for _ in range(max(1, round(args.num * frac))):
            samples.append(gen_synthetic(spec, rng, task))
    out = save_dataset(samples, args.out)
    vocab = make_vocab(caption_words(spec), size_anchors=(args.anchor,),
                       num_ratios=spec.num_ratios)
    vocab.save_manifest(out / "vocab.tsv")
    with open(out / "eval_prompts.jsonl", "w") as fh:
        for item in make_eval_prompts(spec, args.num_eval, rng):
            fh.write(json.dumps(item) + "\n")
    print(f"wrote {len(samples)} samples, vocab of {vocab.size} tokens, "
          f"{args.num_eval} eval prompts to {out}")
    return 0


def cmd_train(args) -> int:
    from .seqlayout import Vocab
    cfg = _load_run_config(args)
    data_dir = Path(args.data)
    samples = load_dataset(data_dir)
    vocab = Vocab.load_manifest(data_dir / "vocab.tsv")
    trainer = Trainer(cfg, vocab, samples, args.out)
    final = trainer.run(resume_from=args.resume)
    print(f"training finished at step {trainer.global_step}; final checkpoint: {final}")
    return 0


def cmd_sample(args) -> int:
    run_cfg, vocab, model = load_for_inference(args.ckpt)
    sampler = Sampler(model, vocab, run_cfg.codec, run_cfg.vit)
    request = SampleRequest(prompt=args.prompt, steps=args.steps,
                            guidance=args.guidance, seed=args.seed,
                            size_anchor=args.size, ratio_index=args.ratio,
                            enable_cot=args.cot)
    result = sampler.sample(request)
    img = (np.clip(result.image, 0, 1) * 255).round().astype(np.uint8)
    Image.fromarray(img).save(args.out)
    print(f"tokens: {' '.join(result.transcript)}")
    if result.reasoning:
        print(f"reasoning: {result.reasoning}")
    print(f"image {img.shape[0]}x{img.shape[1]} (latent grid "
          f"{result.grid[0]}x{result.grid[1]}) -> {args.out}")
    return 0


def cmd_analyze(args) -> int:
    run_cfg, vocab, model = load_for_inference(args.ckpt)
    sampler = Sampler(model, vocab, run_cfg.codec, run_cfg.vit)
    prompts = []
    for line in Path(args.prompts).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        prompts.append(json.loads(line)["prompt"] if line.startswith("{") else line)
    report = analyze_mod.analyze_experts(sampler, prompts, args.out,
                                         steps=args.steps, guidance=args.guidance,
                                         seed=args.seed, size_anchor=args.size,
                                         ratio_index=args.ratio)
    kl = report["kl"]
    print(f"analyzed {len(prompts)} prompts over {len(kl)} layers")
    print(f"KL by depth: {np.array2string(kl, precision=4)}")
    for name, path in report["paths"].items():
        print(f"  {name}: {path}")
    return 0


def cmd_inspect_mask(args) -> int:
    segments = parse_layout(args.layout)
    mask = attnmask.build_mask(segments)
    note = attnmask.validate_inference_layout(segments)
    for i, seg in enumerate(segments):
        grid = f" grid={seg.grid[0]}x{seg.grid[1]}" if seg.grid else ""
        print(f"seg {i}: {seg.kind.name} tokens={seg.token_count}{grid}")
    print(mask.dump())
    if note is not None:
        print(f"note: not a valid inference layout: {note}")
    return 0


def cmd_inspect_positions(args) -> int:
    segments = parse_layout(args.layout)
    vit_grid = tuple(int(x) for x in args.vit_grid.split("x"))
    positions = rope2d.assign_positions(segments, args.mode, args.head_dim,
                                        vit_grid=vit_grid)
    print(positions.dump_csv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tinymm",
                                description="toy native-multimodal model workbench")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic shapes dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--num", type=int, default=2048)
    g.add_argument("--num-eval", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--anchor", type=int, default=32)
    g.add_argument("--downsample", type=int, default=4)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="run the staged trainer")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None, help="run-config YAML")
    t.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                   help="override a config field, e.g. model.d_model=192")
    t.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="generate an image from a prompt")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--prompt", required=True)
    s.add_argument("--out", default="sample.png")
    s.add_argument("--steps", type=int, default=32)
    s.add_argument("--guidance", type=float, default=3.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=None, help="force this size anchor")
    s.add_argument("--ratio", type=int, default=None, help="force this ratio-token index")
    s.add_argument("--cot", action="store_true", help="decode reasoning before the image")
    s.set_defaults(fn=cmd_sample)

    a = sub.add_parser("analyze", help="expert-routing analytics over prompts")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--prompts", required=True, help="text or JSONL file, one prompt per line")
    a.add_argument("--out", required=True)
    a.add_argument("--steps", type=int, default=12)
    a.add_argument("--guidance", type=float, default=3.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--size", type=int, default=None, help="force this size anchor")
    a.add_argument("--ratio", type=int, default=None, help="force this ratio-token index")
    a.set_defaults(fn=cmd_analyze)

    m = sub.add_parser("inspect-mask", help="print the attention mask for a layout")
    m.add_argument("--layout", required=True)
    m.set_defaults(fn=cmd_inspect_mask)

    q = sub.add_parser("inspect-positions", help="print rotary positions for a layout")
    q.add_argument("--layout", required=True)
    q.add_argument("--mode", choices=("training", "inference"), default="training")
    q.add_argument("--head-dim", type=int, default=8)
    q.add_argument("--vit-grid", default="4x4")
    q.set_defaults(fn=cmd_inspect_positions)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
