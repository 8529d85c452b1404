#!/usr/bin/env python3
"""Score a trained checkpoint on held-out prompts.

Reports color adherence (dominant color of the decoded image vs the prompt)
and orientation adherence (latent-grid aspect vs the vertical/horizontal cue).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tinymm.analyze import evaluate_t2i  # noqa: E402
from tinymm.sampling import Sampler  # noqa: E402
from tinymm.train import load_for_inference  # noqa: E402


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ckpt", required=True, help="checkpoint directory")
    ap.add_argument("--prompts", required=True,
                    help="eval_prompts.jsonl written by gen-data")
    ap.add_argument("--limit", type=int, default=None, help="score only the first N")
    ap.add_argument("--steps", type=int, default=8)
    ap.add_argument("--guidance", type=float, default=3.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    run_cfg, vocab, model = load_for_inference(args.ckpt)
    sampler = Sampler(model, vocab, run_cfg.codec, run_cfg.vit)
    prompts = [json.loads(line) for line in
               Path(args.prompts).read_text().splitlines()][: args.limit]
    report = evaluate_t2i(sampler, prompts, steps=args.steps,
                          guidance=args.guidance, seed=args.seed)
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
