"""Generalized causal attention masks.

Rules, applied per (query i, key j) with s(.) the segment of a token:
  (a) s(j) is a generated-image segment and s(j) != s(i)  -> blocked (the "hole")
  (b) s(i) == s(j) and the segment is any image kind       -> allowed (full block)
  (c) otherwise causal: allowed iff j <= i

`build_mask` materializes block-wise from segment-level intervals;
`oracle_mask` evaluates the rules literally per token pair and exists only to
check `build_mask` bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .seqlayout import Segment, SegmentKind, segment_offsets, total_tokens


@dataclass(frozen=True)
class AttentionMask:
    allowed: np.ndarray  # bool [n, n]; allowed[i, j] = query i may attend key j

    @property
    def n(self) -> int:
        return self.allowed.shape[0]

    def dump(self) -> str:
        """'0'/'1' text grid, one row per query, for golden-file tests."""
        return "\n".join("".join("1" if v else "0" for v in row) for row in self.allowed)

    @staticmethod
    def parse(text: str) -> "AttentionMask":
        rows = [[c == "1" for c in line] for line in text.strip().splitlines()]
        return AttentionMask(np.asarray(rows, dtype=bool))


class BlockRule(Enum):
    FULL = "full"
    EMPTY = "empty"
    CAUSAL = "causal"  # lower-triangular within the block, diagonal inclusive


def block_rules(segments: list[Segment]) -> list[list[BlockRule]]:
    """Segment-level mask structure: rules[qi][ki] describes the (qi, ki) block.

    This interval form is the scalable representation for long sequences; the
    dense matrix is only materialized on demand.
    """
    rules: list[list[BlockRule]] = []
    for qi, qseg in enumerate(segments):
        row = []
        for ki, kseg in enumerate(segments):
            if kseg.kind is SegmentKind.GEN_IMAGE and ki != qi:
                row.append(BlockRule.EMPTY)
            elif ki == qi:
                row.append(BlockRule.FULL if qseg.is_image else BlockRule.CAUSAL)
            elif ki < qi:
                row.append(BlockRule.FULL)
            else:
                row.append(BlockRule.EMPTY)
        rules.append(row)
    return rules


def build_mask(segments: list[Segment]) -> AttentionMask:
    n = total_tokens(segments)
    offs = segment_offsets(segments)
    allowed = np.zeros((n, n), dtype=bool)
    for qi, qrow in enumerate(block_rules(segments)):
        q0, q1 = offs[qi], offs[qi + 1]
        for ki, rule in enumerate(qrow):
            k0, k1 = offs[ki], offs[ki + 1]
            if rule is BlockRule.FULL:
                allowed[q0:q1, k0:k1] = True
            elif rule is BlockRule.CAUSAL:
                allowed[q0:q1, k0:k1] = np.tril(np.ones((q1 - q0, k1 - k0), dtype=bool))
    return AttentionMask(allowed)


def oracle_mask(segments: list[Segment]) -> AttentionMask:
    """Literal per-pair evaluation of rules (a)-(c); no block shortcuts."""
    n = total_tokens(segments)
    seg_of = []
    for idx, seg in enumerate(segments):
        seg_of.extend([idx] * seg.token_count)
    allowed = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            si, sj = segments[seg_of[i]], segments[seg_of[j]]
            if sj.kind is SegmentKind.GEN_IMAGE and seg_of[j] != seg_of[i]:
                allowed[i, j] = False
            elif seg_of[i] == seg_of[j] and si.is_image:
                allowed[i, j] = True
            else:
                allowed[i, j] = j <= i
    return AttentionMask(allowed)


def validate_inference_layout(segments: list[Segment]) -> str | None:
    """None when the layout is a legal inference sequence, else a description.

    Inference sequences carry at most one generated image and, when present,
    it must be the final segment.
    """
    gen_idx = [i for i, s in enumerate(segments) if s.kind is SegmentKind.GEN_IMAGE]
    if len(gen_idx) > 1:
        return f"{len(gen_idx)} generated-image segments at indices {gen_idx}; at most one allowed"
    if gen_idx and gen_idx[0] != len(segments) - 1:
        return (f"generated-image segment at index {gen_idx[0]} is not final "
                f"(layout has {len(segments)} segments)")
    return None
