import numpy as np
import pytest

from tinymm.rope2d import (PositionGrid, apply_rope, assign_positions,
                           reference_rope_1d, rope_tables)
from tinymm.seqlayout import (cond_vae_segment, cond_vit_segment, gen_segment,
                              replace_gen_with_cond, text_segment)


def coords(grid: PositionGrid):
    return list(zip(grid.xs.tolist(), grid.ys.tolist()))


# ---------------------------------------------------------------------------
# position assignment

def test_text_only_positions_diagonal():
    g = assign_positions([text_segment(3)], "inference", head_dim=8)
    assert coords(g) == [(0, 0), (1, 1), (2, 2)]


def test_image_grid_positions():
    segs = [text_segment(3), cond_vae_segment(2, 2, 0), text_segment(1)]
    g = assign_positions(segs, "inference", head_dim=8)
    assert coords(g) == [(0, 0), (1, 1), (2, 2),
                         (3, 3), (3, 4), (4, 3), (4, 4),
                         (5, 5)]


def test_wide_image_advances_by_max():
    segs = [text_segment(1), cond_vae_segment(2, 3, 0), text_segment(1)]
    g = assign_positions(segs, "inference", head_dim=8)
    assert coords(g)[-1] == (4, 4)  # 1 + max(2, 3) = 4


def test_training_shift_matches_inference_positions():
    # training layout with a gen image; at inference the image re-enters as a
    # cond block (VAE half + vision half); tokens after it must line up exactly
    vit_grid = (4, 4)
    train = [text_segment(2), gen_segment(2, 2, 0), text_segment(3)]
    infer = replace_gen_with_cond(train, vit_grid)
    gt = assign_positions(train, "training", head_dim=8, vit_grid=vit_grid)
    gi = assign_positions(infer, "inference", head_dim=8)
    # the trailing text: last 3 positions of both layouts
    assert coords(gt)[-3:] == coords(gi)[-3:]
    # the VAE half of the cond block sits exactly on the gen tokens' positions
    assert coords(gt)[2:6] == coords(gi)[2:6]


def test_training_shift_multi_gen(rng):
    vit_grid = (4, 4)
    for _ in range(10):
        segs = []
        img = 0
        for _ in range(int(rng.integers(2, 5))):
            segs.append(text_segment(int(rng.integers(1, 4))))
            segs.append(gen_segment(int(rng.integers(1, 4)), int(rng.integers(1, 4)), img))
            img += 1
        segs.append(text_segment(2))
        gt = assign_positions(segs, "training", head_dim=8, vit_grid=vit_grid)
        gi = assign_positions(replace_gen_with_cond(segs, vit_grid), "inference",
                              head_dim=8)
        # walk both layouts and compare every shared (non-vit) token
        ti = 0
        ii = 0
        for seg in segs:
            if seg.kind.name == "GEN_IMAGE":
                n = seg.token_count
                assert coords(gt)[ti:ti + n] == coords(gi)[ii:ii + n]
                ti += n
                ii += n + vit_grid[0] * vit_grid[1]
            else:
                n = seg.token_count
                assert coords(gt)[ti:ti + n] == coords(gi)[ii:ii + n]
                ti += n
                ii += n
        assert ti == len(gt.xs) and ii == len(gi.xs)


def test_training_mode_requires_vit_grid():
    with pytest.raises(ValueError):
        assign_positions([gen_segment(1, 1, 0)], "training", head_dim=8)


def test_bad_mode_rejected():
    with pytest.raises(ValueError):
        assign_positions([text_segment(1)], "both", head_dim=8)


# ---------------------------------------------------------------------------
# tables

def test_origin_row_is_identity():
    g = assign_positions([text_segment(1)], "inference", head_dim=8)
    t = rope_tables(g)
    assert np.array_equal(t.cos[0], np.ones(8))
    assert np.array_equal(t.sin[0], np.zeros(8))


def test_text_rows_equal_reference_1d():
    g = assign_positions([text_segment(7)], "inference", head_dim=16)
    t = rope_tables(g)
    ref = reference_rope_1d(np.arange(7), head_dim=16, base=10000.0)
    assert np.array_equal(t.cos, ref.cos)
    assert np.array_equal(t.sin, ref.sin)


def test_random_text_layouts_match_reference(rng):
    for _ in range(30):
        segs = [text_segment(int(rng.integers(1, 9))) for _ in range(int(rng.integers(1, 5)))]
        n = sum(s.token_count for s in segs)
        g = assign_positions(segs, "training", head_dim=8, vit_grid=(2, 2))
        t = rope_tables(g)
        ref = reference_rope_1d(np.arange(n), head_dim=8, base=10000.0)
        assert np.array_equal(t.cos, ref.cos) and np.array_equal(t.sin, ref.sin)


def test_y_only_pairs_ignore_x():
    a = rope_tables(PositionGrid(np.array([5]), np.array([9]), head_dim=8))
    b = rope_tables(PositionGrid(np.array([17]), np.array([9]), head_dim=8))
    half = 4
    odd = [1, 3]
    for j in odd:
        assert a.cos[0, j] == b.cos[0, j]
        assert a.sin[0, half + j] == b.sin[0, half + j]
    assert not np.array_equal(a.cos[0], b.cos[0])  # even pairs do move


def test_unit_circle_invariant(rng):
    xs = rng.integers(0, 50, size=20)
    ys = rng.integers(0, 50, size=20)
    t = rope_tables(PositionGrid(xs, ys, head_dim=12))
    assert np.allclose(t.cos ** 2 + t.sin ** 2, 1.0, atol=1e-6)


def test_odd_head_dim_rejected():
    with pytest.raises(ValueError):
        PositionGrid(np.array([0]), np.array([0]), head_dim=7)


def test_dump_csv():
    g = assign_positions([text_segment(2)], "inference", head_dim=4)
    assert g.dump_csv().splitlines() == ["token,x,y", "0,0,0", "1,1,1"]


# ---------------------------------------------------------------------------
# application

def test_apply_rope_zero_angle_identity(rng):
    v = rng.normal(size=(3, 8))
    t = rope_tables(PositionGrid(np.zeros(3, dtype=int), np.zeros(3, dtype=int), head_dim=8))
    assert np.allclose(apply_rope(v, t), v)


def test_apply_rope_preserves_pair_norms(rng):
    v = rng.normal(size=(5, 8))
    g = assign_positions([text_segment(3), cond_vae_segment(1, 2, 0)], "inference",
                         head_dim=8)
    out = apply_rope(v, rope_tables(g))
    pairs_in = v.reshape(5, 4, 2)
    pairs_out = out.reshape(5, 4, 2)
    assert np.allclose(np.linalg.norm(pairs_in, axis=-1),
                       np.linalg.norm(pairs_out, axis=-1), rtol=1e-6)


def test_apply_rope_relative_property(rng):
    # for 1D (text) positions, q.k after rotation depends only on the offset
    head_dim = 8
    q = rng.normal(size=head_dim)
    k = rng.normal(size=head_dim)

    def dot(a, b):
        ta = rope_tables(PositionGrid(np.array([a]), np.array([a]), head_dim))
        tb = rope_tables(PositionGrid(np.array([b]), np.array([b]), head_dim))
        return float((apply_rope(q[None], ta) @ apply_rope(k[None], tb).T).item())

    assert dot(3, 7) == pytest.approx(dot(10, 14), rel=1e-9)
    assert dot(0, 4) == pytest.approx(dot(21, 25), rel=1e-9)


def test_apply_rope_shape_mismatch():
    t = rope_tables(PositionGrid(np.array([1]), np.array([1]), head_dim=8))
    with pytest.raises(ValueError):
        apply_rope(np.zeros((2, 8)), t)
    with pytest.raises(ValueError):
        apply_rope(np.zeros((1, 6)), t)
