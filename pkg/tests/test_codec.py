import numpy as np
import pytest
import torch

from tinymm.codec import (LatentBlock, LatentCodecConfig, VitConfig, _basis,
                          decode, denormalize_latents, encode, latent_shift,
                          normalize_latents, resize_nearest, vit_features)


def random_image(rng, hpix, wpix):
    return rng.random((hpix, wpix, 3))


# ---------------------------------------------------------------------------
# latent codec

def test_complete_basis_round_trips_exactly():
    # c = 3*f^2 makes the projection a complete orthonormal basis, so
    # decode(encode(x)) must reproduce x up to float error.
    cfg = LatentCodecConfig(downsample=4, channels=48)
    rng = np.random.default_rng(0)
    img = random_image(rng, 32, 24)
    out = decode(encode(img, cfg), cfg)
    assert np.allclose(out, img, atol=1e-10)


def test_token_count_32px_f4():
    cfg = LatentCodecConfig(downsample=4, channels=8)
    block = encode(np.zeros((32, 32, 3)), cfg)
    assert block.grid == (8, 8)
    assert block.values.shape == (64, 8)


def test_encode_zero_image_gives_zero_latents():
    cfg = LatentCodecConfig(downsample=4, channels=8)
    block = encode(np.zeros((16, 16, 3)), cfg)
    assert np.allclose(block.values, 0.0)


def test_encode_is_linear():
    cfg = LatentCodecConfig(downsample=2, channels=6)
    rng = np.random.default_rng(1)
    a, b = random_image(rng, 8, 8), random_image(rng, 8, 8)
    za = encode(a, cfg).values
    zb = encode(b, cfg).values
    zab = encode(2.0 * a + 3.0 * b, cfg).values
    assert np.allclose(zab, 2.0 * za + 3.0 * zb, atol=1e-12)


def test_basis_rows_are_orthonormal():
    for f, c in [(2, 6), (4, 8), (4, 48), (8, 16)]:
        basis = _basis(f, c, seed=0)
        assert basis.shape == (c, 3 * f * f)
        gram = basis @ basis.T
        assert np.allclose(gram, np.eye(c), atol=1e-10)


def test_constant_color_exact_round_trip():
    # the first three basis rows are the constant R/G/B directions, so any
    # per-patch-constant color is reconstructed exactly even at low c
    cfg = LatentCodecConfig(downsample=4, channels=8)
    img = np.zeros((16, 16, 3))
    img[:, :, 0] = 0.9
    img[:, :, 1] = 0.2
    img[:, :, 2] = 0.55
    out = decode(encode(img, cfg), cfg)
    assert np.allclose(out, img, atol=1e-12)


def test_decode_projects_onto_basis():
    # encode-decode is an orthogonal projection: applying it twice equals once
    cfg = LatentCodecConfig(downsample=4, channels=8)
    rng = np.random.default_rng(2)
    img = random_image(rng, 32, 32)
    once = decode(encode(img, cfg), cfg)
    twice = decode(encode(once, cfg), cfg)
    assert np.allclose(once, twice, atol=1e-12)


def test_normalize_denormalize_inverse():
    cfg = LatentCodecConfig(downsample=4, channels=8)
    rng = np.random.default_rng(3)
    z = rng.standard_normal((10, 8))
    assert np.allclose(denormalize_latents(normalize_latents(z, cfg), cfg), z,
                       atol=1e-12)


def test_background_normalizes_to_zero():
    cfg = LatentCodecConfig(downsample=4, channels=8, background=0.8)
    img = np.full((16, 16, 3), 0.8)
    z = normalize_latents(encode(img, cfg).values, cfg)
    assert np.allclose(z, 0.0, atol=1e-12)
    assert np.allclose(latent_shift(cfg), encode(img, cfg).values[0], atol=1e-12)


def test_latent_block_validation():
    with pytest.raises(ValueError, match="rows"):
        LatentBlock((2, 2), np.zeros((3, 8)))
    with pytest.raises(ValueError, match="timestep"):
        LatentBlock((1, 1), np.zeros((1, 8)), timestep=1.5)
    with pytest.raises(ValueError, match="non-finite"):
        LatentBlock((1, 1), np.full((1, 8), np.nan))


def test_config_validation():
    with pytest.raises(ValueError, match="downsample"):
        LatentCodecConfig(downsample=0)
    with pytest.raises(ValueError, match="channels"):
        LatentCodecConfig(downsample=2, channels=13)  # > 3*f^2 = 12
    with pytest.raises(ValueError, match="channels"):
        LatentCodecConfig(downsample=2, channels=0)


def test_encode_shape_errors():
    cfg = LatentCodecConfig(downsample=4, channels=8)
    with pytest.raises(ValueError, match="HxWx3"):
        encode(np.zeros((16, 16)), cfg)
    with pytest.raises(ValueError, match="multiple"):
        encode(np.zeros((18, 16, 3)), cfg)


def test_decode_channel_mismatch():
    cfg = LatentCodecConfig(downsample=4, channels=8)
    with pytest.raises(ValueError, match="channels"):
        decode(LatentBlock((1, 1), np.zeros((1, 4))), cfg)


def test_round_trip_error_small_on_smooth_images():
    # low-c codec keeps per-patch means; a patchwise-constant image survives
    cfg = LatentCodecConfig(downsample=4, channels=8)
    rng = np.random.default_rng(4)
    coarse = rng.random((8, 8, 3))
    img = np.repeat(np.repeat(coarse, 4, axis=0), 4, axis=1)
    out = decode(encode(img, cfg), cfg)
    assert np.allclose(out, img, atol=1e-10)


# ---------------------------------------------------------------------------
# nearest-neighbor resize

def test_resize_nearest_identity_and_downscale():
    rng = np.random.default_rng(5)
    img = random_image(rng, 8, 8)
    assert np.array_equal(resize_nearest(img, 8), img)
    half = resize_nearest(img, 4)
    assert half.shape == (4, 4, 3)
    assert np.array_equal(half, img[::2, ::2])


def test_resize_nearest_upscale_repeats_pixels():
    img = np.arange(12, dtype=float).reshape(2, 2, 3)
    up = resize_nearest(img, 4)
    assert up.shape == (4, 4, 3)
    assert np.array_equal(up, np.repeat(np.repeat(img, 2, axis=0), 2, axis=1))


def test_resize_nearest_non_square_source():
    rng = np.random.default_rng(6)
    img = random_image(rng, 6, 12)
    out = resize_nearest(img, 4)
    assert out.shape == (4, 4, 3)
    # sampled values must come from the source pixel lattice
    rows = (np.arange(4) * 6) // 4
    cols = (np.arange(4) * 12) // 4
    assert np.array_equal(out, img[rows][:, cols])


# ---------------------------------------------------------------------------
# vision stand-in

def test_vit_features_token_count_and_determinism():
    cfg = VitConfig(anchor=32, patch=8, dim=64)
    assert cfg.grid == (4, 4) and cfg.tokens == 16
    rng = np.random.default_rng(7)
    img = random_image(rng, 32, 32)
    f1 = vit_features(img, cfg)
    f2 = vit_features(img.copy(), cfg)
    assert f1.shape == (16, 64)
    assert np.array_equal(f1, f2)


def test_vit_features_distinguish_images():
    cfg = VitConfig(anchor=32, patch=8, dim=64)
    rng = np.random.default_rng(8)
    a = vit_features(random_image(rng, 32, 32), cfg)
    b = vit_features(random_image(rng, 32, 32), cfg)
    assert not np.allclose(a, b)


def test_vit_features_resize_to_anchor():
    # a non-anchor-sized input goes through nearest resize first
    cfg = VitConfig(anchor=32, patch=8, dim=64)
    rng = np.random.default_rng(9)
    img = random_image(rng, 48, 24)
    feats = vit_features(img, cfg)
    ref = vit_features(resize_nearest(img, 32), cfg)
    assert np.array_equal(feats, ref)


def test_vit_standin_input_validation():
    from tinymm.codec import VitStandIn
    vit = VitStandIn(VitConfig(anchor=32, patch=8, dim=64))
    with pytest.raises(ValueError, match="expected"):
        vit(torch.zeros(1, 16, 16, 3))


def test_vit_standin_linear_in_patches():
    # no bias: zero image maps to zero features
    from tinymm.codec import VitStandIn
    vit = VitStandIn(VitConfig(anchor=32, patch=8, dim=64))
    with torch.no_grad():
        out = vit(torch.zeros(2, 32, 32, 3))
    assert torch.allclose(out, torch.zeros(2, 16, 64))
