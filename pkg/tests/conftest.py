import numpy as np
import pytest
import torch

from tinymm.codec import LatentCodecConfig, VitConfig
from tinymm.model import ModelConfig, MultimodalModel
from tinymm.moe import MoEConfig
from tinymm.seqlayout import make_vocab
from tinymm.synth import SynthSpec, caption_words


@pytest.fixture(scope="session")
def synth_spec():
    return SynthSpec()


@pytest.fixture(scope="session")
def vocab(synth_spec):
    return make_vocab(caption_words(synth_spec), size_anchors=(32,), num_ratios=33)


@pytest.fixture(scope="session")
def codec_cfg():
    return LatentCodecConfig()  # f=4, c=8


@pytest.fixture(scope="session")
def vit_cfg():
    return VitConfig()  # anchor 32, patch 8, dim 64


def small_model_config(vocab, codec_cfg, vit_cfg, precision="f32"):
    return ModelConfig(vocab_size=vocab.size, layers=2, d_model=64, heads=2, head_dim=32,
                       moe=MoEConfig(num_experts=4, top_k=2, expert_hidden=64,
                                     shared_hidden=64),
                       latent_channels=codec_cfg.channels, vit_dim=vit_cfg.dim,
                       precision=precision)


@pytest.fixture()
def small_model(vocab, codec_cfg, vit_cfg):
    cfg = small_model_config(vocab, codec_cfg, vit_cfg)
    torch.manual_seed(0)
    return MultimodalModel(cfg, vit_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
