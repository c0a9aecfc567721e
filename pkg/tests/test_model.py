import numpy as np
import pytest
import torch

from caplab.errors import InvalidConfigError, InvalidInputError
from caplab.model import (
    BGViTBlock,
    BrightnessGuidedUNet,
    ModelConfig,
    bgsa,
    build_model,
    param_count,
    pool_mask_to_tokens,
)
from oracles import masked_attention_oracle, pooled_mask_oracle


# --- config ---

def test_config_defaults_valid():
    cfg = ModelConfig()
    cfg.validate()
    assert cfg.downsample_factor == 8
    assert cfg.bottleneck_channels == cfg.base_channels * 8


def test_config_rejects_bad_values():
    with pytest.raises(InvalidConfigError):
        ModelConfig(base_channels=0).validate()
    with pytest.raises(InvalidConfigError):
        ModelConfig(num_downsamples=0).validate()
    with pytest.raises(InvalidConfigError):
        ModelConfig(mask_sigma=1.0).validate()
    with pytest.raises(InvalidConfigError):
        ModelConfig(mask_tau=2.0).validate()
    with pytest.raises(InvalidConfigError):
        # bottleneck channels not divisible by heads
        ModelConfig(base_channels=3, num_heads=7).validate()


def test_config_roundtrips_through_dict():
    cfg = ModelConfig(base_channels=4, num_heads=2, use_bgsa=False)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# --- mask pooling ---

def test_pool_mask_matches_oracle(rng):
    b = rng.random((24, 16))
    got = pool_mask_to_tokens(b, 8, 0.5)
    want = pooled_mask_oracle(b, 8, 0.5)
    assert np.array_equal(got, want)


def test_pool_mask_dark_cell_with_bright_pixel():
    """A cell dark on average stays masked despite isolated bright pixels."""
    b = np.zeros((8, 8))
    b[0, 0] = 1.0  # cell mean 1/64, below tau 0.5
    assert pool_mask_to_tokens(b, 8, 0.5)[0] == 0.0


def test_pool_mask_shape_mismatch():
    with pytest.raises(Exception):
        pool_mask_to_tokens(np.zeros((10, 10)), 8, 0.5)


# --- bgsa ---

def test_bgsa_matches_renormalized_oracle(rng):
    for _ in range(20):
        n = int(rng.integers(2, 12))
        d = int(rng.integers(2, 16))
        q = rng.standard_normal((n, d))
        k = rng.standard_normal((n, d))
        v = rng.standard_normal((n, d))
        mask = (rng.random(n) > 0.4).astype(np.float64)
        if mask.sum() == 0:
            mask[0] = 1.0
        got = bgsa(q, k, v, mask=mask)
        want = masked_attention_oracle(q, k, v, mask)
        assert np.abs(np.asarray(got) - want).max() < 1e-6


def test_bgsa_multihead_matches_oracle(rng):
    q = rng.standard_normal((2, 8, 12))
    k = rng.standard_normal((2, 8, 12))
    v = rng.standard_normal((2, 8, 12))
    mask = np.ones((2, 8))
    mask[0, :3] = 0.0
    got = bgsa(q, k, v, mask=mask, num_heads=4)
    want = masked_attention_oracle(q, k, v, mask, num_heads=4)
    assert np.abs(np.asarray(got) - want).max() < 1e-6


def test_bgsa_masked_weight_exactly_zero(rng):
    q = rng.standard_normal((6, 8))
    k = rng.standard_normal((6, 8))
    v = rng.standard_normal((6, 8))
    mask = np.array([1, 1, 0, 1, 0, 1], dtype=np.float64)
    _, w = bgsa(q, k, v, mask=mask, return_weights=True)
    w = np.asarray(w)
    assert np.all(w[..., 2] == 0.0)
    assert np.all(w[..., 4] == 0.0)
    rows = w.sum(axis=-1)
    assert np.abs(rows - 1.0).max() < 1e-6


def test_bgsa_all_ones_bitwise_standard(rng):
    q = torch.tensor(rng.standard_normal((5, 8)))
    k = torch.tensor(rng.standard_normal((5, 8)))
    v = torch.tensor(rng.standard_normal((5, 8)))
    got = bgsa(q, k, v, mask=np.ones(5))
    logits = (q @ k.T) / (8 ** 0.5)
    want = torch.softmax(logits, dim=-1) @ v
    assert torch.equal(torch.as_tensor(got), want)


def test_bgsa_mask_none_equals_all_ones(rng):
    q = rng.standard_normal((2, 6, 8))
    k = rng.standard_normal((2, 6, 8))
    v = rng.standard_normal((2, 6, 8))
    a = bgsa(q, k, v, mask=None, num_heads=2)
    b = bgsa(q, k, v, mask=np.ones((2, 6)), num_heads=2)
    assert np.array_equal(np.asarray(a), np.asarray(b))


def test_bgsa_masked_tokens_invisible(rng):
    """Keys and values of masked columns cannot influence any output."""
    q = rng.standard_normal((7, 8))
    k = rng.standard_normal((7, 8))
    v = rng.standard_normal((7, 8))
    mask = np.array([1, 0, 1, 1, 0, 1, 1], dtype=np.float64)
    base = np.asarray(bgsa(q, k, v, mask=mask))
    k2, v2 = k.copy(), v.copy()
    k2[1] += 1e6
    v2[1] -= 1e6
    k2[4] *= -3.0
    v2[4] += 42.0
    pert = np.asarray(bgsa(q, k2, v2, mask=mask))
    assert np.array_equal(base, pert)


def test_bgsa_all_zero_mask_degenerates_to_unmasked(rng):
    q = rng.standard_normal((4, 8))
    k = rng.standard_normal((4, 8))
    v = rng.standard_normal((4, 8))
    a = np.asarray(bgsa(q, k, v, mask=np.zeros(4)))
    b = np.asarray(bgsa(q, k, v, mask=None))
    assert np.array_equal(a, b)


def test_bgsa_batch_permutation_equivariant(rng):
    q = rng.standard_normal((3, 5, 8))
    k = rng.standard_normal((3, 5, 8))
    v = rng.standard_normal((3, 5, 8))
    mask = (rng.random((3, 5)) > 0.3).astype(np.float64)
    mask[:, 0] = 1.0
    out = np.asarray(bgsa(q, k, v, mask=mask))
    perm = [2, 0, 1]
    out_p = np.asarray(bgsa(q[perm], k[perm], v[perm], mask=mask[perm]))
    assert np.array_equal(out[perm], out_p)


def test_bgsa_rejects_nonbinary_mask(rng):
    q = rng.standard_normal((4, 8))
    with pytest.raises(InvalidInputError):
        bgsa(q, q, q, mask=np.full(4, 0.5))


# --- transformer block ---

def test_block_identity_with_zeroed_projections(rng):
    torch.manual_seed(0)
    blk = BGViTBlock(dim=16, num_heads=4, mlp_ratio=2.0)
    with torch.no_grad():
        blk.attn.proj.weight.zero_()
        blk.attn.proj.bias.zero_()
        blk.mlp[-1].weight.zero_()
        blk.mlp[-1].bias.zero_()
    x = torch.randn(2, 9, 16)
    out = blk(x, None)
    assert torch.equal(out, x)


# --- full network ---

def test_forward_preserves_shapes(rng):
    cfg = ModelConfig(base_channels=4, num_bgvit_blocks=1)
    model = build_model(cfg, seed=0)
    for h, w in ((8, 8), (16, 24), (37, 51), (40, 33)):
        x = torch.rand(1, 3, h, w)
        with torch.no_grad():
            y = model(x)
        assert y.shape == (1, 3, h, w)


def test_forward_unbatched(rng):
    model = build_model(ModelConfig(base_channels=4, num_bgvit_blocks=1), seed=0)
    x = torch.rand(3, 16, 16)
    with torch.no_grad():
        y = model(x)
    assert y.shape == (3, 16, 16)


def test_forward_too_small_raises():
    model = build_model(ModelConfig(base_channels=4, num_bgvit_blocks=1), seed=0)
    with pytest.raises(InvalidInputError):
        model(torch.rand(1, 3, 4, 4))


def test_all_black_input_runs_degenerate_mask():
    cfg = ModelConfig(base_channels=4, num_bgvit_blocks=1)
    model = build_model(cfg, seed=0)
    x = torch.zeros(2, 3, 16, 16)
    mask = model._token_mask(x)
    assert torch.all(mask == 1.0)
    with torch.no_grad():
        y = model(x)
    assert torch.isfinite(y).all()


def test_token_mask_flags_dark_cells():
    cfg = ModelConfig(base_channels=4, num_bgvit_blocks=1)
    model = build_model(cfg, seed=0)
    x = torch.rand(1, 3, 16, 16) * 0.5 + 0.5
    x[:, :, :8, :8] = 0.0  # one token cell at factor 8
    mask = model._token_mask(x)
    assert mask.shape == (1, 4)
    assert mask[0, 0] == 0.0
    assert mask[0, 1:].min() == 1.0


def test_use_bgsa_off_identical_on_bright_input(rng):
    """With no dark cell the mask is all ones and the flag cannot matter."""
    bright = torch.rand(1, 3, 16, 16) * 0.6 + 0.4
    a = build_model(ModelConfig(base_channels=4, num_bgvit_blocks=1,
                                use_bgsa=True), seed=3)
    b = build_model(ModelConfig(base_channels=4, num_bgvit_blocks=1,
                                use_bgsa=False), seed=3)
    with torch.no_grad():
        ya = a(bright)
        yb = b(bright)
    assert torch.equal(ya, yb)


def test_bgsa_flag_changes_dark_input(rng):
    dark = torch.rand(1, 3, 16, 16)
    dark[:, :, :8, :] = 0.0
    a = build_model(ModelConfig(base_channels=4, num_bgvit_blocks=1,
                                use_bgsa=True), seed=3)
    b = build_model(ModelConfig(base_channels=4, num_bgvit_blocks=1,
                                use_bgsa=False), seed=3)
    with torch.no_grad():
        assert not torch.equal(a(dark), b(dark))


def test_zero_head_makes_zero_output(rng):
    model = build_model(ModelConfig(base_channels=4, num_bgvit_blocks=1), seed=0)
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
        y = model(torch.rand(1, 3, 16, 16))
    assert torch.equal(y, torch.zeros_like(y))


def test_pos_embed_variant_runs():
    cfg = ModelConfig(base_channels=4, num_bgvit_blocks=1, use_pos_embed=True)
    model = build_model(cfg, seed=0)
    with torch.no_grad():
        y = model(torch.rand(1, 3, 24, 24))
    assert y.shape == (1, 3, 24, 24)


def test_build_model_seed_deterministic():
    cfg = ModelConfig(base_channels=4, num_bgvit_blocks=1)
    a = build_model(cfg, seed=7)
    b = build_model(cfg, seed=7)
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb
        assert torch.equal(pa, pb)
    c = build_model(cfg, seed=8)
    assert any(not torch.equal(pa, pc)
               for pa, pc in zip(a.state_dict().values(), c.state_dict().values()))


def test_param_count_matches_torch():
    cfg = ModelConfig(base_channels=4, num_bgvit_blocks=1)
    model = build_model(cfg, seed=0)
    assert param_count(cfg) == sum(p.numel() for p in model.parameters())
    assert param_count(ModelConfig(base_channels=4)) < 50_000
