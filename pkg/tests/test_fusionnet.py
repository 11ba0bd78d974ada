from dataclasses import replace

import numpy as np
import pytest
import torch

from filmfuse import fusionnet
from filmfuse.errors import ContractError, NumericFault
from filmfuse.fusionnet import (DESK_NET, TINY_NET, CrossAttentionLayer, NetConfig, RestormerBlock,
                                build_net, fuse_arrays, no_text_config, param_count, parity_gap)

from oracles import restormer_block_loop

SMALL = NetConfig(dim=16, heads=4, M=2, N=2, text_dim=32)


def rand(*shape, seed=0, dtype=torch.float32):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=dtype)


def randn(*shape, seed=0, dtype=torch.float32):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=dtype)


def test_default_config():
    cfg = NetConfig()
    assert (cfg.dim, cfg.heads, cfg.M, cfg.N) == (64, 8, 2, 3)
    assert cfg.use_text and cfg.encoder_restormer_blocks == 1


@pytest.mark.parametrize("kw", [dict(dim=10, heads=4), dict(M=0), dict(N=0)])
def test_config_invariants(kw):
    with pytest.raises(ContractError):
        NetConfig(**kw)


def test_config_dict_round_trip():
    assert NetConfig.from_dict(DESK_NET.to_dict()) == DESK_NET


# encoder

def test_encode_shape():
    net = build_net(NetConfig())
    with torch.no_grad():
        assert net.encode(rand(1, 1, 32, 32)).shape == (1, 64, 32, 32)


def test_encode_deterministic():
    net = build_net(SMALL)
    x = rand(1, 1, 16, 16)
    with torch.no_grad():
        assert torch.equal(net.encode(x), net.encode(x.clone()))


def test_encode_all_zero_params():
    net = build_net(SMALL)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
        assert torch.count_nonzero(net.encode(torch.zeros(1, 1, 16, 16))) == 0


# restormer block

def test_restormer_rows_and_shape():
    blk = RestormerBlock(16, 4, 20)
    x = randn(2, 16, 8, 8)
    attn, _ = blk.attn.attention(blk.norm1(x))
    assert attn.shape == (2, 4, 4, 4)
    assert torch.allclose(attn.sum(-1), torch.ones(2, 4, 4), atol=1e-6)
    assert blk(x).shape == x.shape


def test_restormer_matches_loop_oracle():
    torch.manual_seed(3)
    blk = RestormerBlock(2, 1, 2).double()
    with torch.no_grad():
        for p in blk.parameters():
            p.copy_(torch.randn_like(p) * 0.7)
    x = randn(1, 2, 2, 2, seed=5, dtype=torch.float64)
    params = {k: v.detach().numpy() for k, v in blk.state_dict().items()}
    expect = restormer_block_loop(params, x[0].numpy(), heads=1)
    with torch.no_grad():
        got = blk(x)[0].numpy()
    assert np.allclose(got, expect, rtol=0, atol=1e-12)


# cross attention

def _layer(seed=0, dim=16, heads=4, text_dim=32, gamma=None):
    torch.manual_seed(seed)
    layer = CrossAttentionLayer(dim, heads, text_dim, 24)
    if gamma is not None:
        with torch.no_grad():
            layer.gamma.fill_(gamma)
    return layer


@pytest.mark.parametrize("tokens", [1, 5, 70])
def test_cross_attention_shape_and_rows(tokens):
    layer = _layer(gamma=0.5)
    f = randn(2, 16, 8, 12)
    text = randn(2, tokens, 32, seed=1)
    attn = layer.attention(text, f)
    assert attn.shape == (2, 4, tokens, 96)
    assert torch.allclose(attn.sum(-1), torch.ones_like(attn.sum(-1)), atol=1e-6)
    assert layer(text, f).shape == f.shape


def test_zero_gate_is_feed_forward_only():
    layer = _layer()
    f = randn(1, 16, 8, 8)
    with torch.no_grad():
        assert torch.equal(layer(randn(1, 3, 32, seed=1), f), layer.ffn(f))


def test_uniform_text_matches_single_token():
    layer = _layer(gamma=1.0).double()
    f = randn(1, 16, 8, 8, dtype=torch.float64)
    tok = randn(1, 1, 32, seed=2, dtype=torch.float64)
    with torch.no_grad():
        attn = layer.attention(tok.expand(1, 2, 32), f)
        assert torch.equal(attn[:, :, 0], attn[:, :, 1])
        one = layer.summary(tok, f)
        two = layer.summary(tok.expand(1, 2, 32), f)
        # brute force: average of A V over both tokens
        _, _, v = layer._qkv(tok, f)
        a = layer.attention(tok.expand(1, 2, 32), f)
        heads, d, n = v.shape[1:]
        brute = torch.zeros(heads * d, dtype=torch.float64)
        for h in range(heads):
            for c in range(d):
                for t in range(2):
                    brute[h * d + c] += sum(a[0, h, t, i] * v[0, h, c, i] for i in range(n)) / 2
    assert torch.allclose(one, two, atol=1e-12)
    assert torch.allclose(two[0], brute, atol=1e-12)


def test_mask_ignores_padded_tokens():
    layer = _layer(gamma=1.0).double()
    f = randn(1, 16, 8, 8, dtype=torch.float64)
    text = randn(1, 4, 32, seed=2, dtype=torch.float64)
    padded = torch.cat([text, randn(1, 3, 32, seed=9, dtype=torch.float64)], 1)
    mask = torch.tensor([[1, 1, 1, 1, 0, 0, 0]])
    with torch.no_grad():
        assert torch.allclose(layer(text, f), layer(padded, f, mask), atol=1e-12)


def test_chunked_summary_matches_dense():
    layer = _layer(gamma=1.0).double()
    f = randn(1, 16, 8, 8, dtype=torch.float64)
    text = randn(1, 150, 32, seed=2, dtype=torch.float64)
    with torch.no_grad():
        _, _, v = layer._qkv(text, f)
        dense = torch.einsum("bhn,bhdn->bhd", layer.attention(text, f).mean(2), v).reshape(1, -1)
        assert torch.allclose(layer.summary(text, f), dense, atol=1e-12)


def test_text_dim_mismatch():
    with pytest.raises(ContractError):
        _layer()(randn(1, 3, 31), randn(1, 16, 8, 8))


# fusion and decoding

def test_fuse_visual_shape():
    net = build_net(NetConfig())
    with torch.no_grad():
        assert net.fuse_visual(randn(1, 64, 8, 8), randn(1, 64, 8, 8, seed=1)).shape == (1, 64, 8, 8)


def test_fuse_visual_identity_projection():
    net = build_net(SMALL)
    eye = torch.eye(16)[:, :, None, None]
    with torch.no_grad():
        net.fuse.weight.copy_(0.5 * torch.cat([eye, eye], 1))
        net.fuse.bias.zero_()
        f = randn(1, 16, 8, 8)
        assert torch.allclose(net.fuse_visual(f, f), f, atol=1e-7)


def test_fuse_visual_order_matters():
    net = build_net(SMALL, seed=1)
    a, b = randn(1, 16, 8, 8), randn(1, 16, 8, 8, seed=1)
    with torch.no_grad():
        assert not torch.allclose(net.fuse_visual(a, b), net.fuse_visual(b, a))


def test_fuse_visual_spatial_mismatch():
    net = build_net(SMALL)
    with pytest.raises(ContractError):
        net.fuse_visual(randn(1, 16, 8, 8), randn(1, 16, 8, 12))


def test_decode_range_and_zero_conv():
    net = build_net(SMALL)
    with torch.no_grad():
        out = net.decode(randn(1, 16, 8, 8) * 10)
        assert out.min() >= 0 and out.max() <= 1
        net.out.weight.zero_()
        net.out.bias.zero_()
        assert torch.equal(net.decode(randn(1, 16, 8, 8)), torch.full((1, 1, 8, 8), 0.5))


# forward

@pytest.mark.parametrize("hw", [(8, 8), (10, 13), (17, 9)])
def test_forward_keeps_size(hw):
    net = build_net(SMALL)
    with torch.no_grad():
        out = net(rand(1, 1, *hw), rand(1, 1, *hw, seed=1), randn(1, 5, 32))
    assert out.shape == (1, 1, *hw)
    assert out.min() >= 0 and out.max() <= 1


def test_forward_contracts():
    net = build_net(SMALL)
    with pytest.raises(ContractError):
        net(rand(1, 1, 8, 8), rand(1, 1, 8, 12), randn(1, 5, 32))
    with pytest.raises(ContractError):
        net(rand(1, 1, 8, 8), rand(1, 1, 8, 8))
    with pytest.raises(ContractError):
        net(rand(1, 1, 4, 8), rand(1, 1, 4, 8), randn(1, 5, 32))


def test_forward_deterministic_and_seeded():
    a, b, t = rand(1, 1, 12, 12), rand(1, 1, 12, 12, seed=1), randn(1, 4, 32)
    with torch.no_grad():
        o1 = build_net(SMALL, seed=4)(a, b, t)
        o2 = build_net(SMALL, seed=4)(a, b, t)
        o3 = build_net(SMALL, seed=5)(a, b, t)
    assert torch.equal(o1, o2)
    assert not torch.equal(o1, o3)


def test_zero_gate_text_no_op():
    net = build_net(SMALL)
    a, b = rand(1, 1, 16, 16), rand(1, 1, 16, 16, seed=1)
    with torch.no_grad():
        assert torch.equal(net(a, b, randn(1, 5, 32, seed=2)), net(a, b, randn(1, 11, 32, seed=3)))


def test_no_text_forward():
    net = build_net(no_text_config(SMALL))
    with torch.no_grad():
        assert net(rand(1, 1, 8, 8), rand(1, 1, 8, 8, seed=1)).shape == (1, 1, 8, 8)


def test_shared_weights():
    net = build_net(replace(SMALL, share_weights=True))
    assert net.enc1 is net.enc2 and net.guide1 is net.guide2
    assert param_count(net) < param_count(SMALL)


# parameter accounting

def test_param_count_by_hand():
    # dim 8, heads 2, hidden int(8 * 2.66) = 21, text dim 16
    norm = 2 * 8
    chan_attn = 2 + 8 * 24 + 24 * 9 + 8 * 8
    ffn = 8 * 42 + 42 * 9 + 21 * 8
    block = 2 * norm + chan_attn + ffn
    encoder = (9 * 8 + 8) + block + 2 * (8 * 8 * 9 + 8)
    cross = (16 * 8 + 8) + norm + 2 * (8 * 8 + 8) + (8 * 16 + 16) + 8 + block
    total = 2 * encoder + 2 * cross + (16 * 8 + 8) + block + (8 * 9 + 1)
    assert total == 10541
    net = build_net(TINY_NET)
    assert param_count(TINY_NET) == param_count(net) == total
    assert sum(v.numel() for v in net.state_dict().values()) == total


@pytest.mark.parametrize("cfg", [NetConfig(), DESK_NET, TINY_NET, SMALL, replace(SMALL, share_weights=True)])
def test_no_text_parity(cfg):
    assert abs(parity_gap(cfg)) <= 0.05
    assert not no_text_config(cfg).use_text


def test_fuse_arrays():
    net = build_net(SMALL)
    a, b = np.random.default_rng(0).random((2, 12, 12))
    out = fuse_arrays(net, a, b, np.random.default_rng(1).standard_normal((4, 32)))
    assert out.shape == (12, 12) and out.dtype == np.float64
    with pytest.raises(ContractError):
        fuse_arrays(net, a, b)


def test_fuse_arrays_non_finite():
    net = build_net(SMALL)
    with torch.no_grad():
        net.out.bias.fill_(float("nan"))
    with pytest.raises(NumericFault):
        fuse_arrays(net, np.zeros((8, 8)), np.zeros((8, 8)), np.ones((2, 32)))
