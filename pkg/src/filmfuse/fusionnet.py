"""Language-guided fusion network.

Layout of :class:`FILMNet`::

    source k --> encoder_k --> M x CrossAttentionLayer(text) --+
                                                               +--> concat --> 1x1 conv --> decoder --> fused
    source j --> encoder_j --> M x CrossAttentionLayer(text) --+

The encoder is a 3x3 lift to ``dim`` channels, ``encoder_restormer_blocks``
channel-attention (Restormer) blocks and one residual 3x3 conv block. The
decoder is ``N`` Restormer blocks, a 3x3 conv to one channel and a sigmoid.
Nothing changes spatial resolution; inputs are reflect-padded to a multiple
of 4 and the output is cropped back.

A cross-attention layer takes queries from the fused text tokens and keys and
values from the flattened feature map. The attended values are averaged over
tokens into one vector per image, which drives a channel-wise scale/shift of
the feature map behind a zero-initialised gate, followed by a Restormer block.
With ``use_text=False`` each cross-attention layer becomes a plain Restormer
block and the encoders get extra blocks to keep the parameter count close.
"""

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError, NumericFault
from .imaging import MIN_NET_SIZE

PAD_MULTIPLE = 4
TEXT_CHUNK = 64


@dataclass(frozen=True)
class NetConfig:
    dim: int = 64
    heads: int = 8
    M: int = 2
    N: int = 3
    text_dim: int = 256
    use_text: bool = True
    encoder_restormer_blocks: int = 1
    ffn_factor: float = 2.66
    share_weights: bool = False
    # hidden width of the text-free replacement blocks; 0 means int(dim * ffn_factor)
    guide_ffn_hidden: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ContractError(f"dim={self.dim} is not divisible by heads={self.heads}")
        if self.M < 1 or self.N < 1 or self.encoder_restormer_blocks < 0:
            raise ContractError("M and N must be >= 1")

    @property
    def ffn_hidden(self):
        return int(self.dim * self.ffn_factor)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


DESK_NET = NetConfig(dim=32, heads=8, M=2, N=3, text_dim=256)
TINY_NET = NetConfig(dim=8, heads=2, M=1, N=1, text_dim=16)


class LayerNorm2d(nn.Module):
    """Per-pixel LayerNorm over channels, with bias."""

    def __init__(self, dim):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = x.var(1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + 1e-5)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class ChannelAttention(nn.Module):
    """Transposed (channel x channel) multi-head attention."""

    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.qkv = nn.Conv2d(dim, dim * 3, 1, bias=False)
        self.qkv_dw = nn.Conv2d(dim * 3, dim * 3, 3, padding=1, groups=dim * 3, bias=False)
        self.project_out = nn.Conv2d(dim, dim, 1, bias=False)

    def attention(self, x):
        """Return ``(attn, v)``; ``attn`` has shape (B, heads, C/heads, C/heads)."""
        b, c, h, w = x.shape
        q, k, v = self.qkv_dw(self.qkv(x)).chunk(3, dim=1)
        q = F.normalize(q.reshape(b, self.heads, c // self.heads, h * w), dim=-1)
        k = F.normalize(k.reshape(b, self.heads, c // self.heads, h * w), dim=-1)
        v = v.reshape(b, self.heads, c // self.heads, h * w)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.temperature, dim=-1)
        return attn, v

    def forward(self, x):
        b, c, h, w = x.shape
        attn, v = self.attention(x)
        return self.project_out((attn @ v).reshape(b, c, h, w))


class GatedFFN(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.project_in = nn.Conv2d(dim, hidden * 2, 1, bias=False)
        self.dw = nn.Conv2d(hidden * 2, hidden * 2, 3, padding=1, groups=hidden * 2, bias=False)
        self.project_out = nn.Conv2d(hidden, dim, 1, bias=False)

    def forward(self, x):
        x1, x2 = self.dw(self.project_in(x)).chunk(2, dim=1)
        return self.project_out(F.gelu(x1) * x2)


class RestormerBlock(nn.Module):
    def __init__(self, dim, heads, hidden):
        super().__init__()
        self.norm1 = LayerNorm2d(dim)
        self.attn = ChannelAttention(dim, heads)
        self.norm2 = LayerNorm2d(dim)
        self.ffn = GatedFFN(dim, hidden)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class ResidualConv(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.gelu(self.conv1(x)))


class Encoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.lift = nn.Conv2d(1, cfg.dim, 3, padding=1)
        self.blocks = nn.Sequential(
            *[RestormerBlock(cfg.dim, cfg.heads, cfg.ffn_hidden) for _ in range(cfg.encoder_restormer_blocks)]
        )
        self.local = ResidualConv(cfg.dim)

    def forward(self, x):
        return self.local(self.blocks(self.lift(x)))


class CrossAttentionLayer(nn.Module):
    def __init__(self, dim, heads, text_dim, hidden):
        super().__init__()
        self.heads = heads
        self.q_proj = nn.Linear(text_dim, dim)
        self.norm = LayerNorm2d(dim)
        self.k_proj = nn.Conv2d(dim, dim, 1)
        self.v_proj = nn.Conv2d(dim, dim, 1)
        self.modulation = nn.Linear(dim, 2 * dim)
        self.gamma = nn.Parameter(torch.zeros(dim))
        self.ffn = RestormerBlock(dim, heads, hidden)

    def _qkv(self, text, f):
        b, c, h, w = f.shape
        d = c // self.heads
        if text.shape[-1] != self.q_proj.in_features:
            raise ContractError(f"text dim {text.shape[-1]} != configured {self.q_proj.in_features}")
        x = self.norm(f)
        q = self.q_proj(text).reshape(b, -1, self.heads, d).transpose(1, 2)  # B,h,L,d
        k = self.k_proj(x).reshape(b, self.heads, d, h * w)  # B,h,d,HW
        v = self.v_proj(x).reshape(b, self.heads, d, h * w)
        return q, k, v

    def attention(self, text, f):
        """Full text-to-pixel attention, shape (B, heads, L, HW)."""
        q, k, _ = self._qkv(text, f)
        return torch.softmax(q @ k / math.sqrt(q.shape[-1]), dim=-1)

    def summary(self, text, f, mask=None):
        """Token-averaged attended values, one C-vector per batch item.

        Tokens are processed in chunks so the L x HW attention matrix is never
        held in full.
        """
        b = f.shape[0]
        q, k, v = self._qkv(text, f)
        scale = 1.0 / math.sqrt(q.shape[-1])
        if mask is None:
            weights = torch.full(q.shape[:3], 1.0 / q.shape[2], dtype=f.dtype)
        else:
            m = mask.to(f.dtype)
            weights = (m / m.sum(1, keepdim=True))[:, None, :].expand(-1, self.heads, -1)
        mean_attn = 0
        for s in range(0, q.shape[2], TEXT_CHUNK):
            a = torch.softmax(q[:, :, s:s + TEXT_CHUNK] @ k * scale, dim=-1)
            mean_attn = mean_attn + (weights[:, :, None, s:s + TEXT_CHUNK] @ a)[:, :, 0]
        return torch.einsum("bhn,bhdn->bhd", mean_attn, v).reshape(b, -1)

    def forward(self, text, f, mask=None):
        scale, shift = self.modulation(self.summary(text, f, mask)).chunk(2, dim=1)
        mod = f * scale[:, :, None, None] + shift[:, :, None, None]
        return self.ffn(f + self.gamma[None, :, None, None] * mod)


class FILMNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.enc1 = Encoder(cfg)
        self.enc2 = self.enc1 if cfg.share_weights else Encoder(cfg)
        self.guide1 = self._guidance(cfg)
        self.guide2 = self.guide1 if cfg.share_weights else self._guidance(cfg)
        self.fuse = nn.Conv2d(2 * cfg.dim, cfg.dim, 1)
        self.decoder = nn.Sequential(*[RestormerBlock(cfg.dim, cfg.heads, cfg.ffn_hidden) for _ in range(cfg.N)])
        self.out = nn.Conv2d(cfg.dim, 1, 3, padding=1)

    @staticmethod
    def _guidance(cfg):
        if cfg.use_text:
            layers = [CrossAttentionLayer(cfg.dim, cfg.heads, cfg.text_dim, cfg.ffn_hidden) for _ in range(cfg.M)]
        else:
            hidden = cfg.guide_ffn_hidden or cfg.ffn_hidden
            layers = [RestormerBlock(cfg.dim, cfg.heads, hidden) for _ in range(cfg.M)]
        return nn.ModuleList(layers)

    def encode(self, x, branch=1):
        return (self.enc1 if branch == 1 else self.enc2)(x)

    def guide(self, f, text=None, mask=None, branch=1):
        for layer in self.guide1 if branch == 1 else self.guide2:
            f = layer(text, f, mask) if self.cfg.use_text else layer(f)
        return f

    def fuse_visual(self, f1, f2):
        if f1.shape[-2:] != f2.shape[-2:]:
            raise ContractError(f"spatial mismatch {tuple(f1.shape[-2:])} vs {tuple(f2.shape[-2:])}")
        return self.fuse(torch.cat([f1, f2], dim=1))

    def decode(self, f):
        return torch.sigmoid(self.out(self.decoder(f)))

    def forward(self, i1, i2, text=None, mask=None):
        """``i1``, ``i2``: (B, 1, H, W) in [0, 1]; ``text``: (B, L, D) fused tokens."""
        if i1.shape != i2.shape:
            raise ContractError(f"source size mismatch {tuple(i1.shape)} vs {tuple(i2.shape)}")
        if self.cfg.use_text and text is None:
            raise ContractError("this network needs a fused text feature")
        h, w = i1.shape[-2:]
        if h < MIN_NET_SIZE or w < MIN_NET_SIZE:
            raise ContractError(f"inputs must be at least {MIN_NET_SIZE}x{MIN_NET_SIZE}, got {h}x{w}")
        ph = (-h) % PAD_MULTIPLE
        pw = (-w) % PAD_MULTIPLE
        if ph or pw:
            i1 = F.pad(i1, (0, pw, 0, ph), mode="reflect")
            i2 = F.pad(i2, (0, pw, 0, ph), mode="reflect")
        f1 = self.guide(self.encode(i1, 1), text, mask, 1)
        f2 = self.guide(self.encode(i2, 2), text, mask, 2)
        out = self.decode(self.fuse_visual(f1, f2))[..., :h, :w]
        return out


def _init_weights(net):
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="linear")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            nn.init.zeros_(m.bias)


def build_net(cfg, seed=0, dtype=torch.float32):
    """Instantiate and initialise a network; identical seeds give identical weights."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = FILMNet(cfg)
        _init_weights(net)
    return net.to(dtype)


def param_count(net_or_cfg):
    if isinstance(net_or_cfg, NetConfig):
        with torch.device("meta"):
            net_or_cfg = FILMNet(net_or_cfg)
    return sum(p.numel() for p in net_or_cfg.parameters())


def no_text_config(cfg, tolerance=0.05):
    """Text-free variant whose parameter count is closest to ``cfg``'s.

    Extra encoder blocks are added first; if whole blocks cannot land within
    ``tolerance``, the hidden width of the replacement blocks is resized.
    """
    target = param_count(replace(cfg, use_text=True))
    best = None
    for blocks in range(cfg.encoder_restormer_blocks, cfg.encoder_restormer_blocks + 16):
        cand = replace(cfg, use_text=False, encoder_restormer_blocks=blocks, guide_ffn_hidden=0)
        gap = param_count(cand) - target
        if best is None or abs(gap) < abs(best[0]):
            best = (gap, cand)
    gap, cand = best
    if abs(gap) > tolerance * target:
        n_blocks = cfg.M * (1 if cfg.share_weights else 2)
        per_unit = n_blocks * (3 * cfg.dim + 18)  # GatedFFN parameters per hidden unit
        hidden = max(1, cfg.ffn_hidden - round(gap / per_unit))
        cand = replace(cand, guide_ffn_hidden=hidden)
        gap = param_count(cand) - target
    if abs(gap) > tolerance * target:
        raise ContractError(f"no text-free variant within {tolerance:.0%} of {target} parameters")
    return cand


def parity_gap(cfg):
    full = param_count(replace(cfg, use_text=True))
    return (param_count(no_text_config(cfg)) - full) / full


def fuse_arrays(net, i1, i2, text=None):
    """Fuse two single-channel float arrays; returns a float64 array in [0, 1]."""
    dtype = next(net.parameters()).dtype
    a = torch.as_tensor(np.asarray(i1), dtype=dtype)[None, None]
    b = torch.as_tensor(np.asarray(i2), dtype=dtype)[None, None]
    t = None
    if net.cfg.use_text:
        if text is None:
            raise ContractError("this network needs a fused text feature")
        t = torch.as_tensor(np.asarray(text), dtype=dtype)[None]
    with torch.no_grad():
        out = net(a, b, t)
    if not torch.isfinite(out).all():
        raise NumericFault("non-finite values in fused output")
    return out[0, 0].double().numpy()
