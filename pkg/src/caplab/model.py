"""U-shaped enhancement network with a brightness-guided transformer bottleneck.

The network maps a compressed low-light RGB image to a restored image of
the same size: a convolutional encoder halves resolution at each stage,
a stack of transformer blocks processes the bottleneck as a token
sequence, and a pixel-shuffle decoder with concatenated skips restores
resolution. The transformer's attention is brightness-guided: key
columns whose image region is near-black (below ``mask_tau`` of the
frame's peak luminance, average-pooled to the token grid) receive a
``mask_sigma`` logit offset, which zeroes their softmax weight.

Array conventions: token sequences are (N, d) or (B, N, d); binary
token masks are length-N (or (B, N)) arrays with values in {0, 1};
images enter ``forward`` as (3, H, W) or (B, 3, H, W) tensors in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import (
    InvalidConfigError,
    InvalidInputError,
    InternalConsistencyError,
    ModelBuildError,
    NumericError,
)
from .imaging import LUMA_WEIGHTS

__all__ = [
    "MASK_SIGMA_DEFAULT",
    "MASK_TAU_DEFAULT",
    "ModelConfig",
    "pool_mask_to_tokens",
    "bgsa",
    "BrightnessGuidedAttention",
    "BGViTBlock",
    "BrightnessGuidedUNet",
    "build_model",
    "param_count",
]

MASK_SIGMA_DEFAULT = -1e9
MASK_TAU_DEFAULT = 1e-3


@dataclass
class ModelConfig:
    """Architecture knobs; the defaults are the desk-scale configuration."""

    base_channels: int = 16
    num_downsamples: int = 3
    num_bgvit_blocks: int = 4
    num_heads: int = 4
    mlp_ratio: float = 2.0
    mask_sigma: float = MASK_SIGMA_DEFAULT
    mask_tau: float = MASK_TAU_DEFAULT
    use_bgsa: bool = True
    use_pos_embed: bool = False
    input_channels: int = 3

    @property
    def downsample_factor(self) -> int:
        return 2**self.num_downsamples

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2**self.num_downsamples

    def validate(self) -> None:
        if self.base_channels < 1:
            raise InvalidConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_downsamples < 1:
            raise InvalidConfigError(
                f"num_downsamples must be >= 1, got {self.num_downsamples}"
            )
        if self.num_bgvit_blocks < 0:
            raise InvalidConfigError(
                f"num_bgvit_blocks must be >= 0, got {self.num_bgvit_blocks}"
            )
        if self.num_heads < 1:
            raise InvalidConfigError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.bottleneck_channels % self.num_heads:
            raise InvalidConfigError(
                f"bottleneck width {self.bottleneck_channels} not divisible by "
                f"{self.num_heads} heads"
            )
        if self.mlp_ratio <= 0:
            raise InvalidConfigError(f"mlp_ratio must be positive, got {self.mlp_ratio}")
        if self.mask_sigma > 0:
            raise InvalidConfigError(
                f"mask_sigma must be non-positive, got {self.mask_sigma}"
            )
        if not 0.0 <= self.mask_tau <= 1.0:
            raise InvalidConfigError(f"mask_tau must be in [0, 1], got {self.mask_tau}")
        if self.input_channels < 1:
            raise InvalidConfigError(
                f"input_channels must be >= 1, got {self.input_channels}"
            )
        if self.use_pos_embed and self.bottleneck_channels % 4:
            raise InvalidConfigError(
                "positional embedding needs bottleneck width divisible by 4"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def pool_mask_to_tokens(b, factor: int, tau: float = MASK_TAU_DEFAULT) -> np.ndarray:
    """Reduce a pixel-level brightness map to a binary token mask.

    The map is average-pooled over ``factor`` x ``factor`` cells and then
    thresholded (pool first, so a cell that is dark on average is masked
    even if a few bright pixels sit inside it). Tokens are flattened
    row-major to match the bottleneck layout.
    """
    arr = np.asarray(b, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"brightness map must be 2-D, got shape {arr.shape}")
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise InternalConsistencyError(f"pool factor must be a positive int, got {factor!r}")
    h, w = arr.shape
    if h % factor or w % factor:
        raise InternalConsistencyError(
            f"map shape {arr.shape} is not divisible by factor {factor}"
        )
    if not 0.0 <= tau <= 1.0:
        raise InvalidConfigError(f"tau must be in [0, 1], got {tau}")
    pooled = arr.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return (pooled >= tau).astype(np.float64).ravel()


def _coerce_mask(mask, batch: int, n: int, like: torch.Tensor) -> torch.Tensor:
    m = mask
    if not torch.is_tensor(m):
        m = torch.as_tensor(np.asarray(m))
    m = m.to(dtype=like.dtype, device=like.device)
    if m.dim() == 1:
        m = m[None].expand(batch, -1)
    if m.dim() != 2 or m.shape[-1] != n or m.shape[0] != batch:
        raise InvalidInputError(
            f"mask shape {tuple(mask.shape)} does not match {batch} x {n} tokens"
        )
    if not bool(((m == 0) | (m == 1)).all()):
        raise InvalidInputError("mask values must be exactly 0 or 1")
    ## A fully-masked sample would softmax over uniform -1e9 logits and
    ## return a meaningless average; treat it as unmasked instead.
    dead = m.sum(dim=-1) == 0
    if bool(dead.any()):
        m = torch.where(dead[:, None], torch.ones_like(m), m)
    return m


def bgsa(q, k, v, mask=None, sigma: float = MASK_SIGMA_DEFAULT, num_heads: int = 1,
         return_weights: bool = False):
    """Brightness-guided scaled-dot-product attention over token sequences.

    ``q``, ``k``, ``v`` are (N, d) or (B, N, d) arrays (numpy in, numpy
    out; tensors in, tensors out). ``mask`` marks key columns: columns at
    0 get a ``sigma`` logit offset, which for the default -1e9 makes
    their softmax weight exactly zero. Queries are never masked, so
    masked tokens still receive updated values. With ``mask`` None or
    all ones no offset is added and the result is standard attention.
    ``return_weights`` adds the softmax weights, shaped (..., N, N) with
    a heads dimension only when ``num_heads`` > 1.
    """
    is_np = not torch.is_tensor(q)
    if is_np:
        q = torch.from_numpy(np.asarray(q, dtype=np.float64))
        k = torch.from_numpy(np.asarray(k, dtype=np.float64))
        v = torch.from_numpy(np.asarray(v, dtype=np.float64))
    if q.shape != k.shape or q.shape != v.shape:
        raise InvalidInputError(
            f"q/k/v shapes differ: {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}"
        )
    unbatched = q.dim() == 2
    if q.dim() not in (2, 3):
        raise InvalidInputError(f"tokens must be (N, d) or (B, N, d), got {tuple(q.shape)}")
    b = 1 if unbatched else q.shape[0]
    n, d = q.shape[-2], q.shape[-1]
    if d % num_heads:
        raise InvalidInputError(f"token width {d} not divisible by {num_heads} heads")
    dh = d // num_heads

    ## Tensors keep their caller-visible rank: a 2-D single-head call runs
    ## entirely through 2-D kernels, because batched matmul rounds a ulp
    ## differently and would break the exact unmasked degeneration.
    if num_heads > 1:
        shape = q.shape[:-1] + (num_heads, dh)
        qh = q.reshape(shape).transpose(-3, -2)
        kh = k.reshape(shape).transpose(-3, -2)
        vh = v.reshape(shape).transpose(-3, -2)
    else:
        qh, kh, vh = q, k, v
    logits = qh @ kh.transpose(-2, -1) / math.sqrt(dh)
    if mask is not None:
        m = _coerce_mask(mask, b, n, logits)
        if bool((m == 0).any()):
            ## Key-column offset, broadcast over query rows (and heads). The
            ## all-ones case skips the addition so the unmasked path stays
            ## bit-identical to standard attention.
            offset = (1.0 - m) * sigma
            if unbatched:
                offset = offset[0]  # (n,) broadcasts over rows and heads
            elif num_heads > 1:
                offset = offset[:, None, None, :]
            else:
                offset = offset[:, None, :]
            logits = logits + offset
    weights = torch.softmax(logits, dim=-1)
    out = weights @ vh
    if num_heads > 1:
        out = out.transpose(-3, -2).reshape(q.shape)

    if is_np:
        out, weights = out.numpy(), weights.numpy()
    return (out, weights) if return_weights else out


class BrightnessGuidedAttention(nn.Module):
    """Multi-head attention whose key columns honor a brightness mask."""

    def __init__(self, dim: int, num_heads: int, sigma: float = MASK_SIGMA_DEFAULT):
        super().__init__()
        if dim % num_heads:
            raise ModelBuildError(f"dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.sigma = sigma
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, mask=None) -> torch.Tensor:
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        out = bgsa(q, k, v, mask=mask, sigma=self.sigma, num_heads=self.num_heads)
        return self.proj(out)


class BGViTBlock(nn.Module):
    """Pre-norm transformer block with brightness-guided attention.

    x = x + Attn(LN(x), mask); x = x + MLP(LN(x)). The mask passes
    through unchanged; every block in a stack sees the same one.
    """

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 2.0,
                 sigma: float = MASK_SIGMA_DEFAULT):
        super().__init__()
        hidden = int(round(dim * mlp_ratio))
        if hidden < 1:
            raise ModelBuildError(f"mlp hidden width {hidden} is not positive")
        self.norm1 = nn.LayerNorm(dim)
        self.attn = BrightnessGuidedAttention(dim, num_heads, sigma)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, dim),
        )

    def forward(self, x: torch.Tensor, mask=None) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), mask)
        x = x + self.mlp(self.norm2(x))
        return x


def _sincos_pos_embed(h: int, w: int, dim: int, like: torch.Tensor) -> torch.Tensor:
    """Fixed 2-D sine/cosine positional table, (h*w, dim)."""
    quarter = dim // 4
    omega = torch.arange(quarter, dtype=like.dtype, device=like.device) / quarter
    omega = 1.0 / (10000.0**omega)
    ys = torch.arange(h, dtype=like.dtype, device=like.device)
    xs = torch.arange(w, dtype=like.dtype, device=like.device)
    oy = ys[:, None] * omega[None, :]
    ox = xs[:, None] * omega[None, :]
    ey = torch.cat([oy.sin(), oy.cos()], dim=1)
    ex = torch.cat([ox.sin(), ox.cos()], dim=1)
    grid = torch.cat(
        [ey[:, None, :].expand(h, w, -1), ex[None, :, :].expand(h, w, -1)], dim=2
    )
    return grid.reshape(h * w, dim)


class BrightnessGuidedUNet(nn.Module):
    """Encoder, masked-transformer bottleneck, and pixel-shuffle decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config.base_channels
        self.stem = nn.Conv2d(config.input_channels, c, 3, padding=1)
        downs = []
        ch = c
        for _ in range(config.num_downsamples):
            downs.append(nn.Conv2d(ch, 2 * ch, 3, stride=2, padding=1))
            ch *= 2
        self.downs = nn.ModuleList(downs)
        self.blocks = nn.ModuleList(
            BGViTBlock(ch, config.num_heads, config.mlp_ratio, config.mask_sigma)
            for _ in range(config.num_bgvit_blocks)
        )
        ups, fuses = [], []
        for _ in range(config.num_downsamples):
            ## 1x1 conv to 2*ch then PixelShuffle(2): channels become ch // 2
            ## at twice the resolution, matching the encoder skip's width.
            ups.append(nn.Sequential(nn.Conv2d(ch, 2 * ch, 1), nn.PixelShuffle(2)))
            fuses.append(nn.Conv2d(ch, ch // 2, 1))
            ch //= 2
        self.ups = nn.ModuleList(ups)
        self.fuses = nn.ModuleList(fuses)
        self.head = nn.Conv2d(c, config.input_channels, 3, padding=1)
        self.act = nn.GELU()

    def _check_weights(self) -> None:
        for name, p in self.named_parameters():
            if not bool(torch.isfinite(p).all()):
                raise NumericError(f"non-finite values in parameter {name}")

    def _token_mask(self, x: torch.Tensor) -> torch.Tensor:
        """Binary key mask (B, N) from the padded input's brightness map."""
        if x.shape[1] == 3:
            w = x.new_tensor(LUMA_WEIGHTS).view(1, 3, 1, 1)
            gray = (x * w).sum(dim=1)
        else:
            gray = x.mean(dim=1)
        peak = gray.amax(dim=(1, 2), keepdim=True)
        bmap = torch.where(peak > 0, gray / peak.clamp_min(torch.finfo(x.dtype).tiny),
                           torch.ones_like(gray))
        pooled = F.avg_pool2d(bmap[:, None], self.config.downsample_factor)[:, 0]
        return (pooled >= self.config.mask_tau).to(x.dtype).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        unbatched = x.dim() == 3
        if unbatched:
            x = x[None]
        if x.dim() != 4 or x.shape[1] != self.config.input_channels:
            raise InvalidInputError(
                f"expected (B, {self.config.input_channels}, H, W) input, "
                f"got shape {tuple(x.shape)}"
            )
        self._check_weights()
        _, _, h, w = x.shape
        f = self.config.downsample_factor
        if h < f or w < f:
            raise InvalidInputError(
                f"input {h}x{w} smaller than the downsample factor {f}"
            )
        ph, pw = (-h) % f, (-w) % f
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")

        mask = self._token_mask(x) if self.config.use_bgsa else None

        feat = self.stem(x)
        skips = []
        for down in self.downs:
            skips.append(feat)
            feat = self.act(down(feat))

        b, d, fh, fw = feat.shape
        tokens = feat.permute(0, 2, 3, 1).reshape(b, fh * fw, d)
        if self.config.use_pos_embed:
            tokens = tokens + _sincos_pos_embed(fh, fw, d, tokens)[None]
        for blk in self.blocks:
            tokens = blk(tokens, mask)
        feat = tokens.reshape(b, fh, fw, d).permute(0, 3, 1, 2)

        for up, fuse, skip in zip(self.ups, self.fuses, reversed(skips)):
            feat = up(feat)
            feat = self.act(fuse(torch.cat([feat, skip], dim=1)))
        out = self.head(feat)
        out = out[:, :, :h, :w]
        return out[0] if unbatched else out


def build_model(config: ModelConfig, seed: int | None = None) -> BrightnessGuidedUNet:
    """Construct the network, optionally with seeded weight initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    return BrightnessGuidedUNet(config)


def param_count(config: ModelConfig) -> int:
    """Exact number of trainable scalars for a configuration."""
    model = BrightnessGuidedUNet(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
