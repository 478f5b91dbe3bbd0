"""Multi-wise attention denoiser.

A stack of transformer-decoder style blocks where each block combines
channel-wise self-attention (spatial/joint correlations), time-wise
self-attention, cross-attention over the text context, and an FFN, with
a timestep-conditioned FiLM modulation after every sub-layer. Block
ordering is configurable: channel-first places the channel attention
ahead of the temporal attentions, channel-post moves it after them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .errors import ConfigError, DimensionError, ValidationError
from .nn import Linear, Module, glorot

FRAME_DIM = 263


class BlockLayout(Enum):
    CHANNEL_FIRST = "channel_first"
    CHANNEL_POST = "channel_post"

    @classmethod
    def parse(cls, name: str) -> "BlockLayout":
        for member in cls:
            if member.value == name:
                return member
        raise ConfigError(f"unknown layout {name!r}")


@dataclass
class ModelConfig:
    d: int = 64
    d_t: int = 64
    blocks: int = 2
    heads: int = 4
    groups: int = 4
    ffn_mult: int = 4
    layout: BlockLayout = BlockLayout.CHANNEL_FIRST
    max_len: int = 1000
    d_c: int = 32
    dtype: str = "float32"
    init_seed: int = 0

    def __post_init__(self):
        if isinstance(self.layout, str):
            self.layout = BlockLayout.parse(self.layout)
        if self.d % self.heads != 0:
            raise ConfigError(f"width {self.d} not divisible by {self.heads} heads")
        if self.d % self.groups != 0:
            raise ConfigError(f"width {self.d} not divisible by {self.groups} groups")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def sinusoidal_embedding(pos: np.ndarray, dim: int, dtype=np.float64) -> np.ndarray:
    """Classic sin/cos embedding table rows for the given positions."""
    pos = np.asarray(pos, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = pos[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    if dim % 2 == 1:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=-1)
    return emb.astype(dtype)


def _promote(x, ndim: int):
    """Add a leading batch axis if missing; returns (tensor, was_batched)."""
    t = ad.astensor(x)
    if t.data.ndim == ndim:
        return t, True
    if t.data.ndim == ndim - 1:
        return ad.reshape(t, (1,) + t.data.shape), False
    raise DimensionError(f"expected {ndim - 1}- or {ndim}-dim input, got shape {t.data.shape}")


class FilmParams(Module):
    """Timestep modulation: scale/shift projections plus layer-norm params."""

    def __init__(self, rng, d: int, d_t: int, dtype=np.float32):
        super().__init__()
        self.w_scale = parameter((0.02 * rng.standard_normal((d_t, d))).astype(dtype))
        self.w_shift = parameter((0.02 * rng.standard_normal((d_t, d))).astype(dtype))
        self.ln_gain = parameter(np.ones(d, dtype=dtype))
        self.ln_bias = parameter(np.zeros(d, dtype=dtype))


def film(x, t_emb, p: FilmParams):
    """x + LN(x * (1 + W_scale t)) + W_shift t, modulation broadcast over frames."""
    xb, batched = _promote(x, 3)
    tb, _ = _promote(t_emb, 2)
    if p.w_scale.data.shape[0] != tb.data.shape[-1]:
        raise DimensionError(f"timestep embedding width {tb.data.shape[-1]} does not match FiLM projection {p.w_scale.data.shape}")
    tb_batch = tb.data.shape[0]
    d = xb.data.shape[-1]
    scale = ad.reshape(ad.add(1.0, tb @ p.w_scale), (tb_batch, 1, d))
    shift = ad.reshape(tb @ p.w_shift, (tb_batch, 1, d))
    out = xb + ad.layer_norm(xb * scale, p.ln_gain, p.ln_bias) + shift
    return out if batched else ad.reshape(out, out.data.shape[1:])


class AttentionParams(Module):
    """Projection matrices plus the head or group count."""

    def __init__(self, rng, d: int, splits: int, dtype=np.float32):
        super().__init__()
        if d % splits != 0:
            raise ConfigError(f"width {d} not divisible into {splits} heads/groups")
        self.wq = parameter(glorot(rng, d, d, dtype))
        self.wk = parameter(glorot(rng, d, d, dtype))
        self.wv = parameter(glorot(rng, d, d, dtype))
        self.wo = parameter(glorot(rng, d, d, dtype))
        self.splits = splits


def _split_heads(x: Tensor, splits: int) -> Tensor:
    b, t, d = x.data.shape
    return ad.swapaxes(ad.reshape(x, (b, t, splits, d // splits)), 1, 2)  # (b, h, t, c)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, c = x.data.shape
    return ad.reshape(ad.swapaxes(x, 1, 2), (b, t, h * c))


def _key_mask(mask, b: int, m: int):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = np.broadcast_to(mask, (b, mask.shape[0]))
    if mask.shape[-1] > m:
        raise ValidationError(f"mask length {mask.shape[-1]} exceeds sequence length {m}")
    if mask.shape[-1] < m:
        raise ValidationError(f"mask length {mask.shape[-1]} shorter than sequence length {m}")
    if not mask.any(axis=-1).all():
        raise ValidationError("every sequence needs at least one valid key")
    return mask[:, None, :]  # broadcast over heads


def time_wise_sa(x, p: AttentionParams, mask=None):
    """Scaled dot-product attention over the frame axis, multi-head."""
    xb, batched = _promote(x, 3)
    b, t, d = xb.data.shape
    c = d // p.splits
    q = _split_heads(xb @ p.wq, p.splits)
    k = _split_heads(xb @ p.wk, p.splits)
    v = _split_heads(xb @ p.wv, p.splits)
    out = ad.attention(q, k, v, 1.0 / np.sqrt(c), key_mask=_key_mask(mask, b, t))
    out = _merge_heads(out) @ p.wo
    return out if batched else ad.reshape(out, out.data.shape[1:])


def channel_wise_sa(x, p: AttentionParams):
    """Attention over the channel axis within each group."""
    xb, batched = _promote(x, 3)
    b, t, d = xb.data.shape
    cg = d // p.splits
    q = ad.swapaxes(_split_heads(xb @ p.wq, p.splits), 2, 3)  # (b, g, c, t)
    k = ad.swapaxes(_split_heads(xb @ p.wk, p.splits), 2, 3)
    v = ad.swapaxes(_split_heads(xb @ p.wv, p.splits), 2, 3)
    out = ad.attention(q, k, v, 1.0 / np.sqrt(cg))  # softmax over key channels
    out = _merge_heads(ad.swapaxes(out, 2, 3)) @ p.wo
    return out if batched else ad.reshape(out, out.data.shape[1:])


def cross_attention(x, context, p: AttentionParams, context_mask=None):
    """Queries from the motion stream, keys/values from the context."""
    xb, batched = _promote(x, 3)
    ctx, _ = _promote(context, 3)
    if ctx.data.shape[-2] == 0:
        raise ValidationError("cross-attention context is empty")
    b, t, d = xb.data.shape
    c = d // p.splits
    q = _split_heads(xb @ p.wq, p.splits)
    k = _split_heads(ctx @ p.wk, p.splits)
    v = _split_heads(ctx @ p.wv, p.splits)
    out = ad.attention(q, k, v, 1.0 / np.sqrt(c), key_mask=_key_mask(context_mask, b, ctx.data.shape[1]))
    out = _merge_heads(out) @ p.wo
    return out if batched else ad.reshape(out, out.data.shape[1:])


class FeedForward(Module):
    def __init__(self, rng, d: int, d_ff: int, dtype=np.float32):
        super().__init__()
        self.lin1 = Linear(rng, d, d_ff, dtype=dtype)
        self.lin2 = Linear(rng, d_ff, d, dtype=dtype)

    def __call__(self, x):
        return self.lin2(ad.gelu(self.lin1(x)))


class MultiWiseBlock(Module):
    """One multi-wise attention block: four residual sub-layers, four FiLMs."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        dtype = cfg.np_dtype
        self.channel_sa = AttentionParams(rng, cfg.d, cfg.groups, dtype)
        self.time_sa = AttentionParams(rng, cfg.d, cfg.heads, dtype)
        self.cross_attn = AttentionParams(rng, cfg.d, cfg.heads, dtype)
        self.ffn = FeedForward(rng, cfg.d, cfg.ffn_mult * cfg.d, dtype)
        self.films = [FilmParams(rng, cfg.d, cfg.d_t, dtype) for _ in range(4)]
        self.layout = cfg.layout

    def __call__(self, x, t_emb, context, frame_mask=None, context_mask=None):
        return block_forward(x, t_emb, context, self, frame_mask, context_mask)


def block_forward(x, t_emb, context, block: MultiWiseBlock, frame_mask=None, context_mask=None):
    """Residual sub-layers in layout order, each followed by its FiLM."""
    if block.layout is BlockLayout.CHANNEL_FIRST:
        order = ("channel", "time", "cross", "ffn")
    else:
        order = ("time", "cross", "channel", "ffn")
    h = ad.astensor(x)
    for name, film_p in zip(order, block.films):
        if name == "channel":
            sub = channel_wise_sa(h, block.channel_sa)
        elif name == "time":
            sub = time_wise_sa(h, block.time_sa, mask=frame_mask)
        elif name == "cross":
            sub = cross_attention(h, context, block.cross_attn, context_mask=context_mask)
        else:
            sub = block.ffn(h)
        h = film(h + sub, t_emb, film_p)
    return h


class TimestepEmbedder(Module):
    """Sinusoidal timestep features refined by a two-layer projection."""

    def __init__(self, rng, d_t: int, dtype=np.float32):
        super().__init__()
        self.d_t = d_t
        self.dtype = dtype
        self.lin1 = Linear(rng, d_t, d_t, dtype=dtype)
        self.lin2 = Linear(rng, d_t, d_t, dtype=dtype)

    def __call__(self, t):
        base = sinusoidal_embedding(np.atleast_1d(t), self.d_t, self.dtype)
        return self.lin2(ad.gelu(self.lin1(Tensor(base))))


class MwNetModel(Module):
    """Projection in, positional encoding, multi-wise blocks, projection out."""

    def __init__(self, cfg: ModelConfig, text_encoder: Module | None = None):
        super().__init__()
        rng = np.random.default_rng(cfg.init_seed)
        dtype = cfg.np_dtype
        self.cfg = cfg
        self.in_proj = Linear(rng, FRAME_DIM, cfg.d, bias=False, dtype=dtype)
        self.out_proj = Linear(rng, cfg.d, FRAME_DIM, bias=False, dtype=dtype)
        # zero-initialized output head: the untrained denoiser predicts
        # zeros instead of the blown-up residual-stack magnitude
        self.out_proj.weight.data[:] = 0
        self.t_embed = TimestepEmbedder(rng, cfg.d_t, dtype)
        self.global_proj = Linear(rng, cfg.d, cfg.d_t, bias=False, dtype=dtype)
        self.blocks = [MultiWiseBlock(rng, cfg) for _ in range(cfg.blocks)]
        self.pos_table = sinusoidal_embedding(np.arange(cfg.max_len), cfg.d, dtype)
        if text_encoder is not None:
            self.text_encoder = text_encoder

    def astype(self, dtype) -> "MwNetModel":
        super().astype(dtype)
        self.pos_table = self.pos_table.astype(dtype)
        self.t_embed.dtype = dtype
        return self

    def embed_input(self, x):
        """in-projection plus positional encoding; shared with the control branch."""
        xb, batched = _promote(x, 3)
        t = xb.data.shape[1]
        if t > self.pos_table.shape[0]:
            raise ConfigError(f"sequence length {t} exceeds positional table {self.pos_table.shape[0]}")
        h = self.in_proj(xb) + self.pos_table[:t]
        return h, batched

    def condition_vector(self, t, cond):
        """Timestep embedding merged with the pooled text feature."""
        tvec = self.t_embed(t)
        if cond is not None and getattr(cond, "text_global", None) is not None:
            tvec = tvec + ad.astensor(cond.text_global) @ self.global_proj.weight
        return tvec

    def __call__(self, x_t, t, cond, frame_mask=None):
        return mwnet_forward(x_t, t, cond, self, frame_mask)


def mwnet_forward(x_t, t, cond, model: MwNetModel, frame_mask=None):
    """Denoiser forward pass; returns a T x 263 (or B x T x 263) prediction."""
    h, batched = _promote(x_t, 3)
    if h.data.shape[-1] != FRAME_DIM:
        raise DimensionError(f"expected {FRAME_DIM} channels, got {h.data.shape[-1]}")
    h, _ = model.embed_input(h)
    tvec = model.condition_vector(t, cond)
    ctx = ad.astensor(cond.text_seq) if cond is not None and cond.text_seq is not None else None
    if ctx is None:
        raise ValidationError("a text context is required (encode an empty caption for unconditioned use)")
    ctx_mask = getattr(cond, "text_mask", None)
    for block in model.blocks:
        h = block(h, tvec, ctx, frame_mask=frame_mask, context_mask=ctx_mask)
    out = model.out_proj(h)
    return out if batched else ad.reshape(out, out.data.shape[1:])
