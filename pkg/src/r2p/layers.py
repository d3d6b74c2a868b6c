"""Shared neural building blocks: MLPs, masked pooling, attention.

All max-style reductions break ties toward the lowest index so subgradients
(and therefore finite-difference checks) are deterministic.  Masked softmax
uses a large negative fill, which underflows to an exact zero weight, and
returns all-zero rows when every key is masked so residual paths pass
through untouched.
"""

from __future__ import annotations

import math

import torch
from torch import nn

LEAKY_SLOPE = 0.01
_MASK_FILL = -1e9


def first_argmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Argmax with ties broken toward the lowest index."""
    top = x.max(dim=dim, keepdim=True).values
    is_top = x == top
    idx = torch.arange(x.shape[dim], device=x.device)
    shape = [1] * x.ndim
    shape[dim] = -1
    candidates = torch.where(is_top, idx.view(shape), x.shape[dim])
    return candidates.min(dim=dim).values


def masked_max_pool(x: torch.Tensor, mask: torch.Tensor | None, dim: int = -2) -> torch.Tensor:
    """Max over ``dim`` restricted to masked-in elements.

    The subgradient routes to the lowest-index argmax via an explicit gather.
    Rows with no valid element are zeroed (callers decide whether that is an
    error).
    """
    if mask is None:
        mask = torch.ones(x.shape[:-1], dtype=torch.bool, device=x.device)
    filled = x.masked_fill(~mask.unsqueeze(-1), _MASK_FILL)
    idx = first_argmax(filled, dim=dim)
    pooled = torch.gather(x, dim, idx.unsqueeze(dim)).squeeze(dim)
    any_valid = mask.any(dim=-1)
    return pooled * any_valid.unsqueeze(-1).to(pooled.dtype)


def masked_softmax(scores: torch.Tensor, key_mask: torch.Tensor | None) -> torch.Tensor:
    """Softmax over the last dim with masked keys dropped exactly.

    ``key_mask`` is broadcast against ``scores``; True marks a usable key.
    Fully-masked rows come back as all zeros.
    """
    if key_mask is None:
        return torch.softmax(scores, dim=-1)
    filled = scores.masked_fill(~key_mask, _MASK_FILL)
    weights = torch.softmax(filled, dim=-1)
    return weights * key_mask.any(dim=-1, keepdim=True).to(weights.dtype)


def mlp(dims, final_activation: bool = False) -> nn.Sequential:
    """Stack of Linear + LeakyReLU layers; the last linear is bare unless asked."""
    layers = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2 or final_activation:
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
    return nn.Sequential(*layers)


class MultiHeadAttention(nn.Module):
    """Standard scaled-dot-product attention with an optional key mask."""

    def __init__(self, d_model: int, n_heads: int = 1):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_o = nn.Linear(d_model, d_model)

    def forward(self, query, key, value, key_mask=None, need_weights=False):
        """query [*, Lq, D]; key/value [*, Lk, D]; key_mask [*, Lk] (True=valid)."""
        lq, lk = query.shape[-2], key.shape[-2]

        def split(x):
            return x.unflatten(-1, (self.n_heads, self.d_head)).transpose(-3, -2)

        q, k, v = split(self.w_q(query)), split(self.w_k(key)), split(self.w_v(value))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        mask = None if key_mask is None else key_mask.unsqueeze(-2).unsqueeze(-3)
        attn = masked_softmax(scores, mask)
        out = (attn @ v).transpose(-3, -2).flatten(-2)
        out = self.w_o(out)
        if key_mask is not None:
            out = out * key_mask.any(dim=-1)[..., None, None].to(out.dtype)
        if need_weights:
            return out, attn.mean(dim=-3)
        return out


class FeedForward(nn.Module):
    def __init__(self, d_model: int, expansion: int = 4):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, expansion * d_model),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Linear(expansion * d_model, d_model),
        )

    def forward(self, x):
        return self.net(x)


class SelfAttentionBlock(nn.Module):
    """Pre-norm residual self-attention + feed-forward."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.norm_attn = nn.LayerNorm(d_model)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads)
        self.ffn = FeedForward(d_model)

    def forward(self, x, key_mask=None):
        h = self.norm_attn(x)
        x = x + self.attn(h, h, h, key_mask=key_mask)
        return x + self.ffn(self.norm_ffn(x))


class CrossAttentionBlock(nn.Module):
    """Pre-norm residual cross-attention (no feed-forward of its own)."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads)

    def forward(self, x, memory, key_mask=None):
        return x + self.attn(self.norm(x), memory, memory, key_mask=key_mask)
