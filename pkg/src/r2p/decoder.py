"""Iterative refinement decoder and the three prediction heads.

The decoder takes anchor tokens (or grouped queries) as its initial queries,
runs one self-attention phase over them, then L layers of cross-attention:
first against the focal target token, then against the environment tokens,
each followed residually by a feed-forward.  Offsets are predicted from the
pre-decoder anchor tokens only, so decoder parameters can never compensate
for a bad anchor selection through the offset path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .layers import CrossAttentionBlock, FeedForward, SelfAttentionBlock, mlp

D_KIN = 7  # mu_x, mu_y, log_sigma_x, log_sigma_y, rho_raw, speed, yaw
LOG_SIGMA_MAX = math.log(1e3)
RHO_SCALE = 0.99


@dataclass
class Prediction:
    kinematics: torch.Tensor         # [S, K, T_f, D_KIN]
    confidences: torch.Tensor        # [S, K], rows sum to 1
    offsets: torch.Tensor            # [S, N_q, 2] meters
    anchor_endpoints: torch.Tensor   # [S, N_q, 2]
    refined_endpoints: torch.Tensor  # anchor_endpoints + offsets

    @property
    def positions(self) -> torch.Tensor:
        return self.kinematics[..., :2]


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.target_ca = CrossAttentionBlock(d_model, n_heads)
        self.env_ca = CrossAttentionBlock(d_model, n_heads)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model)

    def forward(self, queries, focal_token, env_tokens, env_mask):
        queries = self.target_ca(queries, focal_token.unsqueeze(1))
        queries = self.env_ca(queries, env_tokens, key_mask=env_mask)
        return queries + self.ffn(self.norm_ffn(queries))


class RefinementDecoder(nn.Module):
    def __init__(self, d_model: int, n_heads: int = 4, n_layers: int = 3):
        super().__init__()
        self.initial_self_attn = SelfAttentionBlock(d_model, n_heads)
        self.layers = nn.ModuleList(
            DecoderLayer(d_model, n_heads) for _ in range(n_layers))

    def forward(self, queries, focal_token, env_tokens, env_mask):
        queries = self.initial_self_attn(queries)
        for layer in self.layers:
            queries = layer(queries, focal_token, env_tokens, env_mask)
        return queries


class PredictionHeads(nn.Module):
    """Parallel MLP heads: kinematic states, mode confidences, anchor offsets."""

    def __init__(self, d_model: int, t_future: int):
        super().__init__()
        self.t_future = t_future
        self.kin_head = mlp([d_model, d_model, t_future * D_KIN])
        self.conf_head = mlp([d_model, d_model, 1])
        self.offset_head = mlp([d_model, d_model, 2])

    def forward(self, q_final, q_pre, selected_endpoints,
                conf_temperature: float | None = None) -> Prediction:
        """q_final [S, K, D] from the decoder; q_pre [S, N_q, D] pre-decoder
        anchor tokens; selected_endpoints [S, N_q, 2]."""
        kin = self.kin_head(q_final).unflatten(-1, (self.t_future, D_KIN))
        log_sigma = kin[..., 2:4].clamp(-LOG_SIGMA_MAX, LOG_SIGMA_MAX)
        kin = torch.cat([kin[..., :2], log_sigma, kin[..., 4:]], dim=-1)
        conf_logits = self.conf_head(q_final).squeeze(-1)
        if conf_temperature is not None:
            conf_logits = conf_logits / conf_temperature
        confidences = torch.softmax(conf_logits, dim=-1)
        offsets = self.offset_head(q_pre)
        return Prediction(
            kinematics=kin,
            confidences=confidences,
            offsets=offsets,
            anchor_endpoints=selected_endpoints,
            refined_endpoints=selected_endpoints + offsets,
        )
