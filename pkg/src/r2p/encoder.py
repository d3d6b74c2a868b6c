"""Factorized scene encoder and the dense single-shot neighbor predictor.

Agents and environment (lanes + lights) are encoded by separate
self-attention stacks before a joint fusion stage.  After fusion, only the
target's token travels to the decoder as the focal scene summary; the
contextualized environment tokens serve as decoder memory, and neighbor
tokens feed an auxiliary dense trajectory regressor.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .layers import SelfAttentionBlock, mlp


@dataclass
class EncodedScene:
    focal_token: torch.Tensor      # [S, D] deeply contextualized target state
    env_tokens: torch.Tensor       # [S, N_m + N_tl, D]
    env_mask: torch.Tensor         # [S, N_m + N_tl] bool
    neighbor_tokens: torch.Tensor  # [S, N_a, D]
    neighbor_mask: torch.Tensor    # [S, N_a] bool


class SceneEncoder(nn.Module):
    def __init__(self, d_model: int, n_heads: int = 4, n_layers: int = 2):
        super().__init__()
        self.agent_blocks = nn.ModuleList(
            SelfAttentionBlock(d_model, n_heads) for _ in range(n_layers))
        self.env_blocks = nn.ModuleList(
            SelfAttentionBlock(d_model, n_heads) for _ in range(n_layers))
        self.joint_blocks = nn.ModuleList(
            SelfAttentionBlock(d_model, n_heads) for _ in range(n_layers))

    def forward(self, target_token, neighbor_tokens, neighbor_mask,
                lane_tokens, lane_mask, light_tokens, light_mask,
                target_valid=None) -> EncodedScene:
        if target_valid is not None and not bool(target_valid.all()):
            raise ValueError("encoder requires a valid target token in every sample")
        s = target_token.shape[0]
        ones = torch.ones(s, 1, dtype=torch.bool, device=target_token.device)

        agents = torch.cat([target_token.unsqueeze(1), neighbor_tokens], dim=1)
        agent_mask = torch.cat([ones, neighbor_mask], dim=1)
        for block in self.agent_blocks:
            agents = block(agents, key_mask=agent_mask)

        env = torch.cat([lane_tokens, light_tokens], dim=1)
        env_mask = torch.cat([lane_mask, light_mask], dim=1)
        for block in self.env_blocks:
            env = block(env, key_mask=env_mask)

        joint = torch.cat([agents, env], dim=1)
        joint_mask = torch.cat([agent_mask, env_mask], dim=1)
        for block in self.joint_blocks:
            joint = block(joint, key_mask=joint_mask)

        n_agents = agents.shape[1]
        return EncodedScene(
            focal_token=joint[:, 0],
            env_tokens=joint[:, n_agents:],
            env_mask=env_mask,
            neighbor_tokens=joint[:, 1:n_agents],
            neighbor_mask=neighbor_mask,
        )


class DenseNeighborPredictor(nn.Module):
    """Single-shot per-neighbor trajectory regression from fused tokens."""

    def __init__(self, d_model: int, t_future: int):
        super().__init__()
        self.t_future = t_future
        self.net = mlp([d_model, d_model, 2 * t_future])

    def forward(self, neighbor_tokens) -> torch.Tensor:
        out = self.net(neighbor_tokens)
        return out.unflatten(-1, (self.t_future, 2))
