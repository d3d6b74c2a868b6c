"""Per-modality set encoders with dual-resolution outputs and pose reprojection.

Each modality (target history, neighbor histories, lane polylines, light
states) runs through a per-element MLP interleaved with masked max-pooling.
Pooling destroys absolute layout, so a small pose MLP re-injects each
element's geometric state additively afterwards.
"""

from __future__ import annotations

import torch
from torch import nn

from .layers import masked_max_pool, mlp

LANE_CENTROID_SCALE = 50.0  # meters; normalizes lane centroids to O(1)


class PointNetEncoder(nn.Module):
    """Two interleaved blocks of per-element MLP + masked max-pooling.

    ``forward`` returns the pooled feature, plus the dense pre-pool
    per-element features when ``keep_dense`` is set (used by the retrieval
    path, which needs per-timestep granularity).
    """

    def __init__(self, d_in: int, d_model: int):
        super().__init__()
        self.block1 = mlp([d_in, d_model, d_model], final_activation=True)
        self.block2 = mlp([2 * d_model, d_model, d_model], final_activation=True)

    def forward(self, seq, valid_mask=None, keep_dense: bool = False,
                allow_empty: bool = False):
        """seq [*, L, d_in]; valid_mask [*, L] with True marking real elements."""
        if valid_mask is not None and not allow_empty and not bool(valid_mask.any(dim=-1).all()):
            raise ValueError("pointnet input has an all-masked element set")
        h = self.block1(seq)
        pooled1 = masked_max_pool(h, valid_mask)
        broadcast = pooled1.unsqueeze(-2).expand_as(h)
        dense = self.block2(torch.cat([h, broadcast], dim=-1))
        pooled = masked_max_pool(dense, valid_mask)
        if keep_dense:
            return pooled, dense
        return pooled, None


class PoseReprojector(nn.Module):
    """Adds a learned function of an element's pose onto its pooled features."""

    def __init__(self, d_pose: int, d_model: int):
        super().__init__()
        self.d_pose = d_pose
        self.net = mlp([d_pose, d_model, d_model])

    def forward(self, features, pose):
        if pose.shape[-1] != self.d_pose:
            raise ValueError(f"pose has {pose.shape[-1]} features, expected {self.d_pose}")
        return features + self.net(pose)


def _last_valid_pose(history, mask):
    """(x, y, heading) at the last valid step of an agent history."""
    idx = (mask.to(torch.long) * torch.arange(mask.shape[-1], device=mask.device)) \
        .max(dim=-1).values
    gathered = torch.gather(
        history, -2, idx[..., None, None].expand(*idx.shape, 1, history.shape[-1]))
    return gathered.squeeze(-2)[..., :3]


def _lane_pose(lanes, node_mask):
    """Normalized centroid plus first-to-last unit direction per polyline."""
    weights = node_mask.to(lanes.dtype).unsqueeze(-1)
    count = weights.sum(dim=-2).clamp_min(1.0)
    centroid = (lanes[..., :2] * weights).sum(dim=-2) / count / LANE_CENTROID_SCALE
    n_nodes = node_mask.shape[-1]
    arange = torch.arange(n_nodes, device=lanes.device)
    first = torch.where(node_mask, arange, n_nodes).min(dim=-1).values.clamp_max(n_nodes - 1)
    last = (node_mask.to(torch.long) * arange).max(dim=-1).values
    def grab(idx):
        return torch.gather(
            lanes[..., :2], -2, idx[..., None, None].expand(*idx.shape, 1, 2)).squeeze(-2)
    span = grab(last) - grab(first)
    norm = span.norm(dim=-1, keepdim=True)
    direction = torch.where(norm > 1e-9, span / norm.clamp_min(1e-9),
                            torch.zeros_like(span))
    return torch.cat([centroid, direction], dim=-1)


class SceneProjector(nn.Module):
    """Projects every raw modality of a scene batch to width-D tokens.

    Returns a dict with pooled tokens per modality, the dense per-timestep
    target features for the retrieval layer, and validity masks.
    """

    def __init__(self, d_model: int, d_agent: int = 7, d_map: int = 8, d_light: int = 6):
        super().__init__()
        self.target_encoder = PointNetEncoder(d_agent, d_model)
        self.neighbor_encoder = PointNetEncoder(d_agent, d_model)
        self.lane_encoder = PointNetEncoder(d_map, d_model)
        self.light_encoder = PointNetEncoder(d_light, d_model)
        self.agent_pose = PoseReprojector(3, d_model)
        self.lane_pose = PoseReprojector(4, d_model)

    def forward(self, batch):
        target_mask = batch.target_mask
        if not bool(target_mask.any(dim=-1).all()):
            raise ValueError("target history is fully masked for some sample")
        target_token, target_dense = self.target_encoder(
            batch.target_history, target_mask, keep_dense=True)
        target_token = self.agent_pose(
            target_token, _last_valid_pose(batch.target_history, target_mask))

        neighbor_tokens, _ = self.neighbor_encoder(
            batch.neighbor_histories, batch.neighbor_step_mask, allow_empty=True)
        neighbor_tokens = self.agent_pose(
            neighbor_tokens,
            _last_valid_pose(batch.neighbor_histories, batch.neighbor_step_mask))
        neighbor_tokens = neighbor_tokens * batch.neighbor_mask.unsqueeze(-1).to(neighbor_tokens.dtype)

        lane_tokens, _ = self.lane_encoder(
            batch.lanes, batch.lane_node_mask, allow_empty=True)
        lane_tokens = self.lane_pose(lane_tokens, _lane_pose(batch.lanes, batch.lane_node_mask))
        lane_tokens = lane_tokens * batch.lane_mask.unsqueeze(-1).to(lane_tokens.dtype)

        light_tokens, _ = self.light_encoder(
            batch.lights, batch.light_step_mask, allow_empty=True)
        light_tokens = light_tokens * batch.light_mask.unsqueeze(-1).to(light_tokens.dtype)

        return {
            "target_token": target_token,
            "target_dense": target_dense,
            "target_step_mask": target_mask,
            "neighbor_tokens": neighbor_tokens,
            "neighbor_mask": batch.neighbor_mask,
            "lane_tokens": lane_tokens,
            "lane_mask": batch.lane_mask,
            "light_tokens": light_tokens,
            "light_mask": batch.light_mask,
        }
