"""Tensor packing: scenes -> stacked torch batches."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch

from .scenes import AGENT_TYPES


@dataclass
class SceneBatch:
    """A stack of scenes as torch tensors plus validity masks."""

    target_history: torch.Tensor      # [S, T_s, 7]
    target_mask: torch.Tensor         # [S, T_s] bool
    neighbor_histories: torch.Tensor  # [S, N_a, T_s, 7]
    neighbor_step_mask: torch.Tensor  # [S, N_a, T_s] bool
    neighbor_mask: torch.Tensor       # [S, N_a] bool
    lanes: torch.Tensor               # [S, N_m, P, 8]
    lane_node_mask: torch.Tensor      # [S, N_m, P] bool
    lane_mask: torch.Tensor           # [S, N_m] bool
    lights: torch.Tensor              # [S, N_tl, T_s, 6]
    light_step_mask: torch.Tensor     # [S, N_tl, T_s] bool
    light_mask: torch.Tensor          # [S, N_tl] bool
    target_future: torch.Tensor       # [S, T_f, 5]
    neighbor_futures: torch.Tensor    # [S, N_a, T_f, 2]
    agent_type_idx: torch.Tensor      # [S] long
    scene_ids: torch.Tensor           # [S] long

    @property
    def size(self) -> int:
        return self.target_history.shape[0]

    @property
    def t_future(self) -> int:
        return self.target_future.shape[1]

    def index(self, idx) -> "SceneBatch":
        """Select a sub-batch by integer index tensor/array."""
        idx = torch.as_tensor(idx, dtype=torch.long)
        return SceneBatch(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def to(self, dtype) -> "SceneBatch":
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to(dtype) if value.is_floating_point() else value
        return SceneBatch(**out)

    @classmethod
    def from_scenes(cls, scenes, dtype=torch.float32, ids=None) -> "SceneBatch":
        if len(scenes) == 0:
            raise ValueError("cannot batch zero scenes")
        if ids is None:
            ids = np.arange(len(scenes))

        def stack(getter):
            return torch.as_tensor(
                np.stack([getter(s) for s in scenes]).astype(np.float64)).to(dtype)

        target_history = stack(lambda s: s.target_history)
        neighbor_histories = stack(lambda s: s.neighbor_histories)
        lanes = stack(lambda s: s.lane_polylines)
        lights = stack(lambda s: s.traffic_light_states)
        target_mask = target_history[..., 5] > 0.5
        neighbor_step_mask = neighbor_histories[..., 5] > 0.5
        lane_node_mask = lanes[..., 4] > 0.5
        light_step_mask = lights[..., 2] > 0.5
        return cls(
            target_history=target_history,
            target_mask=target_mask,
            neighbor_histories=neighbor_histories,
            neighbor_step_mask=neighbor_step_mask,
            neighbor_mask=neighbor_step_mask.any(dim=-1),
            lanes=lanes,
            lane_node_mask=lane_node_mask,
            lane_mask=lane_node_mask.any(dim=-1),
            lights=lights,
            light_step_mask=light_step_mask,
            light_mask=light_step_mask.any(dim=-1),
            target_future=stack(lambda s: s.target_future),
            neighbor_futures=stack(lambda s: s.neighbor_futures),
            agent_type_idx=torch.as_tensor(
                [AGENT_TYPES.index(s.agent_type) for s in scenes], dtype=torch.long),
            scene_ids=torch.as_tensor(np.asarray(ids), dtype=torch.long),
        )
