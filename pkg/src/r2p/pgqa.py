"""Grouping of retrieved anchors into K medoid-grounded decoder queries.

When more anchors are retrieved than prediction modes are needed, the set is
compressed in physical space: K seed anchors are picked by farthest point
sampling over trajectory endpoints, every anchor is softly assigned to the
seeds by endpoint distance, and grouped latent queries are formed as the
assignment-weighted sum of anchor tokens.  The seeds' own trajectories are
kept verbatim, so each grouped query stays tied to one real trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .layers import first_argmax


@dataclass
class PgqaOutput:
    grouped_queries: torch.Tensor      # [S, K, D]
    medoid_trajectories: torch.Tensor  # [S, K, T_f, 2] bitwise copies of seeds
    assignment: torch.Tensor           # [S, K, N], rows sum to 1
    entropy: torch.Tensor              # [S] mean assignment-row entropy
    seed_indices: torch.Tensor         # [S, K] long


def farthest_point_sampling(points: torch.Tensor, k: int,
                            first: torch.Tensor | None = None) -> torch.Tensor:
    """Greedy max-min seed selection over [*, N, 2] points.

    ``first`` gives the starting index per batch row (default 0).  Each
    subsequent seed maximizes the minimum squared distance to the chosen
    set; ties break toward the lowest index.
    """
    batch_shape, n = points.shape[:-2], points.shape[-2]
    if k > n:
        raise ValueError(f"cannot pick {k} seeds from {n} points")
    if k <= 0:
        raise ValueError("k must be positive")
    if first is None:
        first = torch.zeros(batch_shape, dtype=torch.long, device=points.device)
    seeds = [first]
    min_d2 = torch.full((*batch_shape, n), float("inf"),
                        dtype=points.dtype, device=points.device)
    for _ in range(k - 1):
        last = seeds[-1]
        chosen = torch.gather(
            points, -2, last[..., None, None].expand(*batch_shape, 1, 2))
        d2 = ((points - chosen) ** 2).sum(dim=-1)
        min_d2 = torch.minimum(min_d2, d2)
        seeds.append(first_argmax(min_d2, dim=-1))
    return torch.stack(seeds, dim=-1)


def pgqa(tokens: torch.Tensor, trajectories: torch.Tensor, k: int, tau_g: float,
         scores: torch.Tensor | None = None) -> PgqaOutput:
    """Compress N anchor tokens into K grouped queries.

    ``tokens`` [*, N, D]; ``trajectories`` [*, N, T_f, 2]; ``scores`` [*, N]
    ranks anchors for the first seed (highest wins, default index 0).  The
    soft assignment keeps gradients flowing to every anchor token.
    """
    if tau_g <= 0:
        raise ValueError(f"tau_g must be positive, got {tau_g}")
    squeeze = tokens.dim() == 2
    if squeeze:
        tokens = tokens[None]
        trajectories = trajectories[None]
        scores = None if scores is None else scores[None]
    s, n, d = tokens.shape
    if k > n:
        raise ValueError(f"cannot group {n} anchors into {k} queries")
    endpoints = trajectories[..., -1, :]
    first = None if scores is None else first_argmax(scores, dim=-1)
    seeds = farthest_point_sampling(endpoints, k, first=first)

    seed_pts = torch.gather(endpoints, -2, seeds[..., None].expand(s, k, 2))
    d2 = ((endpoints[:, None, :, :] - seed_pts[:, :, None, :]) ** 2).sum(dim=-1)
    assignment = torch.softmax(-d2 / tau_g, dim=-1)
    grouped = assignment @ tokens
    medoids = torch.gather(
        trajectories, 1,
        seeds[..., None, None].expand(s, k, *trajectories.shape[-2:]))
    entropy = -torch.xlogy(assignment, assignment).sum(dim=(-1, -2)) / k

    out = PgqaOutput(grouped, medoids, assignment, entropy, seeds)
    if squeeze:
        out = PgqaOutput(grouped[0], medoids[0], assignment[0], entropy[0], seeds[0])
    return out
