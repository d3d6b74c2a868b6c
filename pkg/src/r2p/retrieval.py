"""Anchor retrieval: context-gated query adaptation and discrete bank lookup.

Orthogonally initialized latent queries absorb scene context through
modality-specific cross-attention, balanced by per-query sigmoid gates and a
global softmax router with a learnable null sink.  The adapted queries score
the frozen bank by cosine similarity and select trajectories hard
(straight-through) while gradients follow the temperature softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .layers import MultiHeadAttention, first_argmax, mlp

MODALITIES = ("target", "neighbors", "map")
TOP_K_REPORT = 5
_NORM_EPS = 1e-12


def init_orthogonal_queries(n_queries: int, d_model: int, seed: int) -> torch.Tensor:
    """Seeded orthonormal rows [n_queries, d_model] (QR of a Gaussian draw)."""
    if n_queries > d_model:
        raise ValueError(f"cannot fit {n_queries} orthonormal rows in dimension {d_model}")
    gen = torch.Generator().manual_seed(int(seed))
    gauss = torch.randn(d_model, n_queries, generator=gen, dtype=torch.float64)
    q, _ = torch.linalg.qr(gauss)
    return q.T.contiguous()


@dataclass
class RetrievalOutput:
    q_base: torch.Tensor                 # [S, N_q, D]
    q_adapt: torch.Tensor                # [S, N_q, D]
    routing_weights: torch.Tensor        # [S, 4] (target, neighbors, map, null)
    micro_gates: dict                    # modality -> [S, N_q, D] in (0, 1)
    logits: torch.Tensor                 # [S, N_q, B] cosine scores
    pi: torch.Tensor                     # [S, N_q, B] softmax rows
    y_hard: torch.Tensor                 # [S, N_q, B] one-hot
    y_st: torch.Tensor                   # forward == y_hard, backward == pi
    anchor_tokens: torch.Tensor          # [S, N_q, D]
    selected_trajectories: torch.Tensor  # [S, N_q, T_f, 2]
    selected_indices: torch.Tensor       # [S, N_q] long
    attention_top: dict                  # modality -> (indices [S,N_q,5], weights)
    zero_norm_queries: torch.Tensor      # [S, N_q] bool


class GatedCrossAttention(nn.Module):
    """Dual-level gating: per-query sigmoid gates + global softmax routing.

    Each modality gets its own single-head cross-attention pathway.  Macro
    routing softmaxes one scalar logit per modality plus a learnable null
    logit; modalities that are absent or fully masked are excluded, so with
    no usable context all mass lands on the null sink and the queries pass
    through unchanged.
    """

    def __init__(self, d_model: int):
        super().__init__()
        self.attn = nn.ModuleDict({m: MultiHeadAttention(d_model, 1) for m in MODALITIES})
        self.gate = nn.ModuleDict({m: mlp([2 * d_model, d_model, d_model]) for m in MODALITIES})
        self.router = nn.ModuleDict({m: nn.Linear(d_model, 1) for m in MODALITIES})
        self.null_logit = nn.Parameter(torch.zeros(()))

    def forward(self, q_base, contexts: dict):
        """contexts maps modality -> (ctx [S, L, D], mask [S, L]) or None."""
        s, n_q, d = q_base.shape
        dtype = q_base.dtype
        neg_inf = torch.tensor(float("-inf"), dtype=dtype)
        attended, gates, weights, logits = {}, {}, {}, []
        for m in MODALITIES:
            entry = contexts.get(m)
            if entry is None:
                attended[m] = torch.zeros_like(q_base)
                gates[m] = torch.zeros_like(q_base)
                weights[m] = None
                logits.append(neg_inf.expand(s))
                continue
            ctx, mask = entry
            h, attn_w = self.attn[m](q_base, ctx, ctx, key_mask=mask, need_weights=True)
            attended[m] = h
            gates[m] = torch.sigmoid(self.gate[m](torch.cat([q_base, h], dim=-1)))
            weights[m] = attn_w
            logit = self.router[m](h.mean(dim=-2)).squeeze(-1)
            usable = mask.any(dim=-1) if mask is not None else torch.ones(
                s, dtype=torch.bool, device=q_base.device)
            logits.append(torch.where(usable, logit, neg_inf))
        logits.append(self.null_logit.to(dtype).expand(s))
        routing = torch.softmax(torch.stack(logits, dim=-1), dim=-1)
        q_adapt = q_base
        for i, m in enumerate(MODALITIES):
            q_adapt = q_adapt + routing[:, i, None, None] * (gates[m] * attended[m])
        return q_adapt, routing, gates, weights


class BankScorer(nn.Module):
    """Cosine similarity between adapted queries and frozen bank embeddings."""

    def __init__(self, d_model: int, d_emb: int):
        super().__init__()
        self.proj = nn.Linear(d_model, d_emb) if d_model != d_emb else None

    def forward(self, q_adapt, embeddings):
        q = self.proj(q_adapt) if self.proj is not None else q_adapt
        q_norm = q.norm(dim=-1, keepdim=True)
        degenerate = q_norm.squeeze(-1) < _NORM_EPS
        q_hat = q / q_norm.clamp_min(_NORM_EPS)
        e_hat = embeddings / embeddings.norm(dim=-1, keepdim=True).clamp_min(_NORM_EPS)
        return q_hat @ e_hat.T, degenerate


def cosine_logits(q_adapt, embeddings, proj=None):
    """Functional form of BankScorer for oracles and tests."""
    q = proj(q_adapt) if proj is not None else q_adapt
    q_hat = q / q.norm(dim=-1, keepdim=True).clamp_min(_NORM_EPS)
    e_hat = embeddings / embeddings.norm(dim=-1, keepdim=True).clamp_min(_NORM_EPS)
    return q_hat @ e_hat.T


class _HardForward(torch.autograd.Function):
    """Forward the hard tensor untouched; route gradients to the soft one."""

    @staticmethod
    def forward(ctx, soft, hard):
        return hard

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


def sample_gumbel(shape, generator=None, dtype=torch.float32):
    u = torch.rand(shape, generator=generator, dtype=dtype)
    exponential = -torch.log(u.clamp_min(1e-20))
    return -torch.log(exponential.clamp_min(1e-20))


def ste_select(z, tau: float, gumbel_noise: bool = False, rng_seed: int | None = None,
               generator=None):
    """Straight-through selection over bank logits.

    Returns (y_st, pi, y_hard, indices): ``y_st`` is bitwise one-hot in the
    forward pass and carries the softmax gradient of ``pi`` backward; ties in
    the argmax break toward the lowest index.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = z
    if gumbel_noise:
        if generator is None:
            generator = torch.Generator().manual_seed(0 if rng_seed is None else int(rng_seed))
        logits = z + sample_gumbel(z.shape, generator=generator, dtype=z.dtype)
    pi = torch.softmax(logits / tau, dim=-1)
    indices = first_argmax(logits, dim=-1)
    y_hard = torch.nn.functional.one_hot(indices, z.shape[-1]).to(z.dtype)
    y_st = _HardForward.apply(pi, y_hard)
    return y_st, pi, y_hard, indices


def unique_select(logits, tau: float):
    """Greedy duplicate-free selection: each query masks out earlier picks."""
    pi = torch.softmax(logits / tau, dim=-1)
    work = logits.clone()
    n_q, b = logits.shape[-2], logits.shape[-1]
    picks = []
    for q in range(min(n_q, b)):
        idx = first_argmax(work[..., q, :], dim=-1)
        picks.append(idx)
        work = work.scatter(-1, idx[..., None, None].expand(*idx.shape, n_q, 1),
                            float("-inf"))
    while len(picks) < n_q:  # more queries than bank entries: duplicates return
        picks.append(picks[-1])
    indices = torch.stack(picks, dim=-1)
    y_hard = torch.nn.functional.one_hot(indices, b).to(logits.dtype)
    y_st = _HardForward.apply(pi, y_hard)
    return y_st, pi, y_hard, indices


def _top_elements(attn_weights, k: int = TOP_K_REPORT):
    """Top-k attended element indices/weights, padded to exactly k entries."""
    if attn_weights is None:
        return None
    s, n_q, l = attn_weights.shape
    if l < k:
        pad = attn_weights.new_zeros(s, n_q, k - l)
        attn_weights = torch.cat([attn_weights, pad], dim=-1)
    weights, indices = torch.topk(attn_weights, k, dim=-1)
    indices = torch.where(indices < l, indices, torch.full_like(indices, -1))
    return indices, weights


class AnchorRetrievalLayer(nn.Module):
    """Full retrieval stack producing anchor tokens that seed the decoder."""

    def __init__(self, d_model: int, n_queries: int, bank_embeddings, bank_trajectories,
                 query_seed: int = 0, mode: str = "st", unique_anchors: bool = False):
        super().__init__()
        if mode not in ("st", "soft"):
            raise ValueError(f"unknown retrieval mode {mode!r}")
        self.mode = mode
        self.unique_anchors = unique_anchors
        self.n_queries = n_queries
        emb = torch.as_tensor(bank_embeddings)
        trajs = torch.as_tensor(bank_trajectories)
        self.register_buffer("bank_embeddings", emb)
        self.register_buffer("bank_trajectories", trajs)
        d_emb, t_f = emb.shape[1], trajs.shape[1]
        self.queries = nn.Parameter(
            init_orthogonal_queries(n_queries, d_model, query_seed)
            .to(torch.get_default_dtype()))
        self.gated = GatedCrossAttention(d_model)
        self.scorer = BankScorer(d_model, d_emb)
        self.emb_mlp = mlp([d_emb, d_model, d_model])
        self.traj_mlp = mlp([2 * t_f, d_model, d_model])

    def forward(self, target_dense, target_step_mask, neighbor_tokens, neighbor_mask,
                lane_tokens=None, lane_mask=None, tau: float = 1.0,
                gumbel_noise: bool = False, generator=None,
                gates=(True, True, False)) -> RetrievalOutput:
        s = target_dense.shape[0]
        if gumbel_noise and generator is None:
            generator = torch.Generator().manual_seed(0)
        q_base = self.queries.unsqueeze(0).expand(s, -1, -1)
        contexts = {
            "target": (target_dense, target_step_mask) if gates[0] else None,
            "neighbors": (neighbor_tokens, neighbor_mask) if gates[1] else None,
            "map": (lane_tokens, lane_mask) if (gates[2] and lane_tokens is not None) else None,
        }
        q_adapt, routing, micro_gates, attn_weights = self.gated(q_base, contexts)

        z, degenerate = self.scorer(q_adapt, self.bank_embeddings)
        if self.mode == "soft":
            pi = torch.softmax(z / tau, dim=-1)
            indices = first_argmax(z, dim=-1)
            y_hard = torch.nn.functional.one_hot(indices, z.shape[-1]).to(z.dtype)
            y_sel = pi
        elif self.unique_anchors:
            logits = z
            if gumbel_noise:
                logits = z + sample_gumbel(z.shape, generator=generator, dtype=z.dtype)
            y_sel, pi, y_hard, indices = unique_select(logits, tau)
        else:
            y_sel, pi, y_hard, indices = ste_select(
                z, tau, gumbel_noise=gumbel_noise, generator=generator)

        flat_trajs = self.bank_trajectories.flatten(1)
        e_ret = y_sel @ self.bank_embeddings
        traj_feats = y_sel @ flat_trajs
        anchor_tokens = q_adapt + self.emb_mlp(e_ret) + self.traj_mlp(traj_feats)
        if self.mode == "soft":
            selected = traj_feats.unflatten(-1, (self.bank_trajectories.shape[1], 2))
        else:
            selected = self.bank_trajectories[indices]

        report = {m: _top_elements(attn_weights[m]) for m in MODALITIES}
        return RetrievalOutput(
            q_base=q_base,
            q_adapt=q_adapt,
            routing_weights=routing,
            micro_gates=micro_gates,
            logits=z,
            pi=pi,
            y_hard=y_hard,
            y_st=y_sel,
            anchor_tokens=anchor_tokens,
            selected_trajectories=selected,
            selected_indices=indices,
            attention_top=report,
            zero_norm_queries=degenerate,
        )
