"""Training objectives: WTA kinematic loss, endpoint loss, diversity loss.

The motion loss is winner-takes-all: only the mode with the lowest cumulative
displacement receives regression gradients (bivariate-Gaussian NLL on
position, Huber on speed, cosine penalty on heading) while a cross-entropy
term sharpens the confidence distribution toward that winner.  The endpoint
loss soft-min-weights the refined anchor endpoints; the diversity loss
penalizes the Gram matrix of the normalized adapted queries for deviating
from identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import NumericError
from .layers import first_argmax
from .scenes import AGENT_TYPES

_TYPE_WEIGHT_DEFAULT = {t: 1.0 for t in AGENT_TYPES}


def _type_weights(value) -> dict:
    if isinstance(value, dict):
        return {t: float(value.get(t, 1.0)) for t in AGENT_TYPES}
    return {t: float(value) for t in AGENT_TYPES}


@dataclass
class LossConfig:
    lambda_motion: float = 1.0
    lambda_div: float = 0.1
    w_pos: dict = field(default_factory=lambda: dict(_TYPE_WEIGHT_DEFAULT))
    w_vel: dict = field(default_factory=lambda: {t: 0.5 for t in AGENT_TYPES})
    w_yaw: dict = field(default_factory=lambda: {t: 0.5 for t in AGENT_TYPES})
    w_conf: dict = field(default_factory=lambda: dict(_TYPE_WEIGHT_DEFAULT))
    endpoint_weight: float = 0.1
    tau_endpoint: float = 1.0
    huber_delta: float = 1.0
    entropy_weight: float = 0.0
    aux_neighbor_weight: float = 0.0

    def __post_init__(self):
        self.w_pos = _type_weights(self.w_pos)
        self.w_vel = _type_weights(self.w_vel)
        self.w_yaw = _type_weights(self.w_yaw)
        self.w_conf = _type_weights(self.w_conf)
        self.validate()

    def validate(self) -> None:
        for name in ("lambda_motion", "lambda_div", "endpoint_weight",
                     "entropy_weight", "aux_neighbor_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for table in (self.w_pos, self.w_vel, self.w_yaw, self.w_conf):
            if any(v < 0 for v in table.values()):
                raise ValueError("per-type loss weights must be >= 0")
        if self.tau_endpoint <= 0:
            raise ValueError("tau_endpoint must be > 0")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be > 0")

    def weight_tensor(self, name: str, dtype, device=None) -> torch.Tensor:
        table = getattr(self, name)
        return torch.tensor([table[t] for t in AGENT_TYPES], dtype=dtype, device=device)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    motion: torch.Tensor
    nll: torch.Tensor
    vel: torch.Tensor
    yaw: torch.Tensor
    ce: torch.Tensor
    endpoint: torch.Tensor
    diversity: torch.Tensor
    entropy: torch.Tensor
    aux_neighbor: torch.Tensor
    winner: torch.Tensor

    def scalars(self) -> dict:
        out = {}
        for name in ("total", "motion", "nll", "vel", "yaw", "ce", "endpoint",
                     "diversity", "entropy", "aux_neighbor"):
            out[name] = float(getattr(self, name))
        return out


def _huber(x: torch.Tensor, delta: float) -> torch.Tensor:
    return F.huber_loss(x, torch.zeros_like(x), delta=delta, reduction="none")


def gaussian_nll(kinematics, gt_xy) -> torch.Tensor:
    """Per-step bivariate-Gaussian NLL, averaged over time.

    ``kinematics`` [..., T_f, 7] carries (mu_x, mu_y, log_sx, log_sy, rho_raw,
    v, yaw); the correlation is squashed by 0.99*tanh.  Equality with
    log(2*pi*sx*sy*sqrt(1-rho^2)) holds exactly when mu == y.
    """
    mu = kinematics[..., :2]
    sx = kinematics[..., 2].exp()
    sy = kinematics[..., 3].exp()
    rho = 0.99 * torch.tanh(kinematics[..., 4])
    dx = (mu[..., 0] - gt_xy[..., 0]) / sx
    dy = (mu[..., 1] - gt_xy[..., 1]) / sy
    one_m_rho2 = 1.0 - rho * rho
    log_det = torch.log(2.0 * math.pi * sx * sy * one_m_rho2.sqrt())
    quad = (dx * dx - 2.0 * rho * dx * dy + dy * dy) / (2.0 * one_m_rho2)
    return (log_det + quad).mean(dim=-1)


def wta_motion_parts(kinematics, confidences, gt_future, agent_type_idx=None,
                     winner=None, cfg: LossConfig | None = None) -> dict:
    """Per-sample WTA components; ``winner`` may be pinned (gradient checks)."""
    if cfg is None:
        cfg = LossConfig()
    squeeze = kinematics.dim() == 3
    if squeeze:
        kinematics = kinematics[None]
        confidences = confidences[None]
        gt_future = gt_future[None]
        winner = None if winner is None else torch.as_tensor([winner])
    if not torch.isfinite(gt_future).all():
        raise ValueError("ground-truth future contains non-finite values")
    s, k = kinematics.shape[:2]
    if agent_type_idx is None:
        agent_type_idx = torch.zeros(s, dtype=torch.long, device=kinematics.device)

    gt_xy = gt_future[..., :2]
    if winner is None:
        disp = (kinematics[..., :2] - gt_xy[:, None]).norm(dim=-1).sum(dim=-1)
        winner = first_argmax(-disp, dim=-1)
    winner = winner.to(torch.long)

    kin_w = torch.gather(
        kinematics, 1,
        winner[:, None, None, None].expand(s, 1, *kinematics.shape[-2:])).squeeze(1)
    conf_w = torch.gather(confidences, 1, winner[:, None]).squeeze(1)

    nll = gaussian_nll(kin_w, gt_xy)
    gt_speed = gt_future[..., 3:5].norm(dim=-1)
    vel = _huber(kin_w[..., 5] - gt_speed, delta=1.0).mean(dim=-1)
    yaw = (1.0 - torch.cos(kin_w[..., 6] - gt_future[..., 2])).mean(dim=-1)
    ce = -torch.log(conf_w.clamp_min(1e-12))

    dtype, device = kinematics.dtype, kinematics.device
    w_pos = cfg.weight_tensor("w_pos", dtype, device)[agent_type_idx]
    w_vel = cfg.weight_tensor("w_vel", dtype, device)[agent_type_idx]
    w_yaw = cfg.weight_tensor("w_yaw", dtype, device)[agent_type_idx]
    w_conf = cfg.weight_tensor("w_conf", dtype, device)[agent_type_idx]
    motion = w_pos * nll + w_vel * vel + w_yaw * yaw + w_conf * ce
    parts = {"motion": motion.mean(), "nll": nll.mean(), "vel": vel.mean(),
             "yaw": yaw.mean(), "ce": ce.mean(),
             "winner": winner[0] if squeeze else winner}
    return parts


def wta_motion_loss(prediction, gt_future, cfg: LossConfig | None = None,
                    agent_type_idx=None, winner=None):
    """Weighted WTA motion loss; returns (scalar, winner index/indices)."""
    parts = wta_motion_parts(prediction.kinematics, prediction.confidences,
                             gt_future, agent_type_idx, winner, cfg)
    return parts["motion"], parts["winner"]


def endpoint_loss(anchor_endpoints, offsets, gt_endpoint,
                  cfg: LossConfig | None = None) -> torch.Tensor:
    """Soft-min weighted Huber over refined anchor endpoints."""
    if cfg is None:
        cfg = LossConfig()
    refined = anchor_endpoints + offsets
    dist = (refined - gt_endpoint.unsqueeze(-2)).norm(dim=-1)
    weights = torch.softmax(-dist / cfg.tau_endpoint, dim=-1)
    per_sample = (weights * _huber(dist, cfg.huber_delta)).sum(dim=-1)
    return per_sample.mean()


def diversity_loss(q_adapt, lambda_div: float) -> torch.Tensor:
    """lambda * ||Q_hat Q_hat^T - I||_F^2 on row-normalized adapted queries.

    Zero rows are epsilon-guarded; row rescaling cannot change the result.
    """
    if q_adapt.shape[-2] < 1:
        raise ValueError("need at least one query")
    q_hat = q_adapt / q_adapt.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    gram = q_hat @ q_hat.transpose(-1, -2)
    eye = torch.eye(q_adapt.shape[-2], dtype=q_adapt.dtype, device=q_adapt.device)
    per_sample = ((gram - eye) ** 2).sum(dim=(-1, -2))
    return lambda_div * per_sample.mean()


def masked_neighbor_loss(predictions, gt_futures, neighbor_mask,
                         delta: float = 1.0) -> torch.Tensor:
    """Huber on dense neighbor trajectories, restricted to valid agents."""
    err = (predictions - gt_futures).norm(dim=-1)
    loss = _huber(err, delta)
    mask = neighbor_mask.unsqueeze(-1).to(loss.dtype)
    total = (loss * mask).sum()
    count = mask.expand_as(loss).sum()
    return total / count.clamp_min(1.0)


def total_loss(parts: dict, cfg: LossConfig) -> LossBreakdown:
    """Combine components into the training objective; aborts on non-finite parts."""
    for name in ("motion", "endpoint", "diversity"):
        if name not in parts:
            raise ValueError(f"missing loss component {name!r}")
    zero = torch.zeros_like(parts["motion"])

    def get(name):
        return parts.get(name, zero)

    for name in ("motion", "nll", "vel", "yaw", "ce", "endpoint", "diversity",
                 "entropy", "aux_neighbor"):
        value = get(name)
        if not torch.isfinite(value).all():
            raise NumericError(f"loss component {name!r} is non-finite")
    total = cfg.lambda_motion * get("motion") + cfg.endpoint_weight * get("endpoint") \
        + get("diversity")
    if cfg.entropy_weight != 0.0:
        total = total - cfg.entropy_weight * get("entropy")
    if cfg.aux_neighbor_weight != 0.0:
        total = total + cfg.aux_neighbor_weight * get("aux_neighbor")
    return LossBreakdown(
        total=total, motion=get("motion"), nll=get("nll"), vel=get("vel"),
        yaw=get("yaw"), ce=get("ce"), endpoint=get("endpoint"),
        diversity=get("diversity"), entropy=get("entropy"),
        aux_neighbor=get("aux_neighbor"),
        winner=parts.get("winner", torch.zeros((), dtype=torch.long)),
    )


def compute_losses(output, batch, cfg: LossConfig) -> LossBreakdown:
    """Assemble every objective for one forward pass of the forecaster."""
    parts = wta_motion_parts(
        output.prediction.kinematics, output.prediction.confidences,
        batch.target_future, batch.agent_type_idx, cfg=cfg)
    parts["endpoint"] = endpoint_loss(
        output.prediction.anchor_endpoints, output.prediction.offsets,
        batch.target_future[:, -1, :2], cfg)
    parts["diversity"] = diversity_loss(output.retrieval.q_adapt, cfg.lambda_div)
    if output.pgqa is not None:
        parts["entropy"] = output.pgqa.entropy.mean()
    if output.neighbor_predictions is not None:
        parts["aux_neighbor"] = masked_neighbor_loss(
            output.neighbor_predictions, batch.neighbor_futures, batch.neighbor_mask)
    return total_loss(parts, cfg)
