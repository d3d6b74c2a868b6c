"""Displacement metrics and the constant-velocity reference predictor."""

from __future__ import annotations

import numpy as np

from .scenes import DT

MISS_THRESHOLD_M = 2.0


def displacement_metrics(positions, confidences, gt, ks=(1, 6)) -> dict:
    """minADE/minFDE over the top-k-confidence modes, miss rate, brier-minFDE.

    ``positions`` [K, T_f, 2]; ``confidences`` [K]; ``gt`` [T_f, 2].  Miss
    rate uses the best final displacement among the top-min(6, K) modes
    against a 2 m threshold; brier adds the squared confidence shortfall of
    the mode that attains the minimum final displacement.
    """
    positions = np.asarray(positions, dtype=np.float64)
    confidences = np.asarray(confidences, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    k_total = positions.shape[0]
    if max(ks) > k_total:
        raise ValueError(f"requested top-{max(ks)} of only {k_total} modes")
    order = np.argsort(-confidences, kind="stable")
    ade = np.linalg.norm(positions - gt, axis=2).mean(axis=1)
    fde = np.linalg.norm(positions[:, -1] - gt[-1], axis=1)

    out = {}
    for k in ks:
        top = order[:k]
        out[f"minADE{k}"] = float(ade[top].min())
        out[f"minFDE{k}"] = float(fde[top].min())
    k_mr = min(6, k_total)
    top = order[:k_mr]
    best_fde_idx = top[int(np.argmin(fde[top]))]
    out["MR"] = float(fde[top].min() > MISS_THRESHOLD_M)
    out["brier_minFDE"] = float(fde[top].min() + (1.0 - confidences[best_fde_idx]) ** 2)
    return out


def batch_displacement_metrics(positions, confidences, gts, ks=(1, 6)) -> dict:
    """Mean of per-sample metrics over a batch ([S, K, T_f, 2] etc.)."""
    rows = [displacement_metrics(p, c, g, ks)
            for p, c, g in zip(positions, confidences, gts)]
    keys = rows[0].keys()
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def constant_velocity_prediction(target_history, t_future: int) -> np.ndarray:
    """Propagate the last observed velocity: the standard trivial baseline."""
    hist = np.asarray(target_history, dtype=np.float64)
    valid = np.nonzero(hist[:, 5] > 0.5)[0]
    last = hist[valid[-1]] if len(valid) else hist[-1]
    pos, vel = last[0:2], last[3:5]
    steps = np.arange(1, t_future + 1)[:, None] * DT
    return pos + steps * vel


def anchor_endpoint_distance(anchor_endpoints, gt_endpoint) -> float:
    """Mean distance from selected anchor endpoints to the true endpoint."""
    anchor_endpoints = np.asarray(anchor_endpoints, dtype=np.float64)
    gt_endpoint = np.asarray(gt_endpoint, dtype=np.float64)
    return float(np.linalg.norm(anchor_endpoints - gt_endpoint, axis=-1).mean())
