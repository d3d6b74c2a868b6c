"""The full forecaster: projection -> retrieval + encoding -> decoding -> heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .bank import MotionBank
from .decoder import Prediction, PredictionHeads, RefinementDecoder
from .encoder import DenseNeighborPredictor, EncodedScene, SceneEncoder
from .pgqa import PgqaOutput, pgqa
from .projection import SceneProjector
from .retrieval import AnchorRetrievalLayer, RetrievalOutput


@dataclass
class ModelConfig:
    d_model: int = 32
    n_queries: int = 6
    n_modes: int = 6
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 3
    tau_g: float = 1.0
    retrieval_mode: str = "st"
    unique_anchors: bool = False
    gate_target: bool = True
    gate_neighbors: bool = True
    gate_map: bool = False
    query_seed: int = 0
    with_dense_head: bool = True

    def validate(self) -> None:
        if self.n_queries < self.n_modes:
            raise ValueError("n_queries must be >= n_modes")
        if self.retrieval_mode not in ("st", "soft"):
            raise ValueError(f"unknown retrieval mode {self.retrieval_mode!r}")

    @property
    def gates(self) -> tuple:
        return (self.gate_target, self.gate_neighbors, self.gate_map)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForecastOutput:
    retrieval: RetrievalOutput
    encoded: EncodedScene
    pgqa: PgqaOutput | None
    prediction: Prediction
    neighbor_predictions: torch.Tensor | None


class Forecaster(nn.Module):
    """End-to-end retrieval-grounded trajectory forecaster."""

    def __init__(self, cfg: ModelConfig, bank: MotionBank):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.bank_checksum = bank.checksum()
        self.projector = SceneProjector(cfg.d_model)
        self.retrieval = AnchorRetrievalLayer(
            cfg.d_model, cfg.n_queries,
            torch.as_tensor(bank.embeddings, dtype=torch.float32),
            torch.as_tensor(bank.trajectories, dtype=torch.float32),
            query_seed=cfg.query_seed, mode=cfg.retrieval_mode,
            unique_anchors=cfg.unique_anchors)
        self.encoder = SceneEncoder(cfg.d_model, cfg.n_heads, cfg.enc_layers)
        self.decoder = RefinementDecoder(cfg.d_model, cfg.n_heads, cfg.dec_layers)
        t_future = bank.trajectories.shape[1]
        self.heads = PredictionHeads(cfg.d_model, t_future)
        # constructed last so builds with and without it share every other init
        self.dense_predictor = (
            DenseNeighborPredictor(cfg.d_model, t_future) if cfg.with_dense_head else None)

    def forward(self, batch, tau: float = 1.0, gumbel_noise: bool = False,
                generator=None, conf_temperature: float | None = None) -> ForecastOutput:
        tokens = self.projector(batch)
        retrieval = self.retrieval(
            tokens["target_dense"], tokens["target_step_mask"],
            tokens["neighbor_tokens"], tokens["neighbor_mask"],
            tokens["lane_tokens"], tokens["lane_mask"],
            tau=tau, gumbel_noise=gumbel_noise, generator=generator,
            gates=self.cfg.gates)
        encoded = self.encoder(
            tokens["target_token"], tokens["neighbor_tokens"], tokens["neighbor_mask"],
            tokens["lane_tokens"], tokens["lane_mask"],
            tokens["light_tokens"], tokens["light_mask"])

        grouped = None
        queries = retrieval.anchor_tokens
        if self.cfg.n_queries > self.cfg.n_modes:
            anchor_scores = retrieval.pi.max(dim=-1).values
            grouped = pgqa(retrieval.anchor_tokens, retrieval.selected_trajectories,
                           self.cfg.n_modes, self.cfg.tau_g, scores=anchor_scores)
            queries = grouped.grouped_queries

        refined = self.decoder(queries, encoded.focal_token,
                               encoded.env_tokens, encoded.env_mask)
        prediction = self.heads(
            refined, retrieval.anchor_tokens,
            retrieval.selected_trajectories[..., -1, :],
            conf_temperature=conf_temperature)
        neighbor_preds = (self.dense_predictor(encoded.neighbor_tokens)
                          if self.dense_predictor is not None else None)
        return ForecastOutput(
            retrieval=retrieval, encoded=encoded, pgqa=grouped,
            prediction=prediction, neighbor_predictions=neighbor_preds)


def build_model(cfg: ModelConfig, bank: MotionBank, seed: int = 0,
                dtype=torch.float32) -> Forecaster:
    """Seeded construction so identical (cfg, bank, seed) gives identical weights."""
    torch.manual_seed(int(seed))
    model = Forecaster(cfg, bank)
    return model.to(dtype)
