"""Comparison models: independent single-task MLPs, Shared-Bottom and MMoE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .features import embed_lookup, init_embeddings
from .layers import init_mlp, mlp


@dataclass(frozen=True)
class BaselineConfig:
    vocab_sizes: tuple[int, ...]
    num_tasks: int = 2
    d_f: int = 18
    single_hidden: tuple[int, ...] = (256, 128, 64)
    bottom_hidden: tuple[int, ...] = (128,)
    num_experts: int = 4
    expert_dim: int = 32
    tower_hidden: int = 64

    @property
    def flat_dim(self) -> int:
        return len(self.vocab_sizes) * self.d_f


def _flat_embeddings(rows: np.ndarray, params: dict[str, nx.Tensor], prefix: str, num_fields: int) -> nx.Tensor:
    H = embed_lookup(rows, [params[f"{prefix}.{f}"] for f in range(num_fields)])
    return nx.reshape(H, (H.shape[0], H.shape[1] * H.shape[2]))


class SingleTaskModel:
    """One MLP with its own embeddings per task; no parameter is shared."""

    name = "single"

    def __init__(self, cfg: BaselineConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params: dict[str, nx.Tensor] = {}
        for i in range(cfg.num_tasks):
            self.params.update(init_embeddings(cfg.vocab_sizes, cfg.d_f, rng, prefix=f"task{i}.emb"))
            self.params.update(init_mlp(rng, [cfg.flat_dim, *cfg.single_hidden, 1], f"task{i}.mlp"))

    def forward(self, rows: np.ndarray, step: int = 0) -> nx.Tensor:
        F = len(self.cfg.vocab_sizes)
        logits = [mlp(_flat_embeddings(rows, self.params, f"task{i}.emb", F), self.params, f"task{i}.mlp")
                  for i in range(self.cfg.num_tasks)]
        return nx.sigmoid(nx.concat(logits, axis=1))


class SharedBottomModel:
    name = "shared_bottom"

    def __init__(self, cfg: BaselineConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params = init_embeddings(cfg.vocab_sizes, cfg.d_f, rng)
        self.params.update(init_mlp(rng, [cfg.flat_dim, *cfg.bottom_hidden], "bottom"))
        for i in range(cfg.num_tasks):
            self.params.update(init_mlp(rng, [cfg.bottom_hidden[-1], cfg.tower_hidden, 1], f"tower.{i}"))

    def forward(self, rows: np.ndarray, step: int = 0) -> nx.Tensor:
        x = _flat_embeddings(rows, self.params, "emb", len(self.cfg.vocab_sizes))
        h = mlp(x, self.params, "bottom", final_act=True)
        logits = [mlp(h, self.params, f"tower.{i}") for i in range(self.cfg.num_tasks)]
        return nx.sigmoid(nx.concat(logits, axis=1))


class MmoeModel:
    name = "mmoe"

    def __init__(self, cfg: BaselineConfig, rng: np.random.Generator):
        if cfg.num_experts < 1:
            raise ValueError(f"MMoE needs at least one expert, got {cfg.num_experts}")
        self.cfg = cfg
        self.params = init_embeddings(cfg.vocab_sizes, cfg.d_f, rng)
        for e in range(cfg.num_experts):
            self.params.update(init_mlp(rng, [cfg.flat_dim, cfg.expert_dim], f"expert.{e}"))
        for i in range(cfg.num_tasks):
            self.params.update(init_mlp(rng, [cfg.flat_dim, cfg.num_experts], f"gate.{i}"))
            self.params.update(init_mlp(rng, [cfg.expert_dim, cfg.tower_hidden, 1], f"tower.{i}"))

    def gates(self, x: nx.Tensor) -> nx.Tensor:
        """B x N x E softmax gate weights."""
        return nx.stack([nx.softmax(mlp(x, self.params, f"gate.{i}")) for i in range(self.cfg.num_tasks)], axis=1)

    def forward_detail(self, rows: np.ndarray, step: int = 0) -> dict:
        x = _flat_embeddings(rows, self.params, "emb", len(self.cfg.vocab_sizes))
        experts = nx.stack([mlp(x, self.params, f"expert.{e}", final_act=True)
                            for e in range(self.cfg.num_experts)], axis=1)  # B x E x d_e
        gates = self.gates(x)
        mixed = nx.matmul(gates, experts)  # B x N x d_e
        logits = [mlp(mixed[:, i, :], self.params, f"tower.{i}") for i in range(self.cfg.num_tasks)]
        return {"experts": experts, "gates": gates, "mixed": mixed,
                "probs": nx.sigmoid(nx.concat(logits, axis=1))}

    def forward(self, rows: np.ndarray, step: int = 0) -> nx.Tensor:
        return self.forward_detail(rows, step)["probs"]
