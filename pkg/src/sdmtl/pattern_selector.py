"""Per-task pattern selector stacked on the ASRG output, and the full APEM model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .asrg import AsrgConfig, asrg_forward, init_asrg
from .features import embed_lookup, init_embeddings
from .layers import glorot, init_mlp, mlp


def pattern_select(y: nx.Tensor, alpha: nx.Tensor, wk: nx.Tensor, wv: nx.Tensor, wo: nx.Tensor,
                   heads: int) -> nx.Tensor:
    """One task indicator (1 x d_f) reads the B x K x d_f shared rows -> B x d_f.

    Same multi-head attention as ``multihead_attention(alpha, y, ...)`` but
    reassociated for a single query: scores use (alpha_h Wk_h^T) y^T and the
    readout uses (weights_h y) Wv_h, so the B x K x d_f keys and values are
    never materialised.
    """
    d = y.shape[-1]
    if alpha.shape != (1, d) or d % heads:
        raise ValueError(f"indicator must be 1 x {d} with heads dividing d, got {alpha.shape}")
    dh = d // heads
    a = nx.reshape(alpha, (heads, 1, dh))
    wk_heads = nx.transpose(nx.reshape(wk, (d, heads, dh)), (1, 2, 0))  # heads x dh x d
    key_queries = nx.reshape(nx.matmul(a, wk_heads), (heads, d))
    scores = nx.mul(nx.matmul(y, nx.transpose(key_queries, (1, 0))), 1.0 / math.sqrt(dh))  # B x K x heads
    weights = nx.softmax(nx.transpose(scores, (0, 2, 1)), axis=-1)  # B x heads x K
    ctx = nx.matmul(weights, y)  # B x heads x d
    outs = [nx.matmul(ctx[:, h, :], wv[:, h * dh:(h + 1) * dh]) for h in range(heads)]
    return nx.matmul(nx.concat(outs, axis=-1), wo)


def ps_param(params: dict[str, nx.Tensor], layer: int, task: int, name: str) -> nx.Tensor:
    key = f"ps.{layer}.{task}.{name}"
    return params[key] if key in params else params[f"ps.{layer}.{name}"]


def ps_stack(y: nx.Tensor, params: dict[str, nx.Tensor], num_tasks: int, layers: int,
             heads: int) -> list[nx.Tensor]:
    """T_i^1 = LN(F_i^1); T_i^k = LN(T_i^{k-1} + F_i^k).  Returns T_i^L per task."""
    if layers < 1:
        raise ValueError(f"need at least one pattern-selector layer, got {layers}")
    out = []
    for i in range(num_tasks):
        t = None
        for k in range(layers):
            f = pattern_select(
                y,
                params[f"ps.{k}.{i}.alpha"],
                ps_param(params, k, i, "wk"),
                ps_param(params, k, i, "wv"),
                ps_param(params, k, i, "wo"),
                heads,
            )
            t = nx.layer_norm(f if t is None else nx.add(t, f),
                              params[f"ps.{k}.{i}.ln.gain"], params[f"ps.{k}.{i}.ln.bias"])
        out.append(t)
    return out


@dataclass(frozen=True)
class ApemConfig:
    vocab_sizes: tuple[int, ...]
    num_tasks: int = 2
    d_f: int = 18
    heads: int = 2
    num_inducing: int = 64
    layers: int = 4
    tower_hidden: int = 64
    selector_hidden: tuple[int, ...] = ()
    shared_ps_projections: bool = False
    # ablation switches
    asrg_mode: str = "asrg"
    use_ps: bool = True

    @property
    def asrg(self) -> AsrgConfig:
        return AsrgConfig(len(self.vocab_sizes), self.d_f, self.num_inducing, self.heads,
                          tuple(self.selector_hidden), self.asrg_mode)


def init_pattern_selector(cfg: ApemConfig, rng: np.random.Generator) -> dict[str, nx.Tensor]:
    d = cfg.d_f
    bound = math.sqrt(6.0 / (1 + d))
    p = {}
    for k in range(cfg.layers):
        if cfg.shared_ps_projections:
            for name in ("wk", "wv", "wo"):
                p[f"ps.{k}.{name}"] = glorot(rng, (d, d), d, d)
        for i in range(cfg.num_tasks):
            p[f"ps.{k}.{i}.alpha"] = nx.Tensor(rng.uniform(-bound, bound, size=(1, d)), requires_grad=True)
            if not cfg.shared_ps_projections:
                for name in ("wk", "wv", "wo"):
                    p[f"ps.{k}.{i}.{name}"] = glorot(rng, (d, d), d, d)
            p[f"ps.{k}.{i}.ln.gain"] = nx.Tensor(np.ones(d), requires_grad=True)
            p[f"ps.{k}.{i}.ln.bias"] = nx.Tensor(np.zeros(d), requires_grad=True)
    return p


class ApemModel:
    """Embeddings -> ASRG -> pattern selector -> per-task towers."""

    name = "apem"

    def __init__(self, cfg: ApemConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params: dict[str, nx.Tensor] = {}
        self.params.update(init_embeddings(cfg.vocab_sizes, cfg.d_f, rng))
        self.params.update(init_asrg(cfg.asrg, rng))
        if cfg.use_ps:
            self.params.update(init_pattern_selector(cfg, rng))
        for i in range(cfg.num_tasks):
            self.params.update(init_mlp(rng, [cfg.d_f, cfg.tower_hidden, 1], f"tower.{i}"))

    @property
    def tables(self) -> list[nx.Tensor]:
        return [self.params[f"emb.{f}"] for f in range(len(self.cfg.vocab_sizes))]

    def shared(self, rows: np.ndarray, step: int) -> dict:
        """Embedding and ASRG activations only (nothing task specific)."""
        H = embed_lookup(rows, self.tables)
        out = asrg_forward(H, self.params, self.cfg.asrg, step)
        out["H"] = H
        return out

    def forward_detail(self, rows: np.ndarray, step: int) -> dict:
        out = self.shared(rows, step)
        y = out["y"]
        if self.cfg.use_ps:
            T = ps_stack(y, self.params, self.cfg.num_tasks, self.cfg.layers, self.cfg.heads)
        else:
            pooled = nx.mean(y, axis=1)
            T = [pooled] * self.cfg.num_tasks
        logits = [mlp(t, self.params, f"tower.{i}") for i, t in enumerate(T)]
        out["T"] = T
        out["probs"] = nx.sigmoid(nx.concat(logits, axis=1))
        return out

    def forward(self, rows: np.ndarray, step: int) -> nx.Tensor:
        return self.forward_detail(rows, step)["probs"]
