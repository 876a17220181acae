"""Adaptive sample-wise representation generator.

A per-sample gate ``z`` over K inducing points is produced by an affine map of
the flattened field embeddings followed by an annealed cubic smooth step.  The
gated inducing points then attend over the F field embeddings, so each score
matrix is K x F rather than F x F.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .layers import glorot, init_mlp, mlp

GAMMA_START = 10.0
GAMMA_DECAY = 2e-4
GAMMA_FLOOR = 1e-3


def gamma_at(step: int) -> float:
    if step < 0:
        raise ValueError(f"step must be nonnegative, got {step}")
    return max(GAMMA_START - GAMMA_DECAY * step, GAMMA_FLOOR)


def f_d(z, gamma: float):
    """Plain-array version of the smooth step used by the selector."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    z = np.asarray(z, dtype=np.float64)
    half = gamma / 2.0
    cubic = -2.0 / gamma**3 * z**3 + 1.5 / gamma * z + 0.5
    out = np.where(z >= half, 1.0, np.where(z > -half, cubic, 0.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class AsrgConfig:
    num_fields: int
    d_f: int = 18
    num_inducing: int = 64
    heads: int = 2
    selector_hidden: tuple[int, ...] = ()
    # "asrg" or "self_attention" (ablation: no selector, full field self-attention)
    mode: str = "asrg"

    def __post_init__(self):
        if self.d_f % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d_f ({self.d_f})")
        if self.mode not in ("asrg", "self_attention"):
            raise ValueError(f"unknown ASRG mode {self.mode!r}")


def init_asrg(cfg: AsrgConfig, rng: np.random.Generator, prefix: str = "asrg") -> dict[str, nx.Tensor]:
    d, K = cfg.d_f, cfg.num_inducing
    p: dict[str, nx.Tensor] = {}
    if cfg.mode == "asrg":
        p.update(init_mlp(rng, [cfg.num_fields * d, *cfg.selector_hidden, K], f"{prefix}.sel"))
        p[f"{prefix}.inducing"] = glorot(rng, (K, d), K, d)
    else:
        p[f"{prefix}.wq"] = glorot(rng, (d, d), d, d)
    p[f"{prefix}.wk"] = glorot(rng, (d, d), d, d)
    p[f"{prefix}.wv"] = glorot(rng, (d, d), d, d)
    p[f"{prefix}.wo"] = glorot(rng, (d, d), d, d)
    p[f"{prefix}.ln.gain"] = nx.Tensor(np.ones(d), requires_grad=True)
    p[f"{prefix}.ln.bias"] = nx.Tensor(np.zeros(d), requires_grad=True)
    return p


def dynamic_selector(H: nx.Tensor, params: dict[str, nx.Tensor], step: int,
                     prefix: str = "asrg") -> nx.Tensor:
    """B x F x d_f embeddings -> B x K gate in [0, 1]."""
    if len(H.shape) != 3:
        raise ValueError(f"expected B x F x d_f embeddings, got shape {H.shape}")
    B = H.shape[0]
    x = nx.reshape(H, (B, H.shape[1] * H.shape[2]))
    expected = params[f"{prefix}.sel.w0"].shape[0]
    if x.shape[1] != expected:
        raise ValueError(f"selector expects {expected} flattened inputs, got {x.shape[1]}")
    return nx.smooth_step(mlp(x, params, f"{prefix}.sel"), gamma_at(step))


def _split_heads(x: nx.Tensor, heads: int) -> nx.Tensor:
    # (..., S, d) -> (..., heads, S, d/heads)
    *lead, S, d = x.shape
    x = nx.reshape(x, (*lead, S, heads, d // heads))
    n = len(lead)
    return nx.transpose(x, (*range(n), n + 1, n, n + 2))


def multihead_attention(query: nx.Tensor, source: nx.Tensor, wk: nx.Tensor, wv: nx.Tensor,
                        wo: nx.Tensor, heads: int) -> tuple[nx.Tensor, nx.Tensor]:
    """Attention of ``query`` rows over ``source`` rows.

    query: (B or 1) x Q x d, source: B x S x d.  The query is used as is (no
    query projection); keys and values are ``source @ wk`` and ``source @ wv``.
    Returns (output B x Q x d, weights B x heads x Q x S).
    """
    d = query.shape[-1]
    if source.shape[-1] != d or d % heads:
        raise ValueError(f"attention dims mismatch: query {query.shape}, source {source.shape}, heads {heads}")
    dh = d // heads
    q = _split_heads(query, heads)
    k = _split_heads(nx.matmul(source, wk), heads)
    v = _split_heads(nx.matmul(source, wv), heads)
    scores = nx.mul(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = nx.softmax(scores, axis=-1)
    o = nx.matmul(weights, v)  # B x m x Q x dh
    B, m, Q, _ = o.shape
    o = nx.reshape(nx.transpose(o, (0, 2, 1, 3)), (B, Q, d))
    return nx.matmul(o, wo), weights


def gated_queries(z: nx.Tensor, inducing: nx.Tensor) -> nx.Tensor:
    """Q_hat = I * z, the K-gate broadcast across each inducing row."""
    B, K = z.shape
    if inducing.shape[0] != K:
        raise ValueError(f"gate has {K} entries but there are {inducing.shape[0]} inducing points")
    return nx.mul(nx.reshape(z, (B, K, 1)), nx.reshape(inducing, (1, *inducing.shape)))


def inducing_attention(H: nx.Tensor, z: nx.Tensor, params: dict[str, nx.Tensor], heads: int,
                       prefix: str = "asrg", return_weights: bool = False):
    """Gated inducing points attend over field embeddings: B x K x d_f output."""
    if len(H.shape) != 3 or H.shape[0] != z.shape[0]:
        raise ValueError(f"shape mismatch: H {H.shape}, z {z.shape}")
    q_hat = gated_queries(z, params[f"{prefix}.inducing"])
    o, w = multihead_attention(q_hat, H, params[f"{prefix}.wk"], params[f"{prefix}.wv"],
                               params[f"{prefix}.wo"], heads)
    # residual on the queries: O is K x d_f, H is F x d_f
    y = nx.layer_norm(nx.add(q_hat, o), params[f"{prefix}.ln.gain"], params[f"{prefix}.ln.bias"])
    return (y, w) if return_weights else y


def self_attention_block(H: nx.Tensor, params: dict[str, nx.Tensor], heads: int,
                         prefix: str = "asrg", return_weights: bool = False):
    """Ablation stand-in for the ASRG: plain F x F field self-attention."""
    q = nx.matmul(H, params[f"{prefix}.wq"])
    o, w = multihead_attention(q, H, params[f"{prefix}.wk"], params[f"{prefix}.wv"],
                               params[f"{prefix}.wo"], heads)
    y = nx.layer_norm(nx.add(H, o), params[f"{prefix}.ln.gain"], params[f"{prefix}.ln.bias"])
    return (y, w) if return_weights else y


def asrg_forward(H: nx.Tensor, params: dict[str, nx.Tensor], cfg: AsrgConfig, step: int,
                 prefix: str = "asrg") -> dict[str, nx.Tensor | None]:
    if cfg.mode == "self_attention":
        y, w = self_attention_block(H, params, cfg.heads, prefix, return_weights=True)
        return {"z": None, "y": y, "weights": w}
    z = dynamic_selector(H, params, step, prefix)
    y, w = inducing_attention(H, z, params, cfg.heads, prefix, return_weights=True)
    return {"z": z, "y": y, "weights": w}


@dataclass
class SelectionStats:
    rates: np.ndarray
    counts: np.ndarray
    edges: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.rates.mean())

    @property
    def median(self) -> float:
        return float(np.median(self.rates))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_index", "rate"])
            for i, r in enumerate(self.rates):
                w.writerow([i, repr(float(r))])
            fh.write(f"# mean={self.mean:.6f} median={self.median:.6f}\n")


def selection_rate_stats(z, threshold: float = 0.5, bins: int = 20) -> SelectionStats:
    """Per-sample fraction of gate entries above ``threshold`` plus a histogram."""
    z = np.asarray(z.value if isinstance(z, nx.Tensor) else z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("selection_rate_stats needs a non-empty B x K gate batch")
    rates = (z > threshold).mean(axis=1)
    counts, edges = np.histogram(rates, bins=bins, range=(0.0, 1.0))
    return SelectionStats(rates, counts, edges)
