"""Per-task BCE plus the sequential-dependence penalty between adjacent tasks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx


def dependence_label(o_prev, o_curr):
    """Label of P(T_i = 0, T_{i-1} = 1 | x): o_prev - o_curr on funnel-valid pairs."""
    o_prev, o_curr = np.asarray(o_prev), np.asarray(o_curr)
    if np.any(o_curr > o_prev):
        raise ValueError("funnel violation: current task fired without the previous one")
    out = o_prev - o_curr
    return out if out.ndim else int(out)


@dataclass
class LossWeights:
    task: Sequence[float] = ()
    dep: Sequence[float] = ()

    @classmethod
    def default(cls, num_tasks: int, sigma: float = 1.0) -> "LossWeights":
        return cls([1.0] * num_tasks, [sigma] * (num_tasks - 1))

    def resolved(self, num_tasks: int) -> tuple[list[float], list[float]]:
        w = list(self.task) or [1.0] * num_tasks
        s = list(self.dep) or [1.0] * (num_tasks - 1)
        if len(w) != num_tasks or len(s) != num_tasks - 1:
            raise ValueError(f"need {num_tasks} task weights and {num_tasks - 1} dependence weights")
        if min(w + s, default=0.0) < 0:
            raise ValueError("loss weights must be nonnegative")
        return w, s


@dataclass
class LossReport:
    total: nx.Tensor
    main: list[nx.Tensor] = field(default_factory=list)
    dep: list[nx.Tensor] = field(default_factory=list)

    def values(self) -> dict[str, float]:
        out = {"total": self.total.item()}
        out.update({f"main_{i + 1}": t.item() for i, t in enumerate(self.main)})
        out.update({f"dep_{i + 2}": t.item() for i, t in enumerate(self.dep)})
        return out


def task_bce(f: nx.Tensor, labels: np.ndarray, task: int) -> nx.Tensor:
    return nx.mean(nx.bce(f[:, task], labels[:, task]))


def main_task_loss(f: nx.Tensor, labels: np.ndarray, w: Sequence[float]) -> nx.Tensor:
    labels = np.asarray(labels, dtype=np.float64)
    terms = [nx.mul(task_bce(f, labels, i), wi) for i, wi in enumerate(w)]
    total = terms[0]
    for t in terms[1:]:
        total = nx.add(total, t)
    return total


def dependence_loss(f_prev: nx.Tensor, f_curr: nx.Tensor, o_prev, o_curr) -> nx.Tensor:
    """Batch mean of ((f_prev - f_curr) - (o_prev - o_curr))^2."""
    target = np.asarray(o_prev, dtype=np.float64) - np.asarray(o_curr, dtype=np.float64)
    if f_prev.shape != f_curr.shape or f_prev.shape != target.shape:
        raise ValueError(f"misaligned batch: {f_prev.shape}, {f_curr.shape}, {target.shape}")
    return nx.mean(nx.square(nx.sub(nx.sub(f_prev, f_curr), target)))


def total_loss(f: nx.Tensor, labels: np.ndarray, weights: LossWeights | None = None) -> LossReport:
    N = f.shape[1]
    if N < 1:
        raise ValueError("need at least one task")
    w, s = (weights or LossWeights()).resolved(N)
    labels = np.asarray(labels, dtype=np.float64)
    main = [task_bce(f, labels, i) for i in range(N)]
    dep = [dependence_loss(f[:, i - 1], f[:, i], labels[:, i - 1], labels[:, i]) for i in range(1, N)]
    total = None
    for coef, term in zip(w + s, main + dep):
        scaled = nx.mul(term, coef)
        total = scaled if total is None else nx.add(total, scaled)
    return LossReport(total, main, dep)
