"""Exact enumeration checks of the entire-space / local-space reweighting identities.

For adjacent tasks (T_prev, T_curr) over a finite input support, the entire
space D is the joint over all x and the local space C is D conditioned on
T_prev = 1.  Both identities say that an expected loss over D equals the
expectation over C of the same loss times

    P_D(T_prev = 1) * P_D(t | x) / P_D(t, T_prev = 1 | x)

where t is the current label (first identity) or the label difference
T_prev - T_curr (second identity).  Everything here is a finite sum, computed
with ``math.fsum`` so that 1e-10 agreement is meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

Loss = Callable[[float, float], float]
MAX_SUPPORT = 16


def squared_loss(f: float, t: float) -> float:
    return (f - t) ** 2


def bce_loss(f: float, t: float) -> float:
    f = min(max(f, 1e-12), 1.0 - 1e-12)
    return -(t * math.log(f) + (1.0 - t) * math.log1p(-f))


LOSSES: dict[str, Loss] = {"squared": squared_loss, "bce": bce_loss}


class DegenerateJointError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteJoint:
    px: np.ndarray  # n
    cond: np.ndarray  # n x 2 x 2, cond[x, a, b] = P(T_prev = a, T_curr = b | x)

    def __post_init__(self):
        px, cond = np.asarray(self.px, float), np.asarray(self.cond, float)
        if px.ndim != 1 or cond.shape != (px.size, 2, 2):
            raise ValueError(f"bad shapes: px {px.shape}, cond {cond.shape}")
        if px.size > MAX_SUPPORT:
            raise ValueError(f"support size {px.size} exceeds {MAX_SUPPORT}")
        if np.any(px < 0) or np.any(cond < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(math.fsum(px) - 1.0) > 1e-14:
            raise ValueError("marginal over x must sum to 1")
        if np.any(np.abs(cond.reshape(-1, 4).sum(axis=1) - 1.0) > 1e-14):
            raise ValueError("each conditional table must sum to 1")
        if np.any(cond[:, 0, 1] != 0.0):
            raise ValueError("funnel constraint: P(T_curr = 1, T_prev = 0 | x) must be 0")
        if self.p_prev() <= 0.0:
            raise DegenerateJointError("local space is empty: P(T_prev = 1) = 0")

    @property
    def n(self) -> int:
        return self.px.size

    def p_prev(self) -> float:
        """P_D(T_prev = 1)."""
        return math.fsum(self.px * self.cond[:, 1, :].sum(axis=1))

    def p_curr_given_x(self, t: int) -> np.ndarray:
        return self.cond[:, 0, t] + self.cond[:, 1, t]

    def p_diff_given_x(self, delta: int) -> np.ndarray:
        """P_D(T_prev - T_curr = delta | x)."""
        out = np.zeros(self.n)
        for a in (0, 1):
            b = a - delta
            if b in (0, 1):
                out = out + self.cond[:, a, b]
        return out

    def local_diff_mass(self, delta: int) -> float:
        """P_C(T_prev - T_curr = delta); zero for delta = -1 by construction."""
        b = 1 - delta
        if b not in (0, 1):
            return 0.0
        return math.fsum(self.px * self.cond[:, 1, b]) / self.p_prev()


@dataclass(frozen=True)
class Predictor:
    f_prev: np.ndarray
    f_curr: np.ndarray


def joint_from_funnel(px, p_prev, p_step) -> DiscreteJoint:
    """Joint with P(T_prev = 1 | x) = p_prev and P(T_curr = 1 | T_prev = 1, x) = p_step."""
    px, p_prev, p_step = (np.atleast_1d(np.asarray(v, float)) for v in (px, p_prev, p_step))
    cond = np.zeros((px.size, 2, 2))
    cond[:, 0, 0] = 1.0 - p_prev
    cond[:, 1, 1] = p_prev * p_step
    cond[:, 1, 0] = p_prev - cond[:, 1, 1]
    return DiscreteJoint(px, cond)


def build_joint(seed: int | None = None, n: int | None = None, *, px=None, cond=None) -> DiscreteJoint:
    """Explicit joint from ``px``/``cond``, or a random one from ``seed``.

    Random mode draws x-marginals and 2x2 conditional tables from flat
    Dirichlets, zeroes the forbidden (T_prev = 0, T_curr = 1) cell and renormalises.
    """
    if px is not None or cond is not None:
        return DiscreteJoint(np.asarray(px, float), np.asarray(cond, float))
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, MAX_SUPPORT + 1)) if n is None else n
    if not 1 <= n <= MAX_SUPPORT:
        raise ValueError(f"support size must be in [1, {MAX_SUPPORT}]")
    px = rng.dirichlet(np.ones(n))
    px = px / math.fsum(px)
    cond = rng.dirichlet(np.ones(4), size=n).reshape(n, 2, 2)
    cond[:, 0, 1] = 0.0
    cond /= cond.reshape(n, 4).sum(axis=1)[:, None, None]
    return DiscreteJoint(px, cond)


def random_predictor(n: int, seed: int | None = None) -> Predictor:
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.01, 0.99, size=(2, n))
    return Predictor(np.maximum(a, b), np.minimum(a, b))


def expected_loss_D(joint: DiscreteJoint, predictor: Predictor, loss: Loss, task: str = "curr") -> float:
    """Exact E_D[L(f, t)] for task ``prev``, ``curr`` or the difference ``dep``."""
    terms = []
    for x in range(joint.n):
        if task == "prev":
            for t in (0, 1):
                terms.append(joint.px[x] * joint.cond[x, t, :].sum() * loss(predictor.f_prev[x], t))
        elif task == "curr":
            for t in (0, 1):
                terms.append(joint.px[x] * joint.p_curr_given_x(t)[x] * loss(predictor.f_curr[x], t))
        elif task == "dep":
            df = predictor.f_prev[x] - predictor.f_curr[x]
            for d in (-1, 0, 1):
                p = joint.p_diff_given_x(d)[x]
                if p > 0:
                    terms.append(joint.px[x] * p * loss(df, d))
        else:
            raise ValueError(f"unknown task {task!r}")
    return math.fsum(terms)


@dataclass(frozen=True)
class TheoremCheck:
    lhs: float
    rhs: float

    @property
    def diff(self) -> float:
        return abs(self.lhs - self.rhs)


def _weighted_local(joint: DiscreteJoint, cells: Iterable[tuple[int, float, float, float]]) -> float:
    """Sum over local-space cells (x, P_C(x, t), P_D(t | x), P_D(t, T_prev=1 | x) * loss)."""
    p1 = joint.p_prev()
    terms = []
    for x, pc, p_t, (p_joint, l) in cells:
        if p_joint == 0.0:
            # the cell carries no local-space mass; define its contribution as 0
            continue
        terms.append(pc * (p1 * p_t / p_joint) * l)
    return math.fsum(terms)


def verify_theorem1(joint: DiscreteJoint, predictor: Predictor, loss: Loss) -> TheoremCheck:
    """E_D[L(f_curr, T_curr)] versus its importance-weighted local-space form.

    The task-(i-1) term appears unchanged on both sides of the full identity,
    so only the current-task term is compared.
    """
    lhs = expected_loss_D(joint, predictor, loss, "curr")
    p1 = joint.p_prev()
    cells = []
    for x in range(joint.n):
        for t in (0, 1):
            p_joint = joint.cond[x, 1, t]
            pc = joint.px[x] * p_joint / p1
            cells.append((x, pc, joint.p_curr_given_x(t)[x], (p_joint, loss(predictor.f_curr[x], t))))
    return TheoremCheck(lhs, _weighted_local(joint, cells))


def verify_theorem2(joint: DiscreteJoint, predictor: Predictor, loss: Loss) -> TheoremCheck:
    """E_D[L(df, dt)] versus its weighted local-space form, df = f_prev - f_curr, dt = t_prev - t_curr."""
    lhs = expected_loss_D(joint, predictor, loss, "dep")
    p1 = joint.p_prev()
    cells = []
    for x in range(joint.n):
        df = predictor.f_prev[x] - predictor.f_curr[x]
        for d in (0, 1):  # T_prev = 1 leaves only these differences
            p_joint = joint.cond[x, 1, 1 - d]
            pc = joint.px[x] * p_joint / p1
            cells.append((x, pc, joint.p_diff_given_x(d)[x], (p_joint, loss(df, d))))
    return TheoremCheck(lhs, _weighted_local(joint, cells))


@dataclass(frozen=True)
class SuiteRow:
    seed: int
    theorem: int
    loss: str
    lhs: float
    rhs: float

    @property
    def diff(self) -> float:
        return abs(self.lhs - self.rhs)


def run_suite(seeds: int = 100, losses: dict[str, Loss] | None = None) -> list[SuiteRow]:
    rows = []
    for seed in range(seeds):
        joint = build_joint(seed)
        pred = random_predictor(joint.n, seed + 10_000)
        for name, loss in (losses or LOSSES).items():
            for k, check in ((1, verify_theorem1), (2, verify_theorem2)):
                c = check(joint, pred, loss)
                rows.append(SuiteRow(seed, k, name, c.lhs, c.rhs))
    return rows
