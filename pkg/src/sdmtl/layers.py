"""Small parameter helpers shared by every model."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import numerics as nx


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> nx.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return nx.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(*shape) -> nx.Tensor:
    return nx.Tensor(np.zeros(shape), requires_grad=True)


def linear(x: nx.Tensor, w: nx.Tensor, b: nx.Tensor) -> nx.Tensor:
    return nx.add(nx.matmul(x, w), b)


def init_mlp(rng: np.random.Generator, sizes: Sequence[int], prefix: str) -> dict[str, nx.Tensor]:
    p = {}
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        p[f"{prefix}.w{i}"] = glorot(rng, (a, b), a, b)
        p[f"{prefix}.b{i}"] = zeros(b)
    return p


def mlp(x: nx.Tensor, params: dict[str, nx.Tensor], prefix: str, final_act: bool = False) -> nx.Tensor:
    """Affine layers with ReLU between them (and after the last if ``final_act``)."""
    n = 0
    while f"{prefix}.w{n}" in params:
        n += 1
    for i in range(n):
        x = linear(x, params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"])
        if i < n - 1 or final_act:
            x = nx.relu(x)
    return x
