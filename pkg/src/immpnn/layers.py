"""Message-passing backbones: GCN and a sum-aggregation MLP, plus uniform propagation."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph, GraphInputError


class BackboneKind(str, enum.Enum):
    GCN = "gcn"
    SUM_MLP = "sumMlp"


def init_uniform(rng: np.random.Generator, rows: int, cols: int, fan_in: int) -> np.ndarray:
    """Centered uniform draw with standard deviation ``1/sqrt(fan_in)``."""
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class GcnLayer:
    """Weights of one message-passing layer; ``activation`` toggles the ReLU."""

    W: Tensor
    b: Tensor
    activation: bool = True

    @classmethod
    def init(cls, rng: np.random.Generator, c_in: int, c_out: int, activation: bool = True) -> "GcnLayer":
        return cls(
            Tensor(init_uniform(rng, c_in, c_out, c_in), requires_grad=True),
            Tensor(init_uniform(rng, 1, c_out, c_in), requires_grad=True),
            activation,
        )

    @property
    def params(self) -> list[Tensor]:
        return [self.W, self.b]


def _check(g: Graph, x: Tensor) -> None:
    if x.shape[0] != g.n:
        raise GraphInputError(f"features have {x.shape[0]} rows, graph has {g.n} nodes")


def _finish(layer: GcnLayer, agg: Tensor) -> Tensor:
    h = ad.add_row(ad.matmul(agg, layer.W), layer.b)
    return ad.relu(h) if layer.activation else h


def gcn_forward(layer: GcnLayer, g: Graph, x: Tensor) -> Tensor:
    """``ReLU(D^-1/2 (A+I) D^-1/2 x W + b)`` with degrees taken from ``A+I``."""
    _check(g, x)
    return _finish(layer, ad.spmm(g, "sym_norm_selfloops", x))


def sum_mlp_forward(layer: GcnLayer, g: Graph, x: Tensor) -> Tensor:
    """``ReLU((x + A x) W + b)``."""
    _check(g, x)
    return _finish(layer, ad.add(x, ad.spmm(g, "adjacency", x)))


BACKBONES = {
    BackboneKind.GCN: gcn_forward,
    BackboneKind.SUM_MLP: sum_mlp_forward,
}


def backbone_forward(kind: BackboneKind | str, layer: GcnLayer, g: Graph, x: Tensor) -> Tensor:
    return BACKBONES[BackboneKind(kind)](layer, g, x)


def uniform_propagate(g: Graph, x, steps: int) -> np.ndarray:
    """Apply ``y_i = sum_{j in N(i)} x_j`` ``steps`` times.

    Integer inputs stay integer (object dtype is used once values could
    overflow int64), so binomial rows come out exact.
    """
    x = np.asarray(x)
    if x.shape[0] != g.n:
        raise GraphInputError(f"x has {x.shape[0]} entries, graph has {g.n} nodes")
    if np.issubdtype(x.dtype, np.integer) and steps > 60:
        x = x.astype(object)
    off, nb = g.csr_offsets, g.csr_neighbors
    for _ in range(steps):
        if x.dtype == object:
            x = np.array([sum(x[nb[off[i] : off[i + 1]]], 0) for i in range(g.n)], dtype=object)
        else:
            x = g.adjacency().astype(x.dtype) @ x
    return x
