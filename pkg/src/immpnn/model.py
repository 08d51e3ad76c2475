"""Interleaved multiscale message-passing network.

Layout of one forward pass::

    x0 -> encoder -> pool chain (one feature matrix per scale)
       -> L x [per-scale backbone, then scale-mix between neighboring scales]
       -> recursive unpool + concat down to scale 0 -> linear head
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .coarsening import ScaleHierarchy
from .graph import Graph, GraphInputError
from .layers import BackboneKind, GcnLayer, backbone_forward, init_uniform


class BudgetError(ValueError):
    """No width satisfies the requested parameter budget."""


@dataclass(frozen=True)
class ImMpnnConfig:
    scales: int = 0
    layers: int = 2
    hidden: int = 16
    backbone: str = BackboneKind.GCN.value
    in_dim: int = 1
    out_dim: int = 1
    param_budget: int | None = None

    def __post_init__(self):
        BackboneKind(self.backbone)
        if self.scales < 0 or self.layers < 1 or self.hidden < 1 or self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"invalid config {self}")

    def replace(self, **kw) -> "ImMpnnConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ImMpnnConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ImMpnnConfig":
        return cls.from_dict(json.loads(text))


class ImMpnnModel:
    """Weights for every (scale, layer) pair plus encoder, scale-mix and head.

    ``mix_down[l][s]`` maps the pooled scale ``s-1`` features onto scale ``s``
    (present for ``s >= 1``); ``mix_up[l][s]`` maps the unpooled scale ``s+1``
    features onto scale ``s`` (present for ``s < scales``).
    """

    def __init__(self, config: ImMpnnConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c, S, L = config.hidden, config.scales, config.layers
        self.encoder = GcnLayer.init(rng, config.in_dim, c, activation=False)
        self.layers = [[GcnLayer.init(rng, c, c) for _ in range(S + 1)] for _ in range(L)]
        self.mix_down: list[list[Tensor | None]] = []
        self.mix_up: list[list[Tensor | None]] = []
        for _ in range(L):
            self.mix_down.append(
                [None] + [Tensor(init_uniform(rng, c, c, c), requires_grad=True) for _ in range(S)]
            )
            self.mix_up.append(
                [Tensor(init_uniform(rng, c, c, c), requires_grad=True) for _ in range(S)] + [None]
            )
        self.head = GcnLayer.init(rng, c * (S + 1), config.out_dim, activation=False)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"encoder.W": self.encoder.W, "encoder.b": self.encoder.b}
        for l, row in enumerate(self.layers):
            for s, layer in enumerate(row):
                out[f"layer{l}.scale{s}.W"] = layer.W
                out[f"layer{l}.scale{s}.b"] = layer.b
                if self.mix_down[l][s] is not None:
                    out[f"layer{l}.scale{s}.mix_down"] = self.mix_down[l][s]
                if self.mix_up[l][s] is not None:
                    out[f"layer{l}.scale{s}.mix_up"] = self.mix_up[l][s]
        out["head.W"] = self.head.W
        out["head.b"] = self.head.b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            raise ValueError("checkpoint parameter names do not match the model")
        for k, v in state.items():
            if params[k].shape != v.shape:
                raise ValueError(f"{k}: shape {v.shape} != {params[k].shape}")
            params[k].values = np.array(v, dtype=np.float64)

    def save(self, path: str | Path) -> None:
        ad.save_checkpoint(self.named_parameters(), path)

    def __call__(self, hier: ScaleHierarchy, x0) -> Tensor:
        return forward(self, hier, x0)


def _scale_count(model: ImMpnnModel, hier: ScaleHierarchy) -> int:
    S = model.config.scales
    if hier.scales != S:
        raise GraphInputError(
            f"model expects {S} coarsening steps, hierarchy has {hier.scales}; "
            "build the model with the hierarchy's effective scale count"
        )
    return S


def forward(model: ImMpnnModel, hier: ScaleHierarchy, x0) -> Tensor:
    x0 = ad._as_tensor(x0)
    if x0.shape[0] != hier.graphs[0].n:
        raise GraphInputError(f"x0 has {x0.shape[0]} rows, input graph has {hier.graphs[0].n} nodes")
    S = _scale_count(model, hier)
    kind = model.config.backbone
    pools = [p.pool_matrix for p in hier.pairings]
    parents = [p.parent_of for p in hier.pairings]

    xs = [ad.add_row(ad.matmul(x0, model.encoder.W), model.encoder.b)]
    for s in range(S):
        xs.append(ad.sparse_apply(pools[s], xs[s], "pool"))

    for l in range(model.config.layers):
        xt = [backbone_forward(kind, model.layers[l][s], hier.graphs[s], xs[s]) for s in range(S + 1)]
        new = []
        for s in range(S + 1):
            h = xt[s]
            if s > 0:
                child = ad.sparse_apply(pools[s - 1], xt[s - 1], "pool")
                h = ad.add(h, ad.matmul(child, model.mix_down[l][s]))
            if s < S:
                parent = ad.gather_rows(xt[s + 1], parents[s])
                h = ad.add(h, ad.matmul(parent, model.mix_up[l][s]))
            new.append(h)
        xs = new

    z = xs[S]
    for s in range(S - 1, -1, -1):
        z = ad.concat_cols(xs[s], ad.gather_rows(z, parents[s]))
    return ad.add_row(ad.matmul(z, model.head.W), model.head.b)


def backbone_stack_forward(model: ImMpnnModel, g: Graph, x0) -> Tensor:
    """Plain single-scale network using the scale-0 weights of ``model``."""
    x0 = ad._as_tensor(x0)
    h = ad.add_row(ad.matmul(x0, model.encoder.W), model.encoder.b)
    for row in model.layers:
        h = backbone_forward(model.config.backbone, row[0], g, h)
    if model.config.scales != 0:
        raise GraphInputError("backbone_stack_forward needs a single-scale (scales=0) model")
    return ad.add_row(ad.matmul(h, model.head.W), model.head.b)


# --- size / cost accounting -----------------------------------------------


def param_count_for(config: ImMpnnConfig) -> int:
    c, S, L = config.hidden, config.scales, config.layers
    encoder = config.in_dim * c + c
    backbones = L * (S + 1) * (c * c + c)
    mixes = L * 2 * S * c * c
    head = c * (S + 1) * config.out_dim + config.out_dim
    return encoder + backbones + mixes + head


def param_count(model: ImMpnnModel) -> int:
    return sum(p.values.size for p in model.parameters())


def fit_width_to_budget(config: ImMpnnConfig, budget: int | None = None) -> ImMpnnConfig:
    """Reduce ``hidden`` to the largest width whose parameter count fits the budget."""
    budget = config.param_budget if budget is None else budget
    if budget is None:
        return config
    for c in range(config.hidden, 0, -1):
        cand = config.replace(hidden=c, param_budget=budget)
        if param_count_for(cand) <= budget:
            return cand
    raise BudgetError(
        f"budget {budget} is below the width-1 model ({param_count_for(config.replace(hidden=1))} parameters)"
    )


def count_message_ops(model: ImMpnnModel | None, hier: ScaleHierarchy, slack: float = 0.5) -> tuple[int, int]:
    """Per-layer message-passing work ``(sum_s n_s, sum_s m_s)`` over all scales.

    Warns when either sum exceeds ``(2 + slack)`` times the input graph's size,
    the geometric-series budget for a hierarchy that halves at every level.
    """
    if model is not None:
        _scale_count(model, hier)
    node_ops = sum(hier.node_counts)
    edge_ops = sum(hier.edge_counts)
    n0, m0 = hier.graphs[0].n, hier.graphs[0].m
    if node_ops > (2 + slack) * n0 or edge_ops > (2 + slack) * max(m0, 1):
        warnings.warn(
            f"message ops ({node_ops}, {edge_ops}) exceed {(2 + slack):.2f} x ({n0}, {m0})",
            stacklevel=2,
        )
    return node_ops, edge_ops
