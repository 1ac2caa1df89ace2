"""Trainable parameter containers and their initialization.

All weights are drawn from a symmetric uniform distribution scaled by
1/sqrt(dim); embedding matrices (initial entity/relation states and the
static-graph input embeddings) additionally get unit-norm rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import StaticGraph
from .tensor import Tensor


@dataclass
class GRUParams:
    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wn: Tensor
    un: Tensor
    bn: Tensor


@dataclass
class EvolutionParams:
    """Weights of the recurrent evolution unit.

    ``w1``/``w2``/``w3`` are the per-layer aggregation, self-loop, and
    isolated-entity self-loop matrices of the relation-aware GCN; ``gate_w``
    and ``gate_b`` parameterize the entity time gate; ``gru`` updates the
    relation embeddings; ``static_w``/``static_h0`` belong to the one-layer
    relational GCN over the static property graph (absent when no static
    graph is configured).
    """

    w1: list[Tensor]
    w2: list[Tensor]
    w3: list[Tensor]
    gate_w: Tensor
    gate_b: Tensor
    gru: GRUParams
    num_layers: int
    dropout: float
    static_w: list[Tensor] | None = None
    static_h0: Tensor | None = None


@dataclass
class DecoderParams:
    kernels: Tensor  # (num_kernels, 2, width)
    fc: Tensor       # (num_kernels * dim, dim)
    dropout: float = 0.2

    @property
    def num_kernels(self) -> int:
        return self.kernels.shape[0]

    @property
    def width(self) -> int:
        return self.kernels.shape[2]


@dataclass
class ParameterSet:
    """Everything trainable: initial embeddings, evolution unit, decoders."""

    h0: Tensor
    r0: Tensor
    evolution: EvolutionParams
    entity_decoder: DecoderParams
    relation_decoder: DecoderParams
    dim: int = field(default=0)

    def named(self) -> dict[str, Tensor]:
        out = {"h0": self.h0, "r0": self.r0}
        ev = self.evolution
        for l in range(ev.num_layers):
            out[f"gcn.w1.{l}"] = ev.w1[l]
            out[f"gcn.w2.{l}"] = ev.w2[l]
            out[f"gcn.w3.{l}"] = ev.w3[l]
        out["gate.w"] = ev.gate_w
        out["gate.b"] = ev.gate_b
        for name in ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn"):
            out[f"gru.{name}"] = getattr(ev.gru, name)
        if ev.static_w is not None:
            for r, w in enumerate(ev.static_w):
                out[f"static.w.{r}"] = w
            out["static.h0"] = ev.static_h0
        out["dec_entity.kernels"] = self.entity_decoder.kernels
        out["dec_entity.fc"] = self.entity_decoder.fc
        out["dec_relation.kernels"] = self.relation_decoder.kernels
        out["dec_relation.fc"] = self.relation_decoder.fc
        return out

    def trainable(self, task: str = "both", use_static: bool = True) -> dict[str, Tensor]:
        """The parameters a given run actually optimizes."""
        named = self.named()
        drop_prefixes = []
        if not use_static:
            drop_prefixes.append("static.")
        if task == "entity":
            drop_prefixes.append("dec_relation.")
        elif task == "relation":
            drop_prefixes.append("dec_entity.")
        return {
            name: t for name, t in named.items()
            if not any(name.startswith(p) for p in drop_prefixes)
        }

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named().items()}

    def load_values(self, values: dict[str, np.ndarray]):
        named = self.named()
        for name, arr in values.items():
            if name not in named:
                raise KeyError(f"unknown parameter {name!r}")
            if named[name].data.shape != arr.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: "
                    f"{named[name].data.shape} vs {arr.shape}"
                )
            named[name].data[...] = arr


def _weight(rng: np.random.Generator, shape, scale: float) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def _embedding(rng: np.random.Generator, shape, scale: float) -> Tensor:
    data = rng.uniform(-scale, scale, size=shape)
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    return Tensor(data / norms, requires_grad=True)


def init_decoder(rng: np.random.Generator, dim: int, num_kernels: int = 50,
                 width: int = 3, dropout: float = 0.2) -> DecoderParams:
    if dim < width:
        raise ValueError(
            f"embedding dim {dim} is smaller than the kernel width {width}; "
            "the convolution cannot produce same-length output"
        )
    scale = 1.0 / math.sqrt(dim)
    return DecoderParams(
        kernels=_weight(rng, (num_kernels, 2, width), scale),
        fc=_weight(rng, (num_kernels * dim, dim), scale),
        dropout=dropout,
    )


def init_parameters(rng: np.random.Generator, num_entities: int,
                    num_relation_slots: int, dim: int, num_layers: int = 2,
                    dropout: float = 0.2, static_graph: StaticGraph | None = None,
                    num_kernels: int = 50, kernel_width: int = 3,
                    decoder_dropout: float = 0.2) -> ParameterSet:
    """Fresh parameters for a model over ``num_entities`` entities and
    ``num_relation_slots`` relations (inverse relations included)."""
    if num_layers < 1:
        raise ValueError(f"need at least one GCN layer, got {num_layers}")
    scale = 1.0 / math.sqrt(dim)
    gru = GRUParams(
        wz=_weight(rng, (2 * dim, dim), scale),
        uz=_weight(rng, (dim, dim), scale),
        bz=_weight(rng, (dim,), scale),
        wr=_weight(rng, (2 * dim, dim), scale),
        ur=_weight(rng, (dim, dim), scale),
        br=_weight(rng, (dim,), scale),
        wn=_weight(rng, (2 * dim, dim), scale),
        un=_weight(rng, (dim, dim), scale),
        bn=_weight(rng, (dim,), scale),
    )
    static_w = static_h0 = None
    if static_graph is not None:
        static_w = [_weight(rng, (dim, dim), scale)
                    for _ in range(static_graph.num_static_relations)]
        rows = static_graph.num_tkg_entities + static_graph.num_static_entities
        static_h0 = _embedding(rng, (rows, dim), scale)
    evolution = EvolutionParams(
        w1=[_weight(rng, (dim, dim), scale) for _ in range(num_layers)],
        w2=[_weight(rng, (dim, dim), scale) for _ in range(num_layers)],
        w3=[_weight(rng, (dim, dim), scale) for _ in range(num_layers)],
        gate_w=_weight(rng, (dim, dim), scale),
        gate_b=_weight(rng, (dim,), scale),
        gru=gru,
        num_layers=num_layers,
        dropout=dropout,
        static_w=static_w,
        static_h0=static_h0,
    )
    return ParameterSet(
        h0=_embedding(rng, (num_entities, dim), scale),
        r0=_embedding(rng, (num_relation_slots, dim), scale),
        evolution=evolution,
        entity_decoder=init_decoder(rng, dim, num_kernels, kernel_width, decoder_dropout),
        relation_decoder=init_decoder(rng, dim, num_kernels, kernel_width, decoder_dropout),
        dim=dim,
    )
