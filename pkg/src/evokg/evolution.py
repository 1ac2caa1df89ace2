"""Recurrent evolution of entity and relation embeddings over a window.

One window step, in order:

1. relation update — each relation's input row concatenates the mean of the
   previous entity states over the entities it touches at this snapshot with
   its initial embedding row (all-zero when the relation is absent), and a
   GRU cell folds that into the running relation state;
2. entity update — the stacked relation-aware GCN layers propagate messages
   W1(h_s + r) from subjects to objects, normalized by in-degree, with a
   W2 self-loop for receiving entities and a separate W3 self-loop for
   entities outside every fact;
3. time gate — a learned sigmoid gate mixes the GCN output with the previous
   entity state.

Rows of both embedding matrices are rescaled to unit L2 norm after every
step.  A one-layer relational GCN over the static property graph produces
static embeddings, and an angle constraint that widens per window position
ties the evolving entity rows to them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import DataError, Snapshot, StaticGraph
from .model import EvolutionParams, GRUParams
from .tensor import Tensor


@dataclass
class EvolutionState:
    """Entity and relation embeddings reflecting one snapshot index."""

    h: Tensor
    r: Tensor
    timestamp: int


def rgcn_layer(snapshot: Snapshot, h: Tensor, rel_emb: Tensor,
               params: EvolutionParams, layer: int, mode: str = "eval",
               rng=None) -> Tensor:
    """One relation-aware GCN layer over the facts of ``snapshot``.

    Entities with incoming facts receive the degree-normalized sum of
    W1(h_s + r) messages plus a W2 self-loop; entities in no fact take the
    W3 self-loop only.  The activation is a randomized leaky rectifier,
    followed by dropout in train mode.
    """
    w1, w2, w3 = params.w1[layer], params.w2[layer], params.w3[layer]
    if snapshot.num_facts == 0:
        pre = T.matmul(h, w3)
    else:
        if (snapshot.in_degree[snapshot.objects] == 0).any():
            raise DataError(
                f"snapshot {snapshot.timestamp}: entity appears as object "
                "but has zero in-degree"
            )
        msg = T.add(T.gather_rows(h, snapshot.subjects),
                    T.gather_rows(rel_emb, snapshot.relations))
        agg = T.segment_sum(T.matmul(msg, w1), snapshot.objects, snapshot.num_entities)
        agg = T.mul(agg, Tensor(snapshot.inv_in_degree))
        recv = Tensor(snapshot.receiver_mask)
        pre = T.add(
            T.mul(T.add(agg, T.matmul(h, w2)), recv),
            T.mul(T.matmul(h, w3), Tensor(1.0 - snapshot.receiver_mask)),
        )
    out = T.rrelu(pre, mode=mode, rng=rng)
    if mode == "train" and params.dropout > 0:
        out = T.dropout(out, params.dropout, mode, rng)
    return out


def time_gate_update(h_new: Tensor, h_prev: Tensor, params: EvolutionParams) -> Tensor:
    """Convex per-element mix of the GCN output with the previous entity
    state, gated by sigmoid(h_prev W + b); rows renormalized."""
    gate = T.sigmoid(T.add(T.matmul(h_prev, params.gate_w), params.gate_b))
    mixed = T.add(T.mul(gate, h_new), T.mul(T.sub(1.0, gate), h_prev))
    return T.normalize_rows(mixed)


def relation_input(h_prev: Tensor, snapshot: Snapshot, r_init: Tensor) -> Tensor:
    """Per-relation GRU input: [mean of adjacent entity rows ; initial
    relation row], all-zero for relations with no facts at this snapshot."""
    num_rel, dim = r_init.shape
    if snapshot.num_facts == 0:
        return Tensor(np.zeros((num_rel, 2 * dim)))
    rel_ids, ent_ids, counts = snapshot.rel_member_pairs(num_rel)
    pooled = T.segment_sum(T.gather_rows(h_prev, ent_ids), rel_ids, num_rel)
    inv_counts = np.where(counts > 0, 1.0 / np.where(counts > 0, counts, 1.0), 0.0)
    pooled = T.mul(pooled, Tensor(inv_counts[:, None]))
    present = Tensor((counts > 0).astype(np.float64)[:, None])
    return T.mul(T.concat(pooled, r_init, axis=1), present)


def gru_update(r_prev: Tensor, r_input: Tensor, gru: GRUParams) -> Tensor:
    """Rowwise GRU cell; the update gate moves mass toward the candidate
    state (gate 0 carries the previous row through).  Rows renormalized."""
    z = T.sigmoid(T.add(T.add(T.matmul(r_input, gru.wz), T.matmul(r_prev, gru.uz)), gru.bz))
    reset = T.sigmoid(T.add(T.add(T.matmul(r_input, gru.wr), T.matmul(r_prev, gru.ur)), gru.br))
    cand = T.tanh(T.add(T.add(T.matmul(r_input, gru.wn),
                              T.matmul(T.mul(reset, r_prev), gru.un)), gru.bn))
    out = T.add(T.mul(T.sub(1.0, z), r_prev), T.mul(z, cand))
    return T.normalize_rows(out)


def static_embeddings(graph: StaticGraph, params: EvolutionParams) -> Tensor:
    """One-layer relational GCN over the property graph, no self-loop:
    h_i = relu(mean over edges (i, r, j) of W_r h'_j), rows renormalized.
    Only the graph-entity rows are returned."""
    if params.static_w is None or params.static_h0 is None:
        raise ValueError("model was initialized without static-graph parameters")
    if (graph.neighbor_count == 0).any():
        missing = int((graph.neighbor_count == 0).sum())
        raise DataError(
            f"static graph leaves {missing} entities without property edges"
        )
    num = graph.num_tkg_entities
    acc = None
    for r in range(graph.num_static_relations):
        sel = graph.edge_relations == r
        if not sel.any():
            continue
        src = graph.edge_properties[sel] + num  # property rows sit after entity rows
        contrib = T.matmul(T.gather_rows(params.static_h0, src), params.static_w[r])
        part = T.segment_sum(contrib, graph.edge_entities[sel], num)
        acc = part if acc is None else T.add(acc, part)
    inv_c = 1.0 / graph.neighbor_count.astype(np.float64)
    out = T.relu(T.mul(acc, Tensor(inv_c[:, None])))
    return T.normalize_rows(out)


def static_constraint_loss(h_static: Tensor, h_seq: list[Tensor],
                           gamma_degrees: float) -> Tensor:
    """Sum over window positions x and entities of
    max(cos(min(gamma*x, 90 deg)) - cos(h_static_i, h_{x,i}), 0).

    All rows must be unit-norm (or exactly-flagged zero rows); the cosine is
    then the plain row dot product.
    """
    _require_unit_rows(h_static, "static embeddings")
    total = None
    for x, hx in enumerate(h_seq):
        _require_unit_rows(hx, f"window state {x}")
        thresh = math.cos(math.radians(min(gamma_degrees * x, 90.0)))
        cosines = T.rowsum(T.mul(h_static, hx))
        term = T.sum_all(T.relu(T.sub(thresh, cosines)))
        total = term if total is None else T.add(total, term)
    return total


def _require_unit_rows(t: Tensor, what: str, tol: float = 1e-6):
    norms = np.linalg.norm(t.data, axis=1)
    bad = ~((np.abs(norms - 1.0) <= tol) | (norms < T.ZERO_ROW_EPS))
    if bad.any():
        raise ValueError(
            f"{what}: {int(bad.sum())} rows deviate from unit norm by more than {tol}"
        )


def evolve(window: list[Snapshot], init: EvolutionState, params: EvolutionParams,
           mode: str = "eval", rng=None, time_gate: bool = True
           ) -> tuple[EvolutionState, list[Tensor]]:
    """Run the recurrence over a snapshot window.

    Returns the final state and the entity-state sequence
    [normalized init, state after step 1, ..., state after step m] that the
    static angle constraint consumes.  Relations update before entities so
    the GCN sees the current-step relation embeddings.  With ``time_gate``
    off the GCN output replaces the previous state directly (renormalized).
    """
    if not window:
        raise ValueError("evolve needs a non-empty window")
    h = T.normalize_rows(init.h)
    r = T.normalize_rows(init.r)
    r_init = r
    h_seq = [h]
    for snap in window:
        r = gru_update(r, relation_input(h, snap, r_init), params.gru)
        x = h
        for layer in range(params.num_layers):
            x = rgcn_layer(snap, x, r, params, layer, mode=mode, rng=rng)
        h = time_gate_update(x, h, params) if time_gate else T.normalize_rows(x)
        h_seq.append(h)
    return EvolutionState(h, r, window[-1].timestamp), h_seq
