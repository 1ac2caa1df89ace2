"""Convolutional translational decoder scoring entities and relations.

The core stacks two embeddings as a 2-channel sequence, applies a bank of
width-3 kernels with same-length padding, a randomized leaky rectifier,
dropout, and a fully-connected map back to the embedding dimension.  Entity
probabilities are sigmoid(H_t core(h_s, r)); relation probabilities are
sigmoid(R_t core(h_s, h_o)).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .evolution import EvolutionState
from .model import DecoderParams
from .tensor import Tensor


def convtranse_core(e1: Tensor, e2: Tensor, params: DecoderParams,
                    mode: str = "eval", rng=None) -> Tensor:
    """Decode a pair of d-vectors (or (B, d) batches) to a d-vector each."""
    stacked = T.stack_pair(e1, e2)  # (2, d) or (B, 2, d)
    dim = stacked.shape[-1]
    if dim < params.width:
        raise ValueError(
            f"embedding dim {dim} is smaller than the kernel width {params.width}"
        )
    conv = T.conv1d(stacked, params.kernels, padding=params.width // 2)
    act = T.rrelu(conv, mode=mode, rng=rng)
    flat_dim = params.num_kernels * dim
    flat = T.reshape(act, (flat_dim,) if act.ndim == 2 else (-1, flat_dim))
    flat = T.dropout(flat, params.dropout, mode, rng)
    return T.matmul_rowwise(flat, params.fc)


def score_entities_batch(state: EvolutionState, subjects, relations,
                         params: DecoderParams, mode: str = "eval",
                         rng=None) -> Tensor:
    """(B, |V|) probabilities for queries (s_i, r_i, ?)."""
    e1 = T.gather_rows(state.h, np.asarray(subjects, dtype=np.intp))
    e2 = T.gather_rows(state.r, np.asarray(relations, dtype=np.intp))
    core = convtranse_core(e1, e2, params, mode=mode, rng=rng)
    return T.sigmoid(T.matmul_rowwise(core, T.transpose(state.h)))


def score_relations_batch(state: EvolutionState, subjects, objects,
                          params: DecoderParams, mode: str = "eval",
                          rng=None) -> Tensor:
    """(B, 2|R|) probabilities for queries (s_i, ?, o_i)."""
    e1 = T.gather_rows(state.h, np.asarray(subjects, dtype=np.intp))
    e2 = T.gather_rows(state.h, np.asarray(objects, dtype=np.intp))
    core = convtranse_core(e1, e2, params, mode=mode, rng=rng)
    return T.sigmoid(T.matmul_rowwise(core, T.transpose(state.r)))


def _check_id(value: int, bound: int, what: str):
    if not 0 <= value < bound:
        raise IndexError(f"{what} id {value} out of range [0, {bound})")


def score_entities(state: EvolutionState, subject: int, relation: int,
                   params: DecoderParams, mode: str = "eval", rng=None) -> Tensor:
    """(|V|,) probabilities for a single query (s, r, ?)."""
    _check_id(subject, state.h.shape[0], "entity")
    _check_id(relation, state.r.shape[0], "relation")
    probs = score_entities_batch(state, [subject], [relation], params, mode, rng)
    return T.reshape(probs, (state.h.shape[0],))


def score_relations(state: EvolutionState, subject: int, obj: int,
                    params: DecoderParams, mode: str = "eval", rng=None) -> Tensor:
    """(2|R|,) probabilities for a single query (s, ?, o)."""
    _check_id(subject, state.h.shape[0], "entity")
    _check_id(obj, state.h.shape[0], "entity")
    probs = score_relations_batch(state, [subject], [obj], params, mode, rng)
    return T.reshape(probs, (state.r.shape[0],))
