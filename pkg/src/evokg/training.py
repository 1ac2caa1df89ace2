"""Multi-task loss assembly, Adam optimization, and the training loop.

Each optimizer step targets one training timestamp: the history window
ending just before it is re-evolved from the trainable initial embeddings,
entity/relation multi-label cross-entropies are computed on the target
snapshot's facts, the static angle constraint is added over the window
states, and one clipped Adam update is applied.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import FactStore, Snapshot, StaticGraph, history_window
from .decoder import score_entities_batch, score_relations_batch
from .evolution import (EvolutionState, evolve, static_constraint_loss,
                        static_embeddings)
from .model import DecoderParams, ParameterSet, init_parameters
from .tensor import GradientError, Tape, Tensor, backward

log = logging.getLogger(__name__)

PROB_EPS = 1e-10

TASKS = ("entity", "relation", "both")


class NumericError(RuntimeError):
    """Loss or gradients left the representable range."""


@dataclass
class TrainConfig:
    dim: int = 200
    num_layers: int = 2
    history: int = 3
    gamma: float = 10.0
    lambda1: float = 0.7
    lambda2: float = 0.3
    lr: float = 1e-3
    dropout: float = 0.2
    epochs: int = 30
    seed: int = 0
    task: str = "both"
    use_static: bool = True
    time_gate: bool = True
    grad_clip: float = 1.0
    patience: int = 5
    decoder_kernels: int = 50
    decoder_width: int = 3
    decoder_dropout: float = 0.2

    def __post_init__(self):
        if self.history < 1:
            raise ValueError(f"history must be >= 1, got {self.history}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class AdamState:
    """Bias-corrected first/second moment accumulators per parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              opt: AdamState, lr: float, clip_norm: float | None = None):
    """One bias-corrected Adam update over every tensor in ``params``.

    Gradients are clipped to ``clip_norm`` in global L2 norm first.  A
    parameter without a gradient is an error: it means the graph got
    detached somewhere.
    """
    for name in params:
        if grads.get(name) is None:
            raise GradientError(f"missing gradient for trainable tensor {name!r}")
    names = sorted(params)
    if clip_norm:
        total = np.sqrt(sum(float((grads[n] ** 2).sum()) for n in names))
        if total > clip_norm:
            scale = clip_norm / total
            grads = {n: grads[n] * scale for n in names}
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for name in names:
        p, g = params[name], grads[name]
        if name not in opt.m:
            opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * g * g
        m_hat = opt.m[name] / bc1
        v_hat = opt.v[name] / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return params


def _bce_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Full multi-label binary cross-entropy, mean over query rows."""
    p = T.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    ll = T.add(T.mul(Tensor(labels), T.log(p)),
               T.mul(Tensor(1.0 - labels), T.log(T.sub(1.0, p))))
    return T.mul(T.sum_all(ll), -1.0 / probs.shape[0])


def _entity_labels(target: Snapshot, num_entities: int) -> np.ndarray:
    truths: dict[tuple[int, int], set[int]] = {}
    for q in target.facts:
        truths.setdefault((q.s, q.r), set()).add(q.o)
    labels = np.zeros((target.num_facts, num_entities))
    for i, q in enumerate(target.facts):
        labels[i, list(truths[(q.s, q.r)])] = 1.0
    return labels


def _relation_labels(target: Snapshot, num_relations: int) -> np.ndarray:
    truths: dict[tuple[int, int], set[int]] = {}
    for q in target.facts:
        truths.setdefault((q.s, q.o), set()).add(q.r)
    labels = np.zeros((target.num_facts, num_relations))
    for i, q in enumerate(target.facts):
        labels[i, list(truths[(q.s, q.o)])] = 1.0
    return labels


def entity_loss(state: EvolutionState, target: Snapshot, decoder: DecoderParams,
                mode: str = "train", rng=None) -> Tensor:
    """Multi-label cross-entropy over all entities for every fact (inverses
    included) at the target snapshot; zero when the snapshot is empty."""
    if target.num_facts == 0:
        return Tensor(0.0)
    probs = score_entities_batch(state, target.subjects, target.relations,
                                 decoder, mode=mode, rng=rng)
    return _bce_loss(probs, _entity_labels(target, state.h.shape[0]))


def relation_loss(state: EvolutionState, target: Snapshot, decoder: DecoderParams,
                  mode: str = "train", rng=None) -> Tensor:
    """Mirror of the entity loss over the doubled relation vocabulary."""
    if target.num_facts == 0:
        return Tensor(0.0)
    probs = score_relations_batch(state, target.subjects, target.objects,
                                  decoder, mode=mode, rng=rng)
    return _bce_loss(probs, _relation_labels(target, state.r.shape[0]))


def total_loss(entity_term: Tensor, relation_term: Tensor, static_term: Tensor,
               lambda1: float, lambda2: float) -> Tensor:
    return T.add(T.add(T.mul(entity_term, lambda1), T.mul(relation_term, lambda2)),
                 static_term)


@dataclass
class EpochStats:
    epoch: int
    entity_loss: float
    relation_loss: float
    static_loss: float
    total_loss: float
    steps: int
    seconds: float
    valid_mrr: float | None = None


def train_epoch(store: FactStore, static_graph: StaticGraph | None,
                pset: ParameterSet, opt: AdamState, config: TrainConfig,
                rng: np.random.Generator, epoch: int = 0) -> EpochStats:
    """One pass over the training timestamps in seed-shuffled order."""
    t_start = time.perf_counter()
    train = store.train_snapshots
    targets = [s.timestamp for s in train[1:] if s.num_facts > 0]
    if not targets:
        log.warning("training split has a single timestamp; nothing to optimize")
        return EpochStats(epoch, 0.0, 0.0, 0.0, 0.0, 0, 0.0)

    use_static = config.use_static and static_graph is not None
    params = pset.trainable(config.task, use_static)
    sums = {"e": 0.0, "r": 0.0, "s": 0.0, "t": 0.0}
    order = rng.permutation(len(targets))
    for pos in order:
        target_t = targets[pos]
        window = history_window(store, target_t - 1, config.history)
        target = store.timeline[target_t]
        with Tape() as tape:
            state, h_seq = evolve(window, EvolutionState(pset.h0, pset.r0, -1),
                                  pset.evolution, mode="train", rng=rng,
                                  time_gate=config.time_gate)
            le = (entity_loss(state, target, pset.entity_decoder, "train", rng)
                  if config.task in ("entity", "both") else Tensor(0.0))
            lr_ = (relation_loss(state, target, pset.relation_decoder, "train", rng)
                   if config.task in ("relation", "both") else Tensor(0.0))
            lst = (static_constraint_loss(static_embeddings(static_graph, pset.evolution),
                                          h_seq, config.gamma)
                   if use_static else Tensor(0.0))
            loss = total_loss(le, lr_, lst, config.lambda1, config.lambda2)
        if not np.isfinite(loss.data).all():
            raise NumericError(f"non-finite loss at timestamp {target_t}")
        backward(loss, tape)
        grads = {name: t.grad for name, t in params.items()}
        adam_step(params, grads, opt, config.lr,
                  clip_norm=config.grad_clip or None)
        for t in params.values():
            t.zero_grad()
        sums["e"] += le.item()
        sums["r"] += lr_.item()
        sums["s"] += lst.item()
        sums["t"] += loss.item()

    n = len(targets)
    return EpochStats(epoch, sums["e"] / n, sums["r"] / n, sums["s"] / n,
                      sums["t"] / n, n, time.perf_counter() - t_start)


def compute_final_state(store: FactStore, pset: ParameterSet,
                        config: TrainConfig) -> EvolutionState:
    """Evolve over the window ending at the last training timestamp; this is
    the state frozen-mode inference scores with."""
    last = store.split_bounds["train"][1]
    window = history_window(store, last, config.history)
    state, _ = evolve(window, EvolutionState(pset.h0, pset.r0, -1),
                      pset.evolution, mode="eval", time_gate=config.time_gate)
    return state


@dataclass
class FitResult:
    pset: ParameterSet
    opt: AdamState
    final_state: EvolutionState
    curve: list[EpochStats]
    best_epoch: int | None = None
    best_valid_mrr: float | None = None


def fit(store: FactStore, static_graph: StaticGraph | None,
        config: TrainConfig, validate_every: int = 1) -> FitResult:
    """Train with frozen-mode validation MRR early stopping (patience from
    the config).  The best-validation parameter snapshot is restored before
    the final state is computed."""
    from .evaluation import evaluate  # local import; evaluation imports decoder only

    if not store.augmented:
        raise ValueError("fit expects a store with inverse quadruples added")
    rng = np.random.default_rng(config.seed)
    pset = init_parameters(
        rng, store.num_entities, store.num_relation_slots, config.dim,
        num_layers=config.num_layers, dropout=config.dropout,
        static_graph=static_graph if config.use_static else None,
        num_kernels=config.decoder_kernels, kernel_width=config.decoder_width,
        decoder_dropout=config.decoder_dropout,
    )
    opt = AdamState()
    curve: list[EpochStats] = []
    val_task = "entity" if config.task in ("entity", "both") else "relation"
    can_validate = bool(store.valid_snapshots) and any(
        s.num_facts for s in store.valid_snapshots)
    best_mrr, best_epoch, best_values, stale = -1.0, None, None, 0

    for epoch in range(1, config.epochs + 1):
        stats = train_epoch(store, static_graph, pset, opt, config, rng, epoch)
        if can_validate and epoch % validate_every == 0:
            state = compute_final_state(store, pset, config)
            report = evaluate(store, pset, state, mode="frozen", split="valid",
                              task=val_task, config=config)
            stats.valid_mrr = report.mrr
            if report.mrr > best_mrr:
                best_mrr, best_epoch = report.mrr, epoch
                best_values = pset.copy_values()
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    curve.append(stats)
                    log.info("early stop at epoch %d (best %.4f @ %d)",
                             epoch, best_mrr, best_epoch)
                    break
        curve.append(stats)
        log.info("epoch %d: loss %.4f (entity %.4f relation %.4f static %.4f)%s",
                 epoch, stats.total_loss, stats.entity_loss, stats.relation_loss,
                 stats.static_loss,
                 f" valid MRR {stats.valid_mrr:.4f}" if stats.valid_mrr is not None else "")

    if best_values is not None:
        pset.load_values(best_values)
    final_state = compute_final_state(store, pset, config)
    return FitResult(pset=pset, opt=opt, final_state=final_state, curve=curve,
                     best_epoch=best_epoch,
                     best_valid_mrr=best_mrr if best_epoch is not None else None)


# ---------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_MAGIC = b"EVKG"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, config: TrainConfig, pset: ParameterSet,
                    opt: AdamState, final_state: EvolutionState,
                    meta: dict | None = None, manifest_id: str | None = None):
    """Binary container: magic, version, JSON header with a per-tensor shape
    table, then the float64 payload."""
    tensors: list[tuple[str, np.ndarray]] = []
    for name, t in pset.named().items():
        tensors.append(("param/" + name, t.data))
    for name, arr in sorted(opt.m.items()):
        tensors.append(("adam_m/" + name, arr))
    for name, arr in sorted(opt.v.items()):
        tensors.append(("adam_v/" + name, arr))
    tensors.append(("state/h", final_state.h.data))
    tensors.append(("state/r", final_state.r.data))

    table, offset = [], 0
    for name, arr in tensors:
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "config": asdict(config),
        "adam": {"beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                 "step": opt.step},
        "state_timestamp": final_state.timestamp,
        "meta": meta or {},
        "manifest_id": manifest_id,
        "tensors": table,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def load_checkpoint(path: str):
    """Returns (config, pset, opt, final_state, header-dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        payload = fh.read()

    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=np.float64, count=count,
                            offset=start).reshape(shape)
        arrays[entry["name"]] = arr.copy()

    config = TrainConfig(**header["config"])
    meta = header["meta"]
    rng = np.random.default_rng(config.seed)
    static_stub = None
    if any(name.startswith("param/static.") for name in arrays):
        static_stub = _StaticShapeStub(
            num_static_relations=sum(
                1 for n in arrays if n.startswith("param/static.w.")),
            extra_rows=arrays["param/static.h0"].shape[0] - meta["num_entities"],
            num_tkg_entities=meta["num_entities"],
        )
    pset = init_parameters(
        rng, meta["num_entities"], meta["num_relation_slots"], config.dim,
        num_layers=config.num_layers, dropout=config.dropout,
        static_graph=static_stub,
        num_kernels=config.decoder_kernels, kernel_width=config.decoder_width,
        decoder_dropout=config.decoder_dropout,
    )
    pset.load_values({name[len("param/"):]: arr for name, arr in arrays.items()
                      if name.startswith("param/")})
    opt = AdamState(beta1=header["adam"]["beta1"], beta2=header["adam"]["beta2"],
                    eps=header["adam"]["eps"], step=header["adam"]["step"])
    opt.m = {n[len("adam_m/"):]: arr for n, arr in arrays.items()
             if n.startswith("adam_m/")}
    opt.v = {n[len("adam_v/"):]: arr for n, arr in arrays.items()
             if n.startswith("adam_v/")}
    final_state = EvolutionState(Tensor(arrays["state/h"]),
                                 Tensor(arrays["state/r"]),
                                 header["state_timestamp"])
    return config, pset, opt, final_state, header


class _StaticShapeStub:
    """Duck-typed StaticGraph stand-in carrying only the shape information
    init_parameters needs when rebuilding a checkpointed model."""

    def __init__(self, num_static_relations: int, extra_rows: int,
                 num_tkg_entities: int):
        self.num_static_relations = num_static_relations
        self.num_static_entities = extra_rows
        self.num_tkg_entities = num_tkg_entities
