"""Raw-setting ranking, MRR/Hits metrics, and multi-step inference.

Ranking is raw: every entity (or relation) stays in the candidate list for
every query.  Ties resolve pessimistically — the answer takes the ceiling of
the average rank of its tie group — so reported numbers never benefit from
degenerate scores.  A filtered variant (drop other timestamp-agnostic true
answers) exists behind a flag for diagnostics only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FactStore, history_window
from .decoder import score_entities_batch, score_relations_batch
from .evolution import EvolutionState, evolve
from .model import ParameterSet
from .tensor import Tensor

EVAL_MODES = ("frozen", "ground_truth")


@dataclass
class MetricReport:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    count: int
    per_timestamp: list[dict] = field(default_factory=list)

    def as_row(self) -> dict:
        return {"mrr": self.mrr, "hits1": self.hits1, "hits3": self.hits3,
                "hits10": self.hits10, "count": self.count}


def rank_query(probabilities, answer: int) -> int:
    """1-based rank of ``answer`` among all candidates, descending by
    probability; ties contribute the ceiling of the average tie rank."""
    probs = probabilities.data if isinstance(probabilities, Tensor) else np.asarray(probabilities)
    probs = probs.reshape(-1)
    if not 0 <= answer < probs.size:
        raise IndexError(f"answer {answer} out of range for {probs.size} candidates")
    p = probs[answer]
    greater = int((probs > p).sum())
    ties = int((probs == p).sum()) - 1
    return 1 + greater + (ties + 1) // 2


def _rank_batch(probs: np.ndarray, answers: np.ndarray) -> np.ndarray:
    p_ans = probs[np.arange(probs.shape[0]), answers]
    greater = (probs > p_ans[:, None]).sum(axis=1)
    ties = (probs == p_ans[:, None]).sum(axis=1) - 1
    return 1 + greater + (ties + 1) // 2


def compute_metrics(ranks) -> MetricReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("compute_metrics needs at least one rank")
    return MetricReport(
        mrr=float((1.0 / ranks).mean()),
        hits1=float((ranks <= 1).mean()),
        hits3=float((ranks <= 3).mean()),
        hits10=float((ranks <= 10).mean()),
        count=int(ranks.size),
    )


def _known_answers(store: FactStore, task: str) -> dict:
    """(query -> every true answer across all splits), for the filtered
    diagnostic setting."""
    known: dict[tuple[int, int], set[int]] = {}
    for split in ("train", "valid", "test"):
        for q in store.split_facts(split):
            key = (q.s, q.r) if task == "entity" else (q.s, q.o)
            known.setdefault(key, set()).add(q.o if task == "entity" else q.r)
    return known


def evaluate(store: FactStore, pset: ParameterSet, state: EvolutionState,
             mode: str = "frozen", split: str = "test", task: str = "entity",
             config=None, filtered: bool = False) -> MetricReport:
    """Rank every query of a split and aggregate MRR/Hits@{1,3,10}.

    ``frozen`` scores every timestamp with the supplied end-of-training
    state; ``ground_truth`` re-evolves the history window (true snapshots)
    ending just before each evaluation timestamp.  Entity queries run in
    both directions because the store carries inverse facts.
    """
    if mode == "gt":
        mode = "ground_truth"
    if mode not in EVAL_MODES:
        raise ValueError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    if task not in ("entity", "relation"):
        raise ValueError(f"task must be 'entity' or 'relation', got {task!r}")
    snapshots = [s for s in store.split_snapshots(split) if s.num_facts > 0]
    if mode == "ground_truth":
        # the first snapshot of the timeline has no history to condition on
        snapshots = [s for s in snapshots if s.timestamp >= 1]
    if not snapshots:
        raise ValueError(f"no facts to evaluate in split {split!r}")
    if mode == "ground_truth" and config is None:
        raise ValueError("ground-truth mode needs the config for the history length")

    known = _known_answers(store, task) if filtered else None
    all_ranks, per_ts = [], []
    for snap in snapshots:
        if mode == "ground_truth":
            window = history_window(store, snap.timestamp - 1, config.history)
            st, _ = evolve(window, EvolutionState(pset.h0, pset.r0, -1),
                           pset.evolution, mode="eval",
                           time_gate=getattr(config, "time_gate", True))
        else:
            st = state
        if task == "entity":
            probs = score_entities_batch(st, snap.subjects, snap.relations,
                                         pset.entity_decoder, mode="eval")
            answers = snap.objects
            keys = zip(snap.subjects.tolist(), snap.relations.tolist())
        else:
            probs = score_relations_batch(st, snap.subjects, snap.objects,
                                          pset.relation_decoder, mode="eval")
            answers = snap.relations
            keys = zip(snap.subjects.tolist(), snap.objects.tolist())
        scores = probs.data
        if known is not None:
            scores = scores.copy()
            for i, key in enumerate(keys):
                others = known.get(key, set()) - {int(answers[i])}
                if others:
                    scores[i, list(others)] = -1.0
        ranks = _rank_batch(scores, answers)
        all_ranks.append(ranks)
        ts_report = compute_metrics(ranks)
        per_ts.append({"timestamp": snap.timestamp, **ts_report.as_row()})

    report = compute_metrics(np.concatenate(all_ranks))
    report.per_timestamp = per_ts
    return report
