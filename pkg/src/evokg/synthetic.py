"""Synthetic temporal graphs with planted one-step implication patterns."""

from __future__ import annotations

import numpy as np

from .data import FactStore, Quadruple, store_from_facts

TRIGGER_A, CONSEQUENCE_A = 0, 1
TRIGGER_B, CONSEQUENCE_B = 2, 3


def planted_pattern_store(num_entities: int = 50, num_chains: int = 10,
                          train_timestamps: int = 48, train_era_length: int = 6,
                          final_era_length: int = 12, valid_length: int = 6,
                          seed: int = 0) -> FactStore:
    """A graph of entity-pair chains whose relation toggles every step.

    Each of ``num_chains`` slots holds one entity pair at a time and emits
    one fact per timestamp, alternating trigger/consequence relations, so a
    trigger fact (a, r_trig, b, t) always implies (a, r_conseq, b, t+1)
    within the pair's lifetime.  Slots are split between two independent
    relation systems so all four relation ids occur.

    Pairs are resampled every ``train_era_length`` steps during the training
    range: the resulting number of distinct pairings is far beyond what a
    static per-(subject, relation) lookup can absorb, so fitting the
    training data requires reading the partner out of the one-step history.
    After the training range one final era runs uninterrupted; validation
    takes its first ``valid_length`` timestamps and test the remainder, so
    every test fact continues an already-visible pair while none of its
    pairs ever occurred during training.  Returned store is un-augmented.
    """
    if train_era_length < 2 or train_era_length % 2:
        raise ValueError("train eras must have even length >= 2")
    if train_timestamps % train_era_length:
        raise ValueError("training range must be a whole number of eras")
    if valid_length >= final_era_length:
        raise ValueError("final era must extend past the validation window")
    rng = np.random.default_rng(seed)

    systems = [(TRIGGER_A, CONSEQUENCE_A), (TRIGGER_B, CONSEQUENCE_B)]
    facts: list[Quadruple] = []

    def emit_era(start: int, length: int):
        pairs = []
        for slot in range(num_chains):
            a, b = rng.choice(num_entities, size=2, replace=False)
            pairs.append((int(a), int(b), systems[slot % 2]))
        for t in range(start, start + length):
            phase = (t - start) % 2
            for a, b, (trig, conseq) in pairs:
                rel = trig if phase == 0 else conseq
                facts.append(Quadruple(a, rel, b, t))

    for start in range(0, train_timestamps, train_era_length):
        emit_era(start, train_era_length)
    emit_era(train_timestamps, final_era_length)

    valid_end = train_timestamps + valid_length
    split = {
        "train": [q for q in facts if q.t < train_timestamps],
        "valid": [q for q in facts if train_timestamps <= q.t < valid_end],
        "test": [q for q in facts if q.t >= valid_end],
    }
    assert split["test"]
    return store_from_facts(split, num_entities, num_relations=4)


def repeating_store(num_entities: int = 5, num_relations: int = 2,
                    num_timestamps: int = 10) -> FactStore:
    """Identical facts at every timestamp: (i, r, (i+1+r) mod n).

    Each (subject, relation) pair maps to exactly one object and vice versa,
    so a model that memorizes the pattern can rank every training query
    first.  Last two timestamps become the valid and test splits.
    """
    if num_timestamps < 3:
        raise ValueError("need at least train/valid/test timestamps")
    facts = [
        Quadruple(i, r, (i + 1 + r) % num_entities, t)
        for t in range(num_timestamps)
        for r in range(num_relations)
        for i in range(num_entities)
    ]
    split = {
        "train": [q for q in facts if q.t < num_timestamps - 2],
        "valid": [q for q in facts if q.t == num_timestamps - 2],
        "test": [q for q in facts if q.t == num_timestamps - 1],
    }
    return store_from_facts(split, num_entities, num_relations)
