import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evokg.data import Quadruple, Snapshot, add_inverse_quadruples, store_from_facts


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def tiny_store(num_entities=4, num_relations=2, num_timestamps=4, seed=0,
               facts_per_ts=3, augment=True):
    """A small random store for structural tests."""
    gen = np.random.default_rng(seed)
    facts = []
    for t in range(num_timestamps):
        for _ in range(facts_per_ts):
            s, o = gen.choice(num_entities, size=2, replace=False)
            r = int(gen.integers(num_relations))
            facts.append(Quadruple(int(s), r, int(o), t))
    split = {
        "train": [q for q in facts if q.t < num_timestamps - 2],
        "valid": [q for q in facts if q.t == num_timestamps - 2],
        "test": [q for q in facts if q.t == num_timestamps - 1],
    }
    store = store_from_facts(split, num_entities, num_relations)
    return add_inverse_quadruples(store) if augment else store


def random_snapshot(num_entities, num_facts, num_relations, seed=0, timestamp=0):
    gen = np.random.default_rng(seed)
    facts = []
    for _ in range(num_facts):
        s, o = gen.choice(num_entities, size=2, replace=False)
        facts.append(Quadruple(int(s), int(gen.integers(num_relations)), int(o), timestamp))
    return Snapshot(timestamp, facts, num_entities)
