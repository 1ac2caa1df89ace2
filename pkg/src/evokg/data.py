"""Quadruple ingestion, snapshot indexing, and the name-derived static graph.

Datasets arrive as tab-separated integer quadruple files (subject, relation,
object, raw time) for the train/valid/test splits, a stat file carrying the
entity and relation counts, and an optional entity-name file.  Raw times are
normalized to consecutive snapshot indices by dividing out the inferred time
interval; gaps inside the covered range materialize as empty snapshots so the
recurrence always advances one index at a time.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed dataset files or inconsistent ingestion requests."""


class Quadruple(NamedTuple):
    s: int
    r: int
    o: int
    t: int


class Snapshot:
    """All facts at one timestamp with the indexes message passing needs.

    ``in_degree[o]`` counts facts with object ``o``; ``rel_entities[r]`` is
    the set of entities adjacent to relation ``r`` (as subject or object);
    ``active_entities`` is every entity appearing in any fact.
    """

    def __init__(self, timestamp: int, facts: Sequence[Quadruple], num_entities: int):
        self.timestamp = int(timestamp)
        self.facts = tuple(facts)
        self.num_entities = int(num_entities)
        if self.facts:
            arr = np.asarray(self.facts, dtype=np.intp)
            self.subjects = np.ascontiguousarray(arr[:, 0])
            self.relations = np.ascontiguousarray(arr[:, 1])
            self.objects = np.ascontiguousarray(arr[:, 2])
        else:
            self.subjects = np.empty(0, dtype=np.intp)
            self.relations = np.empty(0, dtype=np.intp)
            self.objects = np.empty(0, dtype=np.intp)
        self.in_degree = np.bincount(self.objects, minlength=num_entities).astype(np.intp)
        self.active_entities = frozenset(self.subjects.tolist()) | frozenset(self.objects.tolist())
        rel_entities: dict[int, set[int]] = {}
        for q in self.facts:
            rel_entities.setdefault(q.r, set()).update((q.s, q.o))
        self.rel_entities = {r: frozenset(v) for r, v in rel_entities.items()}

    @property
    def num_facts(self) -> int:
        return len(self.facts)

    @cached_property
    def inv_in_degree(self) -> np.ndarray:
        """(|V|, 1) column of 1/c_o where c_o > 0, else 0."""
        deg = self.in_degree.astype(np.float64)
        with np.errstate(divide="ignore"):
            inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
        return inv[:, None]

    @cached_property
    def receiver_mask(self) -> np.ndarray:
        """(|V|, 1) column: 1.0 for entities with incoming facts, else 0.0."""
        return (self.in_degree > 0).astype(np.float64)[:, None]

    def rel_member_pairs(self, num_relations: int):
        """Deterministic (relation_id, entity_id) arrays spanning
        ``rel_entities``, plus per-relation member counts."""
        rel_ids, ent_ids = [], []
        for r in sorted(self.rel_entities):
            for e in sorted(self.rel_entities[r]):
                rel_ids.append(r)
                ent_ids.append(e)
        counts = np.zeros(num_relations, dtype=np.float64)
        for r, members in self.rel_entities.items():
            counts[r] = len(members)
        return (np.asarray(rel_ids, dtype=np.intp),
                np.asarray(ent_ids, dtype=np.intp),
                counts)


@dataclass
class FactStore:
    """The whole snapshot sequence plus split boundaries.

    Immutable after construction; inverse augmentation returns a new store.
    ``timeline`` covers every snapshot index from 0 to the global maximum,
    including empty ones.  Split bounds are inclusive index ranges with
    train < valid < test.
    """

    num_entities: int
    num_relations: int
    timeline: list[Snapshot]
    split_bounds: dict[str, tuple[int, int] | None]
    augmented: bool = False
    min_time: int = 0
    interval: int = 1
    entity_names: list[str] | None = field(default=None, repr=False)

    @property
    def num_relation_slots(self) -> int:
        return 2 * self.num_relations if self.augmented else self.num_relations

    def split_snapshots(self, split: str) -> list[Snapshot]:
        if split not in self.split_bounds:
            raise DataError(f"unknown split {split!r}")
        bounds = self.split_bounds[split]
        if bounds is None:
            return []
        lo, hi = bounds
        return self.timeline[lo:hi + 1]

    @property
    def train_snapshots(self) -> list[Snapshot]:
        return self.split_snapshots("train")

    @property
    def valid_snapshots(self) -> list[Snapshot]:
        return self.split_snapshots("valid")

    @property
    def test_snapshots(self) -> list[Snapshot]:
        return self.split_snapshots("test")

    @property
    def num_train_timestamps(self) -> int:
        bounds = self.split_bounds["train"]
        return 0 if bounds is None else bounds[1] + 1

    def split_facts(self, split: str) -> list[Quadruple]:
        return [q for snap in self.split_snapshots(split) for q in snap.facts]

    def num_base_facts(self, split: str) -> int:
        count = len(self.split_facts(split))
        return count // 2 if self.augmented else count


def store_from_facts(facts_by_split: dict[str, list[Quadruple]],
                     num_entities: int, num_relations: int,
                     min_time: int = 0, interval: int = 1,
                     entity_names: list[str] | None = None) -> FactStore:
    """Build a FactStore from already-normalized in-memory quadruples."""
    if not facts_by_split.get("train"):
        raise DataError("empty split: train")
    for split, facts in facts_by_split.items():
        for q in facts:
            _check_ids(q, num_entities, num_relations, where=split)

    bounds: dict[str, tuple[int, int] | None] = {}
    prev_hi = -1
    prev_split = None
    for split in ("train", "valid", "test"):
        facts = facts_by_split.get(split) or []
        if not facts:
            bounds[split] = None
            continue
        times = [q.t for q in facts]
        lo, hi = min(times), max(times)
        if lo <= prev_hi:
            raise DataError(
                f"non-monotone split boundaries: {split} starts at snapshot {lo} "
                f"but {prev_split} ends at {prev_hi}"
            )
        # splits own every index after the previous split's last fact
        bounds[split] = (prev_hi + 1, hi)
        prev_hi = hi
        prev_split = split

    max_idx = prev_hi
    by_time: dict[int, list[Quadruple]] = {}
    for facts in facts_by_split.values():
        for q in facts:
            by_time.setdefault(q.t, []).append(q)
    timeline = [Snapshot(t, by_time.get(t, ()), num_entities)
                for t in range(max_idx + 1)]
    return FactStore(num_entities=num_entities, num_relations=num_relations,
                     timeline=timeline, split_bounds=bounds,
                     min_time=min_time, interval=interval,
                     entity_names=entity_names)


def _check_ids(q: Quadruple, num_entities: int, num_relations: int, where: str = ""):
    if not (0 <= q.s < num_entities and 0 <= q.o < num_entities):
        raise DataError(f"{where}: entity id out of range in {tuple(q)} (|V|={num_entities})")
    if not (0 <= q.r < num_relations):
        raise DataError(f"{where}: relation id out of range in {tuple(q)} (|R|={num_relations})")
    if q.t < 0:
        raise DataError(f"{where}: negative timestamp in {tuple(q)}")


def _parse_quadruple_file(path: str) -> list[tuple[int, int, int, int]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            # de-facto releases sometimes carry a trailing fifth column
            if len(parts) not in (4, 5):
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                s, r, o, t = (int(x) for x in parts[:4])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer field") from None
            rows.append((s, r, o, t))
    return rows


def _parse_stat_file(path: str) -> tuple[int, int]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().split()
    if len(first) < 2:
        raise DataError(f"{path}: stat file needs at least '|V| |R|'")
    try:
        num_entities, num_relations = int(first[0]), int(first[1])
    except ValueError:
        raise DataError(f"{path}: non-integer stat entries") from None
    if num_entities <= 0 or num_relations <= 0:
        raise DataError(f"{path}: non-positive entity/relation counts")
    return num_entities, num_relations


def _parse_names_file(path: str, num_entities: int) -> list[str]:
    names: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: expected 'id<TAB>name' or 'name<TAB>id'")
            try:
                ent = int(parts[0])
                name = "\t".join(parts[1:])
            except ValueError:
                try:
                    ent = int(parts[-1])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: no integer id field") from None
                name = "\t".join(parts[:-1])
            names[ent] = name
    missing = [i for i in range(num_entities) if i not in names]
    if missing:
        raise DataError(
            f"{path}: names missing for {len(missing)} of {num_entities} entities "
            f"(first missing id {missing[0]})"
        )
    return [names[i] for i in range(num_entities)]


def load_quadruples(train_path: str, valid_path: str, test_path: str,
                    stat_path: str, names_path: str | None = None) -> FactStore:
    """Parse the split files into a FactStore with normalized timestamps.

    The snapshot interval is inferred as the GCD of gaps between successive
    raw times across all splits; snapshot index = (raw - min) / interval.
    """
    num_entities, num_relations = _parse_stat_file(stat_path)
    raw = {
        "train": _parse_quadruple_file(train_path),
        "valid": _parse_quadruple_file(valid_path),
        "test": _parse_quadruple_file(test_path),
    }
    if not raw["train"]:
        raise DataError("empty split: train")

    all_times = sorted({t for rows in raw.values() for (_, _, _, t) in rows})
    min_time = all_times[0]
    interval = 0
    for a, b in zip(all_times, all_times[1:]):
        interval = math.gcd(interval, b - a)
    if interval == 0:
        interval = 1

    facts_by_split = {
        split: [Quadruple(s, r, o, (t - min_time) // interval)
                for (s, r, o, t) in rows]
        for split, rows in raw.items()
    }
    names = _parse_names_file(names_path, num_entities) if names_path else None
    return store_from_facts(facts_by_split, num_entities, num_relations,
                            min_time=min_time, interval=interval,
                            entity_names=names)


def load_directory(data_dir: str) -> FactStore:
    """Load train.txt/valid.txt/test.txt/stat.txt (and entity2id.txt when
    present) from a dataset directory."""
    paths = {name: os.path.join(data_dir, name + ".txt")
             for name in ("train", "valid", "test", "stat")}
    for name, p in paths.items():
        if not os.path.isfile(p):
            raise DataError(f"missing dataset file: {p}")
    names_path = os.path.join(data_dir, "entity2id.txt")
    return load_quadruples(paths["train"], paths["valid"], paths["test"],
                           paths["stat"],
                           names_path if os.path.isfile(names_path) else None)


def write_quadruple_files(store: FactStore, out_dir: str):
    """Serialize a store back to the line format (base facts only, raw
    timestamps reconstructed from the stored interval)."""
    os.makedirs(out_dir, exist_ok=True)
    for split in ("train", "valid", "test"):
        with open(os.path.join(out_dir, split + ".txt"), "w", encoding="utf-8") as fh:
            for snap in store.split_snapshots(split):
                for q in snap.facts:
                    if store.augmented and q.r >= store.num_relations:
                        continue
                    raw_t = q.t * store.interval + store.min_time
                    fh.write(f"{q.s}\t{q.r}\t{q.o}\t{raw_t}\n")
    with open(os.path.join(out_dir, "stat.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"{store.num_entities}\t{store.num_relations}\n")
    if store.entity_names is not None:
        with open(os.path.join(out_dir, "entity2id.txt"), "w", encoding="utf-8") as fh:
            for i, name in enumerate(store.entity_names):
                fh.write(f"{name}\t{i}\n")


def add_inverse_quadruples(store: FactStore) -> FactStore:
    """Append (o, r + |R|, s, t) for every fact, doubling the relation
    vocabulary; snapshot indexes are rebuilt."""
    if store.augmented:
        raise DataError("store already augmented with inverse quadruples")
    num_rel = store.num_relations
    timeline = []
    for snap in store.timeline:
        facts = list(snap.facts)
        facts += [Quadruple(q.o, q.r + num_rel, q.s, q.t) for q in snap.facts]
        timeline.append(Snapshot(snap.timestamp, facts, store.num_entities))
    return replace(store, timeline=timeline, augmented=True)


def history_window(store: FactStore, t: int, m: int) -> list[Snapshot]:
    """The snapshots at indices [max(0, t-m+1) .. t] of the concatenated
    timeline; truncated near the start, never padded."""
    if m < 1:
        raise ValueError(f"history length must be >= 1, got {m}")
    if not (0 <= t < len(store.timeline)):
        raise ValueError(f"snapshot index {t} outside timeline of length {len(store.timeline)}")
    return store.timeline[max(0, t - m + 1):t + 1]


# ---------------------------------------------------------------------------
# static graph

ISA_RELATION = 0
COUNTRY_RELATION = 1


@dataclass
class StaticGraph:
    """Entity -> property edges parsed from entity name strings.

    A name 'X (Y)' yields an isA edge to property 'X' and a country edge to
    property 'Y'; a bare name yields only the isA edge.  Property entities
    are deduplicated by exact string and live in their own id space.
    """

    num_tkg_entities: int
    num_static_entities: int
    num_static_relations: int
    edge_entities: np.ndarray
    edge_relations: np.ndarray
    edge_properties: np.ndarray
    neighbor_count: np.ndarray
    property_names: list[str]

    @property
    def num_edges(self) -> int:
        return len(self.edge_entities)


def _split_name(name: str) -> tuple[str, str | None]:
    """Split 'X (Y)' at the outermost parentheses; anything unparseable is
    a bare type name."""
    name = name.strip()
    if name.endswith(")"):
        idx = name.find("(")
        if 0 < idx:
            head = name[:idx].strip()
            inner = name[idx + 1:-1].strip()
            if head and inner:
                return head, inner
    return name, None


def build_static_graph(entity_names: Sequence[str]) -> StaticGraph:
    prop_ids: dict[str, int] = {}

    def prop(label: str) -> int:
        if label not in prop_ids:
            prop_ids[label] = len(prop_ids)
        return prop_ids[label]

    ents, rels, props = [], [], []
    for ent, name in enumerate(entity_names):
        head, country = _split_name(name)
        ents.append(ent)
        rels.append(ISA_RELATION)
        props.append(prop(head))
        if country is not None:
            ents.append(ent)
            rels.append(COUNTRY_RELATION)
            props.append(prop(country))

    num = len(entity_names)
    edge_entities = np.asarray(ents, dtype=np.intp)
    neighbor_count = np.bincount(edge_entities, minlength=num).astype(np.intp)
    return StaticGraph(
        num_tkg_entities=num,
        num_static_entities=len(prop_ids),
        num_static_relations=2,
        edge_entities=edge_entities,
        edge_relations=np.asarray(rels, dtype=np.intp),
        edge_properties=np.asarray(props, dtype=np.intp),
        neighbor_count=neighbor_count,
        property_names=list(prop_ids),
    )
