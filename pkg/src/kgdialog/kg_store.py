"""Immutable, indexed tuple store over (relation, subject, object) facts.

The store is built once from three tab-separated files (tuples, labels,
types) and never mutated afterwards, so concurrent readers need no locking.
Entities, relations and types live in separate dense integer id spaces
assigned in label-file order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

log = logging.getLogger(__name__)

ENTITY = "E"
RELATION = "R"
TYPE = "T"
_KINDS = (ENTITY, RELATION, TYPE)


class KgError(ValueError):
    """Base error for store construction and lookups."""


class LoadError(KgError):
    """Raised when an input file is malformed or references unknown ids."""


class UnknownIdError(KgError):
    """Raised when an operation receives an id the store has never seen."""


class Tuple(NamedTuple):
    relation: int
    subject: int
    object: int


@dataclass(frozen=True)
class StoreStats:
    """Counts over a store; every field is re-derivable by brute force."""

    n_tuples: int
    n_entities: int
    n_relations: int
    n_entities_in_tuples: int
    fanout_histogram: Mapping[int, int]
    n_fanout_ge3: int
    n_one_one: int
    n_one_many: int


class KgStore:
    """Tuple set plus lookup indices, entity types, and labels.

    Instances are created by :func:`load` (or internally by the filter
    operations) and treated as immutable afterwards.
    """

    def __init__(
        self,
        tuples: Iterable[Tuple],
        entity_labels: list[str],
        relation_labels: list[str],
        type_labels: list[str],
        entity_types: dict[int, frozenset[int]],
    ):
        self.tuples: frozenset[Tuple] = frozenset(tuples)
        self.entity_labels = list(entity_labels)
        self.relation_labels = list(relation_labels)
        self.type_labels = list(type_labels)
        self.entity_types: dict[int, frozenset[int]] = dict(entity_types)

        self.by_rel_subj: dict[tuple[int, int], frozenset[int]] = {}
        self.by_rel_obj: dict[tuple[int, int], frozenset[int]] = {}
        self.by_entity: dict[int, frozenset[Tuple]] = {}
        self.type_members: dict[int, frozenset[int]] = {}

        rs: dict[tuple[int, int], set[int]] = {}
        ro: dict[tuple[int, int], set[int]] = {}
        ent: dict[int, set[Tuple]] = {}
        for t in self.tuples:
            rs.setdefault((t.relation, t.subject), set()).add(t.object)
            ro.setdefault((t.relation, t.object), set()).add(t.subject)
            ent.setdefault(t.subject, set()).add(t)
            ent.setdefault(t.object, set()).add(t)
        self.by_rel_subj = {k: frozenset(v) for k, v in rs.items()}
        self.by_rel_obj = {k: frozenset(v) for k, v in ro.items()}
        self.by_entity = {k: frozenset(v) for k, v in ent.items()}

        members: dict[int, set[int]] = {}
        for e, types in self.entity_types.items():
            for ty in types:
                members.setdefault(ty, set()).add(e)
        self.type_members = {k: frozenset(v) for k, v in members.items()}

        self._entity_ids_by_label: dict[str, list[int]] = {}
        for i, lab in enumerate(self.entity_labels):
            self._entity_ids_by_label.setdefault(lab, []).append(i)
        self._relation_id_by_label = _unique_index(self.relation_labels)
        self._type_id_by_label = _unique_index(self.type_labels)

    # -- id/label resolution ------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    @property
    def n_types(self) -> int:
        return len(self.type_labels)

    def entity_label(self, e: int) -> str:
        self._check_entity(e)
        return self.entity_labels[e]

    def relation_label(self, r: int) -> str:
        self._check_relation(r)
        return self.relation_labels[r]

    def type_label(self, ty: int) -> str:
        self._check_type(ty)
        return self.type_labels[ty]

    def entity_id(self, label: str) -> int:
        ids = self._entity_ids_by_label.get(label, [])
        if not ids:
            raise UnknownIdError(f"unknown entity label {label!r}")
        if len(ids) > 1:
            raise KgError(f"ambiguous entity label {label!r}: ids {ids}")
        return ids[0]

    def relation_id(self, label: str) -> int:
        try:
            return self._relation_id_by_label[label]
        except KeyError:
            raise UnknownIdError(f"unknown relation label {label!r}") from None

    def type_id(self, label: str) -> int:
        try:
            return self._type_id_by_label[label]
        except KeyError:
            raise UnknownIdError(f"unknown type label {label!r}") from None

    # -- lookups ------------------------------------------------------------

    def objects_of(self, relation: int, subject: int) -> frozenset[int]:
        """Objects o with (relation, subject, o) in the store."""
        self._check_relation(relation)
        self._check_entity(subject)
        return self.by_rel_subj.get((relation, subject), frozenset())

    def subjects_of(self, relation: int, obj: int) -> frozenset[int]:
        """Subjects s with (relation, s, obj) in the store."""
        self._check_relation(relation)
        self._check_entity(obj)
        return self.by_rel_obj.get((relation, obj), frozenset())

    def entities_of_type(self, ty: int) -> frozenset[int]:
        self._check_type(ty)
        return self.type_members.get(ty, frozenset())

    def tuples_containing(self, entity: int) -> frozenset[Tuple]:
        self._check_entity(entity)
        return self.by_entity.get(entity, frozenset())

    def types_of(self, entity: int) -> frozenset[int]:
        self._check_entity(entity)
        return self.entity_types.get(entity, frozenset())

    def has_type(self, entity: int, ty: int) -> bool:
        return ty in self.entity_types.get(entity, frozenset())

    def _check_entity(self, e: int) -> None:
        if not isinstance(e, int) or not 0 <= e < len(self.entity_labels):
            raise UnknownIdError(f"unknown entity id {e!r}")

    def _check_relation(self, r: int) -> None:
        if not isinstance(r, int) or not 0 <= r < len(self.relation_labels):
            raise UnknownIdError(f"unknown relation id {r!r}")

    def _check_type(self, ty: int) -> None:
        if not isinstance(ty, int) or not 0 <= ty < len(self.type_labels):
            raise UnknownIdError(f"unknown type id {ty!r}")


def _unique_index(labels: list[str]) -> dict[str, int]:
    out: dict[str, int] = {}
    for i, lab in enumerate(labels):
        out.setdefault(lab, i)
    return out


# -- loading ----------------------------------------------------------------


def load(tuple_file: str | Path, label_file: str | Path, type_file: str | Path) -> KgStore:
    """Build a store from the three tab-separated input files.

    labels.tsv lines are ``file_id<TAB>kind<TAB>label`` with kind one of
    E/R/T; dense ids are assigned per kind in file order.  tuples.tsv lines
    are ``rel<TAB>subj<TAB>obj`` and types.tsv lines ``entity<TAB>type``,
    both referring to label-file ids.  Malformed lines raise
    :class:`LoadError` with the line number; dangling references raise
    :class:`LoadError` naming the id.  Duplicate tuples are dropped (a
    count is logged).
    """
    file_ids: dict[str, dict[str, int]] = {ENTITY: {}, RELATION: {}, TYPE: {}}
    labels: dict[str, list[str]] = {ENTITY: [], RELATION: [], TYPE: []}

    for lineno, parts in _records(label_file, 3):
        fid, kind, label = parts
        if kind not in _KINDS:
            raise LoadError(f"{label_file}:{lineno}: bad kind {kind!r} (expected E, R or T)")
        if fid in file_ids[kind]:
            raise LoadError(f"{label_file}:{lineno}: duplicate {kind} id {fid!r}")
        file_ids[kind][fid] = len(labels[kind])
        labels[kind].append(label)

    entity_types: dict[int, set[int]] = {}
    for lineno, parts in _records(type_file, 2):
        efid, tfid = parts
        e = _resolve(file_ids[ENTITY], efid, "entity", type_file, lineno)
        ty = _resolve(file_ids[TYPE], tfid, "type", type_file, lineno)
        entity_types.setdefault(e, set()).add(ty)

    tuples: list[Tuple] = []
    seen: set[Tuple] = set()
    duplicates = 0
    for lineno, parts in _records(tuple_file, 3):
        rfid, sfid, ofid = parts
        r = _resolve(file_ids[RELATION], rfid, "relation", tuple_file, lineno)
        s = _resolve(file_ids[ENTITY], sfid, "entity", tuple_file, lineno)
        o = _resolve(file_ids[ENTITY], ofid, "entity", tuple_file, lineno)
        for fid, e in ((sfid, s), (ofid, o)):
            if e not in entity_types:
                raise LoadError(
                    f"{tuple_file}:{lineno}: entity {fid!r} has no type assignment"
                )
        t = Tuple(r, s, o)
        if t in seen:
            duplicates += 1
            continue
        seen.add(t)
        tuples.append(t)
    if duplicates:
        log.info("dropped %d duplicate tuples from %s", duplicates, tuple_file)

    return KgStore(
        tuples,
        labels[ENTITY],
        labels[RELATION],
        labels[TYPE],
        {e: frozenset(ts) for e, ts in entity_types.items()},
    )


def load_dir(directory: str | Path) -> KgStore:
    """Load a store from a directory holding tuples.tsv/labels.tsv/types.tsv."""
    d = Path(directory)
    return load(d / "tuples.tsv", d / "labels.tsv", d / "types.tsv")


def save_dir(store: KgStore, directory: str | Path) -> None:
    """Write a store back to the three-file format (dense ids become the
    file ids, prefixed per kind)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "labels.tsv", "w", encoding="utf-8") as fh:
        for i, label in enumerate(store.relation_labels):
            fh.write(f"r{i}\t{RELATION}\t{label}\n")
        for i, label in enumerate(store.entity_labels):
            fh.write(f"e{i}\t{ENTITY}\t{label}\n")
        for i, label in enumerate(store.type_labels):
            fh.write(f"t{i}\t{TYPE}\t{label}\n")
    with open(d / "types.tsv", "w", encoding="utf-8") as fh:
        for e in sorted(store.entity_types):
            for ty in sorted(store.entity_types[e]):
                fh.write(f"e{e}\tt{ty}\n")
    with open(d / "tuples.tsv", "w", encoding="utf-8") as fh:
        for t in sorted(store.tuples):
            fh.write(f"r{t.relation}\te{t.subject}\te{t.object}\n")


def _records(path: str | Path, width: int):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != width:
                raise LoadError(
                    f"{path}:{lineno}: expected {width} tab-separated fields, got {len(parts)}"
                )
            yield lineno, parts


def _resolve(index: dict[str, int], fid: str, kind: str, path, lineno: int) -> int:
    try:
        return index[fid]
    except KeyError:
        raise LoadError(f"{path}:{lineno}: unknown {kind} id {fid!r}") from None


# -- filtering --------------------------------------------------------------


def filter_relations(store: KgStore, allowlist: set[int]) -> KgStore:
    """Keep exactly the tuples whose relation is in ``allowlist``.

    Id spaces and labels are preserved so plans remain valid across the
    filter.  An allowlist entry outside the known relations is an error.
    """
    for r in allowlist:
        store._check_relation(r)
    kept = [t for t in store.tuples if t.relation in allowlist]
    return KgStore(
        kept,
        store.entity_labels,
        store.relation_labels,
        store.type_labels,
        store.entity_types,
    )


def filter_types(store: KgStore, coverage_fraction: float) -> tuple[KgStore, frozenset[int]]:
    """Retain the most-participating types covering the requested tuple share.

    Types are ranked by the number of tuples any member participates in;
    the smallest prefix of that ranking whose surviving tuples (those whose
    subject and object both keep at least one type) reach
    ``coverage_fraction`` of the tuple count is retained.  Entities keep
    only retained types; tuples whose subject or object loses all types
    are dropped.
    """
    if not 0.0 <= coverage_fraction <= 1.0:
        raise KgError(f"coverage_fraction must be in [0, 1], got {coverage_fraction}")

    total = len(store.tuples)
    participation: dict[int, int] = {ty: 0 for ty in range(store.n_types)}
    for t in store.tuples:
        touched = store.types_of(t.subject) | store.types_of(t.object)
        for ty in touched:
            participation[ty] += 1

    ranked = sorted(participation, key=lambda ty: (-participation[ty], ty))
    retained: set[int] = set()
    if total:
        covered = 0
        for ty in ranked:
            if covered / total >= coverage_fraction:
                break
            retained.add(ty)
            covered = sum(1 for t in store.tuples if _survives(store, t, retained))
        if covered / total < coverage_fraction:
            # only reachable when even all types cannot reach the target,
            # which cannot happen since full retention keeps every tuple
            retained = set(ranked)

    new_types = {
        e: frozenset(ts & retained)
        for e, ts in store.entity_types.items()
        if ts & retained
    }
    kept = [t for t in store.tuples if _survives(store, t, retained)]
    new_store = KgStore(
        kept,
        store.entity_labels,
        store.relation_labels,
        store.type_labels,
        new_types,
    )
    return new_store, frozenset(retained)


def _survives(store: KgStore, t: Tuple, retained: set[int]) -> bool:
    return bool(store.types_of(t.subject) & retained) and bool(
        store.types_of(t.object) & retained
    )


# -- statistics ---------------------------------------------------------------


def stats(store: KgStore) -> StoreStats:
    """Counts over the store; fanout is the number of tuples containing an entity."""
    fanout: dict[int, int] = {e: 0 for e in range(store.n_entities)}
    in_tuples: set[int] = set()
    for t in store.tuples:
        seen = {t.subject, t.object}
        for e in seen:
            fanout[e] += 1
        in_tuples |= seen

    histogram: dict[int, int] = {}
    for e, f in fanout.items():
        histogram[f] = histogram.get(f, 0) + 1

    group_sizes: dict[tuple[int, int], int] = {}
    for t in store.tuples:
        key = (t.relation, t.subject)
        group_sizes[key] = group_sizes.get(key, 0) + 1
    one_one = sum(n for n in group_sizes.values() if n == 1)
    one_many = sum(n for n in group_sizes.values() if n > 1)

    return StoreStats(
        n_tuples=len(store.tuples),
        n_entities=store.n_entities,
        n_relations=store.n_relations,
        n_entities_in_tuples=len(in_tuples),
        fanout_histogram=histogram,
        n_fanout_ge3=sum(1 for f in fanout.values() if f >= 3),
        n_one_one=one_one,
        n_one_many=one_many,
    )
