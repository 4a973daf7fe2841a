"""Longest n-gram entity mention detection and candidate tuple retrieval.

A gazetteer maps normalized label n-grams to entity ids.  Linking scans an
utterance left to right, always taking the longest gazetteer match at the
current token, so "new delhi" matches the two-token entity rather than any
single-token fragment.  Candidate retrieval unions the tuples touching the
matched entities, truncating under a cap by round-robin over the matched
entities with the rarest entity's tuples first (popular entities would
otherwise crowd out low-fanout ones).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .kg_store import KgStore, Tuple
from .text import normalize


@dataclass(frozen=True)
class Gazetteer:
    entries: dict[str, frozenset[int]]
    max_len: int  # longest entry, in tokens

    def lookup(self, phrase: str) -> frozenset[int]:
        return self.entries.get(" ".join(normalize(phrase)), frozenset())


@dataclass(frozen=True)
class Match:
    start: int  # token offsets into the normalized utterance
    end: int
    text: str
    entities: tuple[int, ...]


@dataclass(frozen=True)
class CandidateSet:
    matches: tuple[Match, ...]
    tuples: tuple[Tuple, ...]
    truncated: bool

    @property
    def entities(self) -> tuple[int, ...]:
        out: list[int] = []
        for m in self.matches:
            out.extend(m.entities)
        return tuple(dict.fromkeys(out))


def build_gazetteer(store: KgStore, aliases: Iterable[tuple[int, str]] = ()) -> Gazetteer:
    """Index every entity label (and optional aliases) after normalization."""
    entries: dict[str, set[int]] = {}
    max_len = 1
    for e in range(store.n_entities):
        tokens = normalize(store.entity_label(e))
        if not tokens:
            continue
        entries.setdefault(" ".join(tokens), set()).add(e)
        max_len = max(max_len, len(tokens))
    for ent, alias in aliases:
        tokens = normalize(alias)
        if not tokens:
            continue
        entries.setdefault(" ".join(tokens), set()).add(ent)
        max_len = max(max_len, len(tokens))
    return Gazetteer({k: frozenset(v) for k, v in entries.items()}, max_len)


def load_aliases(path: str | Path, store: KgStore) -> list[tuple[int, str]]:
    """Read an aliases.tsv of ``entity_id<TAB>alias`` lines (label-file ids
    are not used here; the id column is the store's dense entity id)."""
    out: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 fields")
            out.append((int(parts[0]), parts[1]))
    return out


def link(gazetteer: Gazetteer, utterance: str) -> list[Match]:
    """Greedy left-to-right longest-match over the normalized tokens."""
    tokens = normalize(utterance)
    matches: list[Match] = []
    i = 0
    while i < len(tokens):
        found = None
        for size in range(min(gazetteer.max_len, len(tokens) - i), 0, -1):
            key = " ".join(tokens[i : i + size])
            ids = gazetteer.entries.get(key)
            if ids:
                found = Match(i, i + size, key, tuple(sorted(ids)))
                break
        if found is None:
            i += 1
        else:
            matches.append(found)
            i = found.end
    return matches


def candidate_tuples(store: KgStore, matched: Sequence[int], cap: int = 10000) -> CandidateSet:
    """Tuples touching any matched entity, truncated fairly under ``cap``.

    Ordering is deterministic: matched entities sorted rarest first, one
    tuple taken from each in turn.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    entities = list(dict.fromkeys(matched))
    pools = {
        e: sorted(store.tuples_containing(e))
        for e in entities
    }
    order = sorted(entities, key=lambda e: (len(pools[e]), e))
    chosen: list[Tuple] = []
    seen: set[Tuple] = set()
    cursors = {e: 0 for e in order}
    truncated = False
    remaining = True
    while remaining:
        remaining = False
        for e in order:
            pool = pools[e]
            while cursors[e] < len(pool) and pool[cursors[e]] in seen:
                cursors[e] += 1
            if cursors[e] >= len(pool):
                continue
            remaining = True
            if len(chosen) >= cap:
                truncated = True
                remaining = False
                break
            t = pool[cursors[e]]
            chosen.append(t)
            seen.add(t)
            cursors[e] += 1
    return CandidateSet(matches=(), tuples=tuple(chosen), truncated=truncated)


def link_and_retrieve(
    store: KgStore,
    gazetteer: Gazetteer,
    utterance: str,
    cap: int = 10000,
    extra_entities: Sequence[int] = (),
) -> CandidateSet:
    """Link an utterance and fetch candidates; ``extra_entities`` lets the
    caller add context entities (e.g. the previous turn pair)."""
    matches = link(gazetteer, utterance)
    matched = [e for m in matches for e in m.entities]
    matched.extend(extra_entities)
    candidates = candidate_tuples(store, matched, cap)
    return CandidateSet(tuple(matches), candidates.tuples, candidates.truncated)


@dataclass(frozen=True)
class RecallReport:
    n_questions: int
    n_questions_with_gold: int
    micro_recall: float
    macro_recall: float
    per_state: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "n_questions": self.n_questions,
            "n_questions_with_gold": self.n_questions_with_gold,
            "micro_recall": self.micro_recall,
            "macro_recall": self.macro_recall,
            "per_state": dict(self.per_state),
        }


def recall_report(
    store: KgStore,
    gazetteer: Gazetteer,
    dialogs,
    cap: int = 10000,
    use_context: bool = True,
) -> RecallReport:
    """Fraction of gold plan tuples present in the linker's candidates.

    Measures, per user question over a generated corpus, how much of the
    provenance the n-gram linker actually retrieves; with ``use_context``
    the previous turn pair's entities join the current utterance's matches.
    """
    from . import query_algebra as qa
    from .dialog_machine import QUESTION_STATES

    n_questions = 0
    n_with_gold = 0
    hit_total = 0
    gold_total = 0
    ratios: list[float] = []
    per_state_hits: dict[str, list[float]] = {}
    for dialog in dialogs:
        pair_entities: tuple[int, ...] = ()  # previous turn pair, question + answer
        turns = dialog.turns if hasattr(dialog, "turns") else dialog
        for idx, turn in enumerate(turns):
            if turn.speaker != "user" or turn.state not in QUESTION_STATES:
                continue
            n_questions += 1
            plan = turn.plan
            if plan is None:
                # ambiguous question: the resolved plan sits on the following
                # clarification answer turn
                plan = next(
                    (t.plan for t in turns[idx + 1 :] if t.plan is not None), None
                )
            context = pair_entities if use_context else ()
            pair_entities = _pair_entities(turns, idx)
            if plan is None:
                continue
            gold = qa.plan_tuples(store, plan)
            if not gold:
                continue
            candidates = link_and_retrieve(store, gazetteer, turn.utterance, cap, context)
            got = gold & set(candidates.tuples)
            n_with_gold += 1
            hit_total += len(got)
            gold_total += len(gold)
            ratio = len(got) / len(gold)
            ratios.append(ratio)
            per_state_hits.setdefault(turn.state.value, []).append(ratio)
    per_state = {k: sum(v) / len(v) for k, v in sorted(per_state_hits.items())}
    return RecallReport(
        n_questions=n_questions,
        n_questions_with_gold=n_with_gold,
        micro_recall=hit_total / gold_total if gold_total else 1.0,
        macro_recall=sum(ratios) / len(ratios) if ratios else 1.0,
        per_state=per_state,
    )


def _pair_entities(turns, question_idx: int) -> tuple[int, ...]:
    """Entities of the turn pair opened at ``question_idx``: the question
    plus the system turns up to the next user question."""
    from .dialog_machine import QUESTION_STATES

    out: list[int] = list(turns[question_idx].entities)
    for turn in turns[question_idx + 1 :]:
        if turn.speaker == "user" and turn.state in QUESTION_STATES:
            break
        out.extend(turn.entities)
    return tuple(dict.fromkeys(out))
