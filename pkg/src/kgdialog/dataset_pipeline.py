"""Corpus-scale dialog generation, tuple-separated splits and statistics.

A corpus records, per dialog, the set of store tuples any of its plans
depended on (its provenance).  Splitting first partitions the tuple set by
seeded hash and then assigns each dialog to the split owning all of its
tuples; dialogs straddling partitions are discarded and the discard count
is reported, since silently dropping them would bias the corpus toward
short dialogs.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import dialog_machine as dm, plan_text, query_algebra as qa
from .config import RunConfig
from .kg_store import KgStore, Tuple
from .templates import QuestionTemplate


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class Dialog:
    dialog_id: str
    seed: int
    turns: tuple[dm.DialogTurn, ...]


@dataclass
class Corpus:
    dialogs: list[Dialog]
    provenance: dict[str, frozenset[Tuple]]
    shortfall: int = 0  # dialogs requested but not generatable


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def validate(self) -> None:
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise PipelineError(f"bad split fractions {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise PipelineError(f"split fractions must sum to 1, got {self.fractions}")


@dataclass
class SplitResult:
    train: list[Dialog]
    valid: list[Dialog]
    test: list[Dialog]
    discarded: list[Dialog]
    tuple_partition: dict[str, frozenset[Tuple]] = field(default_factory=dict)


@dataclass(frozen=True)
class CorpusStats:
    n_dialogs: int
    n_turns: int
    n_questions: int
    avg_utterances_per_dialog: float
    avg_question_words: float
    avg_response_words: float
    avg_distinct_states_per_dialog: float
    vocab_size: int
    vocab_threshold: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# published full-scale corpus statistics, shown as context next to toy runs;
# they are not reproduction targets (they required the original full KG dump
# and manual curation)
FULL_SCALE_REFERENCE = {
    "train": {
        "n_dialogs": 152391,
        "avg_utterances_per_dialog": 15.9,
        "avg_question_words": 9.7,
        "avg_response_words": 4.74,
        "avg_distinct_states_per_dialog": 3.89,
        "vocab_size_freq_ge_10": 100_000,
    },
    "valid": {
        "n_dialogs": 16413,
        "avg_utterances_per_dialog": 15.65,
        "avg_question_words": 9.68,
        "avg_response_words": 4.67,
        "avg_distinct_states_per_dialog": 3.84,
    },
    "test": {
        "n_dialogs": 27797,
        "avg_utterances_per_dialog": 19.44,
        "avg_question_words": 10.28,
        "avg_response_words": 4.37,
        "avg_distinct_states_per_dialog": 4.53,
    },
}


# -- generation ------------------------------------------------------------------


def dialog_provenance(store: KgStore, turns: Iterable[dm.DialogTurn]) -> frozenset[Tuple]:
    out: set[Tuple] = set()
    for turn in turns:
        if turn.plan is not None:
            out |= qa.plan_tuples(store, turn.plan)
    return frozenset(out)


def generate_corpus(
    store: KgStore,
    templates: Sequence[QuestionTemplate],
    n_dialogs: int,
    config: RunConfig | None = None,
    seed: int = 0,
) -> Corpus:
    """Generate ``n_dialogs`` dialogs (or fewer if the store exhausts
    linkable content; the shortfall is reported on the corpus)."""
    if n_dialogs < 0:
        raise PipelineError("n_dialogs must be >= 0")
    config = config or RunConfig()
    seed_stream = random.Random(seed)
    dialogs: list[Dialog] = []
    provenance: dict[str, frozenset[Tuple]] = {}
    shortfall = 0
    for i in range(n_dialogs):
        dialog_seed = seed_stream.getrandbits(32)
        try:
            turns = dm.generate_dialog(store, templates, dialog_seed, config)
        except dm.DialogError:
            shortfall = n_dialogs - i
            break
        dialog_id = f"d{i:06d}"
        dialogs.append(Dialog(dialog_id, dialog_seed, tuple(turns)))
        provenance[dialog_id] = dialog_provenance(store, turns)
    return Corpus(dialogs, provenance, shortfall)


# -- serialization ----------------------------------------------------------------


def answer_to_obj(answer: qa.AnswerSet | None) -> dict | None:
    if answer is None:
        return None
    if isinstance(answer, qa.Entities):
        obj: dict = {"kind": "entities", "members": sorted(answer.members)}
        if answer.partition is not None:
            obj["partition"] = [[ty, sorted(part)] for ty, part in answer.partition]
        return obj
    if isinstance(answer, qa.Counts):
        return {"kind": "counts", "counts": [[ty, n] for ty, n in answer.counts]}
    if isinstance(answer, qa.Booleans):
        return {"kind": "booleans", "values": list(answer.values)}
    raise PipelineError(f"cannot serialize {type(answer).__name__}")


def answer_from_obj(obj: dict | None) -> qa.AnswerSet | None:
    if obj is None:
        return None
    kind = obj["kind"]
    if kind == "entities":
        partition = obj.get("partition")
        return qa.Entities(
            frozenset(obj["members"]),
            tuple((ty, frozenset(part)) for ty, part in partition) if partition else None,
        )
    if kind == "counts":
        return qa.Counts(tuple((ty, n) for ty, n in obj["counts"]))
    if kind == "booleans":
        return qa.Booleans(tuple(bool(v) for v in obj["values"]))
    raise PipelineError(f"unknown answer kind {kind!r}")


def dialog_to_obj(dialog: Dialog, store: KgStore, provenance: frozenset[Tuple]) -> dict:
    return {
        "dialog_id": dialog.dialog_id,
        "seed": dialog.seed,
        "turns": [
            {
                "speaker": t.speaker,
                "state": t.state.value,
                "utterance": t.utterance,
                "entities": list(t.entities),
                "plan": plan_text.print_plan(t.plan, store) if t.plan is not None else None,
                "answer": answer_to_obj(t.answer),
            }
            for t in dialog.turns
        ],
        "provenance": sorted([t.relation, t.subject, t.object] for t in provenance),
    }


def dialog_from_obj(obj: dict, store: KgStore) -> tuple[Dialog, frozenset[Tuple]]:
    turns = tuple(
        dm.DialogTurn(
            speaker=t["speaker"],
            state=dm.TurnState(t["state"]),
            utterance=t["utterance"],
            entities=tuple(t["entities"]),
            plan=plan_text.parse_plan(t["plan"], store) if t["plan"] else None,
            answer=answer_from_obj(t["answer"]),
        )
        for t in obj["turns"]
    )
    provenance = frozenset(Tuple(r, s, o) for r, s, o in obj.get("provenance", []))
    return Dialog(obj["dialog_id"], obj["seed"], turns), provenance


def write_corpus(corpus: Corpus, store: KgStore, path: str | Path) -> None:
    """One dialog per line; key order and separators are fixed so identical
    corpora serialize byte-identically."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.dialogs:
            obj = dialog_to_obj(d, store, corpus.provenance[d.dialog_id])
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_corpus(path: str | Path, store: KgStore) -> Corpus:
    dialogs: list[Dialog] = []
    provenance: dict[str, frozenset[Tuple]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            dialog, prov = dialog_from_obj(json.loads(line), store)
            dialogs.append(dialog)
            provenance[dialog.dialog_id] = prov
    return Corpus(dialogs, provenance)


# -- splitting -------------------------------------------------------------------


def _tuple_unit(seed: int, t: Tuple) -> float:
    digest = hashlib.sha256(f"{seed}:{t.relation}:{t.subject}:{t.object}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def partition_tuples(
    tuples: Iterable[Tuple], spec: SplitSpec
) -> dict[str, frozenset[Tuple]]:
    """Deterministically partition tuples into train/valid/test by seeded hash."""
    spec.validate()
    train_cut = spec.fractions[0]
    valid_cut = spec.fractions[0] + spec.fractions[1]
    out: dict[str, set[Tuple]] = {"train": set(), "valid": set(), "test": set()}
    for t in sorted(tuples):
        u = _tuple_unit(spec.seed, t)
        if u < train_cut:
            out["train"].add(t)
        elif u < valid_cut:
            out["valid"].add(t)
        else:
            out["test"].add(t)
    return {k: frozenset(v) for k, v in out.items()}


def split_corpus(corpus: Corpus, spec: SplitSpec) -> SplitResult:
    """Assign dialogs to the split owning all their provenance tuples.

    Guarantees empty tuple-provenance intersection between train and
    valid/test.  Dialogs whose provenance straddles partitions are
    discarded; dialogs with empty provenance default to train.
    """
    spec.validate()
    universe: set[Tuple] = set()
    for prov in corpus.provenance.values():
        universe |= prov
    parts = partition_tuples(universe, spec)

    result = SplitResult([], [], [], [], tuple_partition=parts)
    buckets = {"train": result.train, "valid": result.valid, "test": result.test}
    for d in corpus.dialogs:
        prov = corpus.provenance.get(d.dialog_id, frozenset())
        if not prov:
            result.train.append(d)
            continue
        owner = None
        for name, part in parts.items():
            if prov <= part:
                owner = name
                break
        if owner is None:
            result.discarded.append(d)
        else:
            buckets[owner].append(d)
    return result


def split_report(corpus: Corpus, result: SplitResult) -> dict:
    def prov_union(dialogs: list[Dialog]) -> set[Tuple]:
        out: set[Tuple] = set()
        for d in dialogs:
            out |= corpus.provenance.get(d.dialog_id, frozenset())
        return out

    train_prov = prov_union(result.train)
    eval_prov = prov_union(result.valid) | prov_union(result.test)
    return {
        "n_train": len(result.train),
        "n_valid": len(result.valid),
        "n_test": len(result.test),
        "n_discarded": len(result.discarded),
        "provenance_overlap_train_eval": len(train_prov & eval_prov),
    }


# -- statistics -------------------------------------------------------------------


def corpus_stats(corpus: Corpus, vocab_threshold: int = 10) -> CorpusStats:
    """Structural statistics; question turns are user turns in question
    states, response lengths count system Response turns."""
    n_dialogs = len(corpus.dialogs)
    n_turns = 0
    question_words: list[int] = []
    response_words: list[int] = []
    distinct_states: list[int] = []
    vocab: dict[str, int] = {}
    for d in corpus.dialogs:
        n_turns += len(d.turns)
        distinct_states.append(len({t.state for t in d.turns}))
        for t in d.turns:
            for token in t.utterance.split():
                vocab[token] = vocab.get(token, 0) + 1
            if t.speaker == "user" and t.state in dm.QUESTION_STATES:
                question_words.append(len(t.utterance.split()))
            elif t.speaker == "system" and t.state == dm.TurnState.RESPONSE:
                response_words.append(len(t.utterance.split()))

    def mean(xs: list[int]) -> float:
        return sum(xs) / len(xs) if xs else 0.0

    return CorpusStats(
        n_dialogs=n_dialogs,
        n_turns=n_turns,
        n_questions=len(question_words),
        avg_utterances_per_dialog=n_turns / n_dialogs if n_dialogs else 0.0,
        avg_question_words=mean(question_words),
        avg_response_words=mean(response_words),
        avg_distinct_states_per_dialog=mean(distinct_states),
        vocab_size=sum(1 for c in vocab.values() if c >= vocab_threshold),
        vocab_threshold=vocab_threshold,
    )
