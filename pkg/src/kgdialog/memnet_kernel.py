"""Pure numeric reference of the key-value memory read path.

Memory rows pair a key (relation and subject embeddings concatenated) with
a value (the object embedding).  A query vector attends over projected
keys, folds the attended projected values back in, and is remapped once
per hop; after the final hop a separate map scores the candidate objects
into a copy distribution.  No training happens here: all parameter
matrices are inputs.

Values live in D dimensions but the single projection A expects the key
width 2D, so value rows are lifted by zero-padding on the relation half
(the object vector occupies the same columns as the subject embedding).
Callers preferring a separate value projection can pass one explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .entity_linker import CandidateSet
from .kg_embed import EmbeddingTable
from .kg_store import Tuple

DEFAULT_HOPS = 2
DEFAULT_MEMORY_CAP = 10000

KG_WORD = "KG_WORD"


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class MemorySlab:
    keys: np.ndarray    # (N, 2D)
    values: np.ndarray  # (N, D)
    provenance: tuple[Tuple, ...]

    @property
    def size(self) -> int:
        return self.keys.shape[0]


@dataclass(frozen=True)
class HopParams:
    """Hop maps: A projects key space to query space, one square map per
    hop remixes the query, B scores values for the copy distribution."""

    A: np.ndarray               # (d, D_kv)
    R: tuple[np.ndarray, ...]   # H maps, each (d, d)
    B: np.ndarray               # (d, D)
    value_map: np.ndarray | None = None  # optional (d, D) alternative to zero-padding
    anchor_mode: str = "current"  # "current" re-adds q_j each hop, "initial" q_1

    @property
    def hops(self) -> int:
        return len(self.R)

    def validate(self, slab: MemorySlab) -> None:
        d, d_kv = self.A.shape
        if d_kv != slab.keys.shape[1]:
            raise KernelError(
                f"A maps key width {d_kv}, memory keys have width {slab.keys.shape[1]}"
            )
        if self.hops < 1:
            raise KernelError("need at least one hop map")
        for j, r in enumerate(self.R, start=1):
            if r.shape != (d, d):
                raise KernelError(f"hop map {j} must be {d}x{d}, got {r.shape}")
        if self.B.shape != (d, slab.values.shape[1]):
            raise KernelError(
                f"B must be {d}x{slab.values.shape[1]}, got {self.B.shape}"
            )
        if self.value_map is not None and self.value_map.shape != (d, slab.values.shape[1]):
            raise KernelError("value map must be d x D")
        if self.anchor_mode not in ("current", "initial"):
            raise KernelError(f"unknown anchor mode {self.anchor_mode!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax; stable for logit magnitudes up to ~1e4."""
    shifted = logits - np.max(logits)
    exp = np.exp(shifted)
    return exp / np.sum(exp)


def build_memory(candidates: CandidateSet | Sequence[Tuple], table: EmbeddingTable) -> MemorySlab:
    """Slab rows follow candidate order: key i = (relation_i ‖ subject_i),
    value i = object_i."""
    tuples = tuple(candidates.tuples if isinstance(candidates, CandidateSet) else candidates)
    d = table.dim
    keys = np.zeros((len(tuples), 2 * d))
    values = np.zeros((len(tuples), d))
    for i, t in enumerate(tuples):
        keys[i, :d] = table.relation(t.relation)
        keys[i, d:] = table.entity(t.subject)
        values[i] = table.entity(t.object)
    return MemorySlab(keys, values, tuples)


def _lift_values(slab: MemorySlab) -> np.ndarray:
    pad = np.zeros((slab.size, slab.keys.shape[1] - slab.values.shape[1]))
    return np.concatenate([pad, slab.values], axis=1)


def hop(
    q: np.ndarray,
    slab: MemorySlab,
    A: np.ndarray,
    R_j: np.ndarray,
    anchor_q: np.ndarray,
    value_map: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One memory pass: returns (next query, attention weights)."""
    if slab.size == 0:
        raise KernelError("cannot hop over an empty memory")
    d, d_kv = A.shape
    if d_kv != slab.keys.shape[1] or q.shape != (d,) or anchor_q.shape != (d,):
        raise KernelError(
            f"dimension mismatch: A {A.shape}, keys {slab.keys.shape}, q {q.shape}"
        )
    projected_keys = slab.keys @ A.T        # (N, d)
    weights = softmax(projected_keys @ q)   # (N,)
    if value_map is None:
        projected_values = _lift_values(slab) @ A.T
    else:
        projected_values = slab.values @ value_map.T
    read = projected_values.T @ weights     # (d,)
    q_next = R_j @ (anchor_q + read)
    if not np.all(np.isfinite(q_next)):
        raise KernelError("hop produced non-finite values")
    return q_next, weights


@dataclass(frozen=True)
class MultiHopResult:
    q_final: np.ndarray
    attentions: tuple[np.ndarray, ...]


def multi_hop(q1: np.ndarray, slab: MemorySlab, params: HopParams) -> MultiHopResult:
    """Run all hops; the anchor re-added inside each hop is the current
    query by default ("initial" re-adds q1 instead)."""
    params.validate(slab)
    q = np.asarray(q1, dtype=float)
    attentions: list[np.ndarray] = []
    for j in range(params.hops):
        anchor = np.asarray(q1, dtype=float) if params.anchor_mode == "initial" else q
        q, weights = hop(q, slab, params.A, params.R[j], anchor, params.value_map)
        attentions.append(weights)
    return MultiHopResult(q, tuple(attentions))


def entity_distribution(q_final: np.ndarray, slab: MemorySlab, B: np.ndarray) -> np.ndarray:
    """Copy distribution over memory rows: softmax of q·(B value_i)."""
    if slab.size == 0:
        raise KernelError("cannot score an empty memory")
    if B.shape != (q_final.shape[0], slab.values.shape[1]):
        raise KernelError(f"B must map value width {slab.values.shape[1]} to query width")
    return softmax((slab.values @ B.T) @ q_final)


def substitute_kg_words(
    tokens: Sequence[str],
    distribution: np.ndarray,
    slab: MemorySlab,
    labels: Sequence[str] | None = None,
    placeholder: str = KG_WORD,
) -> list[str]:
    """Replace placeholder tokens with the top distinct candidate objects.

    Row probabilities are summed per object entity (so duplicated rows do
    not double-rank an entity); entities fill the placeholders in
    descending probability, ties broken by entity id.
    """
    if len(distribution) != slab.size:
        raise KernelError("distribution length must match memory size")
    per_entity: dict[int, float] = {}
    for i, t in enumerate(slab.provenance):
        per_entity[t.object] = per_entity.get(t.object, 0.0) + float(distribution[i])
    ranked = sorted(per_entity.items(), key=lambda kv: (-kv[1], kv[0]))
    out: list[str] = []
    cursor = 0
    for token in tokens:
        if token == placeholder and cursor < len(ranked):
            entity = ranked[cursor][0]
            cursor += 1
            out.append(labels[entity] if labels is not None else str(entity))
        else:
            out.append(token)
    return out


# -- golden vector file -----------------------------------------------------------------
#
# json-lines records: {"name", "q1", "keys", "values", "A", "R", "B",
# "expected_attention", "expected_q_final", "expected_distribution"?}


@dataclass(frozen=True)
class VectorOutcome:
    name: str
    passed: bool
    detail: str = ""


def run_vector_file(path: str | Path, tolerance: float = 1e-9) -> list[VectorOutcome]:
    """Execute every golden record and compare within tolerance."""
    outcomes: list[VectorOutcome] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            outcomes.append(_run_vector(record, record.get("name", f"line{lineno}"), tolerance))
    return outcomes


def _run_vector(record: dict, name: str, tolerance: float) -> VectorOutcome:
    keys = np.array(record["keys"], dtype=float)
    values = np.array(record["values"], dtype=float)
    n = keys.shape[0]
    slab = MemorySlab(keys, values, tuple(Tuple(0, 0, i) for i in range(n)))
    params = HopParams(
        A=np.array(record["A"], dtype=float),
        R=tuple(np.array(r, dtype=float) for r in record["R"]),
        B=np.array(record["B"], dtype=float),
    )
    try:
        result = multi_hop(np.array(record["q1"], dtype=float), slab, params)
    except KernelError as exc:
        return VectorOutcome(name, False, str(exc))
    expected_attention = np.array(record["expected_attention"], dtype=float)
    got_attention = np.stack(result.attentions)
    if got_attention.shape != expected_attention.shape or not np.allclose(
        got_attention, expected_attention, atol=tolerance, rtol=0.0
    ):
        return VectorOutcome(name, False, f"attention mismatch: {got_attention.tolist()}")
    expected_q = np.array(record["expected_q_final"], dtype=float)
    if not np.allclose(result.q_final, expected_q, atol=tolerance, rtol=0.0):
        return VectorOutcome(name, False, f"q_final mismatch: {result.q_final.tolist()}")
    if "expected_distribution" in record:
        dist = entity_distribution(result.q_final, slab, params.B)
        if not np.allclose(
            dist, np.array(record["expected_distribution"], dtype=float), atol=tolerance, rtol=0.0
        ):
            return VectorOutcome(name, False, f"distribution mismatch: {dist.tolist()}")
    return VectorOutcome(name, True)
