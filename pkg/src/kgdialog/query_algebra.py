"""Executable query plans over a tuple store.

A plan is a small immutable tree: set expressions (typed lookups combined
with union/intersection/difference) wrapped in one of the plan kinds
(retrieve, verify, count, arg-min/max, threshold filters, comparatives and
their counting variants).  Two evaluators are provided: ``execute`` runs
against the store indices, while ``brute_force_execute`` re-derives the
same semantics by exhaustively scanning the raw tuple list and raw type
assignments, and serves as the oracle in equivalence tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union as TUnion

from .kg_store import KgStore, Tuple

OBJ = "obj"
SUBJ = "subj"
DIRECTIONS = (OBJ, SUBJ)

COMPARATORS = ("atleast", "atmost", "equal", "approx")
OPT_DIRECTIONS = ("min", "max")
CMP_DIRECTIONS = ("more", "less")

BRUTE_FORCE_GUARD = 100_000


class PlanError(ValueError):
    """Malformed or type-incompatible plan."""


# -- set expressions ----------------------------------------------------------


@dataclass(frozen=True)
class Lookup:
    """Entities in ``result_type`` reachable from ``anchor`` over ``relation``.

    ``direction`` names the side of the tuple the result comes from: "obj"
    anchors the subject and returns objects, "subj" the reverse.
    """

    direction: str
    relation: int
    anchor: int
    result_type: int


@dataclass(frozen=True)
class Union:
    a: "SetExpr"
    b: "SetExpr"


@dataclass(frozen=True)
class Intersection:
    a: "SetExpr"
    b: "SetExpr"


@dataclass(frozen=True)
class Difference:
    a: "SetExpr"
    b: "SetExpr"


@dataclass(frozen=True)
class TypeUnion:
    """Lookups sharing one anchor but differing in result type."""

    branches: tuple[Lookup, ...]


SetExpr = TUnion[Lookup, Union, Intersection, Difference, TypeUnion]


# -- grouped counting ----------------------------------------------------------


@dataclass(frozen=True)
class Counted:
    """One counted leg of a group: entities of ``counted_type`` reached
    from the group member over ``relation`` in ``direction``."""

    relation: int
    direction: str
    counted_type: int


@dataclass(frozen=True)
class GroupSpec:
    group_type: int
    counted: tuple[Counted, ...]


# -- plans ---------------------------------------------------------------------


@dataclass(frozen=True)
class Retrieve:
    expr: SetExpr


@dataclass(frozen=True)
class Verify:
    facts: tuple[Tuple, ...]


@dataclass(frozen=True)
class Count:
    expr: SetExpr


@dataclass(frozen=True)
class ArgOpt:
    group: GroupSpec
    direction: str  # min | max


@dataclass(frozen=True)
class ThresholdFilter:
    group: GroupSpec
    comparator: str  # atleast | atmost | equal | approx
    n: int


@dataclass(frozen=True)
class CountOverThreshold:
    group: GroupSpec
    comparator: str
    n: int


@dataclass(frozen=True)
class Comparative:
    group: GroupSpec
    reference: int
    direction: str  # more | less


@dataclass(frozen=True)
class CountOverComparative:
    group: GroupSpec
    reference: int
    direction: str


QueryPlan = TUnion[
    Retrieve,
    Verify,
    Count,
    ArgOpt,
    ThresholdFilter,
    CountOverThreshold,
    Comparative,
    CountOverComparative,
]


# -- answers -------------------------------------------------------------------


@dataclass(frozen=True)
class Entities:
    members: frozenset[int]
    # per-type partition, present only for TypeUnion results
    partition: tuple[tuple[int, frozenset[int]], ...] | None = None


@dataclass(frozen=True)
class Counts:
    # (type id or None, count) per counted piece
    counts: tuple[tuple[int | None, int], ...]


@dataclass(frozen=True)
class Booleans:
    values: tuple[bool, ...]


AnswerSet = TUnion[Entities, Counts, Booleans]


def approx_window(n: int) -> tuple[int, int]:
    """Inclusive count interval for "approximately n": n +- max(1, round(0.1 n)),
    clamped at zero."""
    if n < 0:
        raise PlanError(f"approx window needs n >= 0, got {n}")
    delta = max(1, round(0.1 * n))
    return max(0, n - delta), n + delta


def _comparator_ok(comparator: str, count: int, n: int) -> bool:
    if comparator == "atleast":
        return count >= n
    if comparator == "atmost":
        return count <= n
    if comparator == "equal":
        return count == n
    if comparator == "approx":
        lo, hi = approx_window(n)
        return lo <= count <= hi
    raise PlanError(f"unknown comparator {comparator!r}")


# -- validation shared by both evaluators ---------------------------------------


def _validate_lookup(store: KgStore, lk: Lookup) -> None:
    if lk.direction not in DIRECTIONS:
        raise PlanError(f"unknown lookup direction {lk.direction!r}")
    store._check_relation(lk.relation)
    store._check_entity(lk.anchor)
    store._check_type(lk.result_type)


def _validate_group(store: KgStore, group: GroupSpec) -> None:
    store._check_type(group.group_type)
    if not group.counted:
        raise PlanError("group spec needs at least one counted leg")
    for c in group.counted:
        if c.direction not in DIRECTIONS:
            raise PlanError(f"unknown counted direction {c.direction!r}")
        store._check_relation(c.relation)
        store._check_type(c.counted_type)


def _validate_plan(store: KgStore, plan: QueryPlan) -> None:
    if isinstance(plan, (Retrieve, Count)):
        _validate_expr(store, plan.expr)
    elif isinstance(plan, Verify):
        if not plan.facts:
            raise PlanError("verify plan needs at least one fact")
        for f in plan.facts:
            store._check_relation(f.relation)
            store._check_entity(f.subject)
            store._check_entity(f.object)
    elif isinstance(plan, ArgOpt):
        _validate_group(store, plan.group)
        if plan.direction not in OPT_DIRECTIONS:
            raise PlanError(f"unknown opt direction {plan.direction!r}")
    elif isinstance(plan, (ThresholdFilter, CountOverThreshold)):
        _validate_group(store, plan.group)
        if plan.comparator not in COMPARATORS:
            raise PlanError(f"unknown comparator {plan.comparator!r}")
        if plan.n < 0:
            raise PlanError(f"threshold n must be >= 0, got {plan.n}")
    elif isinstance(plan, (Comparative, CountOverComparative)):
        _validate_group(store, plan.group)
        store._check_entity(plan.reference)
        if plan.direction not in CMP_DIRECTIONS:
            raise PlanError(f"unknown comparative direction {plan.direction!r}")
    else:
        raise PlanError(f"unknown plan kind {type(plan).__name__}")


def _validate_expr(store: KgStore, expr: SetExpr) -> frozenset[int]:
    """Check ids and type compatibility; returns the expression's result types."""
    if isinstance(expr, Lookup):
        _validate_lookup(store, expr)
        return frozenset({expr.result_type})
    if isinstance(expr, (Union, Intersection, Difference)):
        ta = _validate_expr(store, expr.a)
        tb = _validate_expr(store, expr.b)
        if ta != tb:
            raise PlanError(
                f"type-incompatible branches: {sorted(ta)} vs {sorted(tb)}"
            )
        return ta
    if isinstance(expr, TypeUnion):
        if not expr.branches:
            raise PlanError("TypeUnion needs at least one branch")
        anchors = {b.anchor for b in expr.branches}
        if len(anchors) != 1:
            raise PlanError("TypeUnion branches must share one anchor")
        seen: set[int] = set()
        for b in expr.branches:
            _validate_lookup(store, b)
            if b.result_type in seen:
                raise PlanError("TypeUnion branches must differ in result type")
            seen.add(b.result_type)
        return frozenset(seen)
    raise PlanError(f"unknown set expression {type(expr).__name__}")


def result_types(store: KgStore, expr: SetExpr) -> frozenset[int]:
    """Result types of a set expression (validating it along the way)."""
    return _validate_expr(store, expr)


# -- brute-force oracle ----------------------------------------------------------
#
# Implemented against the raw tuple list and raw entity->types mapping only;
# it never touches the store's lookup indices.


def brute_force_execute(
    store: KgStore, plan: QueryPlan, include_zero_groups: bool = True
) -> AnswerSet:
    """Index-free reference evaluation; guards against oversized stores."""
    if len(store.tuples) > BRUTE_FORCE_GUARD:
        raise PlanError(
            f"brute force guard: {len(store.tuples)} tuples > {BRUTE_FORCE_GUARD}"
        )
    _validate_plan(store, plan)
    tuples = list(store.tuples)
    etypes = store.entity_types

    if isinstance(plan, Retrieve):
        members, partition = _bf_expr(tuples, etypes, plan.expr)
        return Entities(frozenset(members), partition)
    if isinstance(plan, Count):
        members, partition = _bf_expr(tuples, etypes, plan.expr)
        if partition is not None:
            return Counts(tuple((ty, len(part)) for ty, part in partition))
        return Counts(((None, len(members)),))
    if isinstance(plan, Verify):
        values = []
        for f in plan.facts:
            values.append(any(t == f for t in tuples))
        return Booleans(tuple(values))

    counts = _bf_group_counts(tuples, etypes, plan.group, include_zero_groups)
    if isinstance(plan, ArgOpt):
        if not counts:
            return Entities(frozenset())
        best = max(counts.values()) if plan.direction == "max" else min(counts.values())
        return Entities(frozenset(g for g, c in counts.items() if c == best))
    if isinstance(plan, ThresholdFilter):
        keep = {g for g, c in counts.items() if _comparator_ok(plan.comparator, c, plan.n)}
        return Entities(frozenset(keep))
    if isinstance(plan, CountOverThreshold):
        n = sum(1 for c in counts.values() if _comparator_ok(plan.comparator, c, plan.n))
        return Counts(((None, n),))
    # comparatives: the reference count is computed over the same counted
    # legs even when the reference is not itself of the group type
    ref_count = _bf_entity_count(tuples, etypes, plan.group, plan.reference)
    if plan.direction == "more":
        keep = {g for g, c in counts.items() if c > ref_count and g != plan.reference}
    else:
        keep = {g for g, c in counts.items() if c < ref_count and g != plan.reference}
    if isinstance(plan, Comparative):
        return Entities(frozenset(keep))
    return Counts(((None, len(keep)),))


def _bf_lookup(tuples: list[Tuple], etypes, lk: Lookup) -> set[int]:
    out: set[int] = set()
    for t in tuples:
        if t.relation != lk.relation:
            continue
        if lk.direction == OBJ:
            if t.subject == lk.anchor and lk.result_type in etypes.get(t.object, ()):
                out.add(t.object)
        else:
            if t.object == lk.anchor and lk.result_type in etypes.get(t.subject, ()):
                out.add(t.subject)
    return out


def _bf_expr(tuples, etypes, expr: SetExpr):
    if isinstance(expr, Lookup):
        return _bf_lookup(tuples, etypes, expr), None
    if isinstance(expr, Union):
        return _bf_expr(tuples, etypes, expr.a)[0] | _bf_expr(tuples, etypes, expr.b)[0], None
    if isinstance(expr, Intersection):
        return _bf_expr(tuples, etypes, expr.a)[0] & _bf_expr(tuples, etypes, expr.b)[0], None
    if isinstance(expr, Difference):
        return _bf_expr(tuples, etypes, expr.a)[0] - _bf_expr(tuples, etypes, expr.b)[0], None
    if isinstance(expr, TypeUnion):
        partition = []
        members: set[int] = set()
        for b in expr.branches:
            part = _bf_lookup(tuples, etypes, b)
            partition.append((b.result_type, frozenset(part)))
            members |= part
        return members, tuple(partition)
    raise PlanError(f"unknown set expression {type(expr).__name__}")


def _bf_entity_count(tuples, etypes, group: GroupSpec, g: int) -> int:
    reached: set[int] = set()
    for c in group.counted:
        for t in tuples:
            if t.relation != c.relation:
                continue
            if c.direction == OBJ:
                if t.subject == g and c.counted_type in etypes.get(t.object, ()):
                    reached.add(t.object)
            else:
                if t.object == g and c.counted_type in etypes.get(t.subject, ()):
                    reached.add(t.subject)
    return len(reached)


def _bf_group_counts(tuples, etypes, group: GroupSpec, include_zero: bool) -> dict[int, int]:
    members = sorted(e for e, ts in etypes.items() if group.group_type in ts)
    counts: dict[int, int] = {}
    for g in members:
        n = _bf_entity_count(tuples, etypes, group, g)
        if n or include_zero:
            counts[g] = n
    return counts


# -- indexed evaluation ------------------------------------------------------------


def execute(store: KgStore, plan: QueryPlan, include_zero_groups: bool = True) -> AnswerSet:
    """Evaluate a plan against the store indices.

    Deterministic; entity answers are sets with no order contract.  When
    ``include_zero_groups`` is true (the default), entities of the group
    type with no counted tuples participate in grouped plans with count 0.
    """
    _validate_plan(store, plan)

    if isinstance(plan, Retrieve):
        members, partition = _eval_expr(store, plan.expr)
        return Entities(frozenset(members), partition)
    if isinstance(plan, Count):
        members, partition = _eval_expr(store, plan.expr)
        if partition is not None:
            return Counts(tuple((ty, len(part)) for ty, part in partition))
        return Counts(((None, len(members)),))
    if isinstance(plan, Verify):
        return Booleans(tuple(f in store.tuples for f in plan.facts))

    counts = group_counts(store, plan.group, include_zero_groups)
    if isinstance(plan, ArgOpt):
        if not counts:
            return Entities(frozenset())
        best = max(counts.values()) if plan.direction == "max" else min(counts.values())
        return Entities(frozenset(g for g, c in counts.items() if c == best))
    if isinstance(plan, ThresholdFilter):
        keep = {g for g, c in counts.items() if _comparator_ok(plan.comparator, c, plan.n)}
        return Entities(frozenset(keep))
    if isinstance(plan, CountOverThreshold):
        n = sum(1 for c in counts.values() if _comparator_ok(plan.comparator, c, plan.n))
        return Counts(((None, n),))
    ref_count = entity_group_count(store, plan.group, plan.reference)
    if plan.direction == "more":
        keep = {g for g, c in counts.items() if c > ref_count and g != plan.reference}
    else:
        keep = {g for g, c in counts.items() if c < ref_count and g != plan.reference}
    if isinstance(plan, Comparative):
        return Entities(frozenset(keep))
    return Counts(((None, len(keep)),))


def _eval_lookup(store: KgStore, lk: Lookup) -> set[int]:
    base = (
        store.objects_of(lk.relation, lk.anchor)
        if lk.direction == OBJ
        else store.subjects_of(lk.relation, lk.anchor)
    )
    return {e for e in base if store.has_type(e, lk.result_type)}


def _eval_expr(store: KgStore, expr: SetExpr):
    if isinstance(expr, Lookup):
        return _eval_lookup(store, expr), None
    if isinstance(expr, Union):
        return _eval_expr(store, expr.a)[0] | _eval_expr(store, expr.b)[0], None
    if isinstance(expr, Intersection):
        return _eval_expr(store, expr.a)[0] & _eval_expr(store, expr.b)[0], None
    if isinstance(expr, Difference):
        return _eval_expr(store, expr.a)[0] - _eval_expr(store, expr.b)[0], None
    if isinstance(expr, TypeUnion):
        partition = []
        members: set[int] = set()
        for b in expr.branches:
            part = _eval_lookup(store, b)
            partition.append((b.result_type, frozenset(part)))
            members |= part
        return members, tuple(partition)
    raise PlanError(f"unknown set expression {type(expr).__name__}")


def entity_group_count(store: KgStore, group: GroupSpec, g: int) -> int:
    """Distinct counted entities reached from one entity over the group's legs."""
    reached: set[int] = set()
    for c in group.counted:
        base = (
            store.objects_of(c.relation, g)
            if c.direction == OBJ
            else store.subjects_of(c.relation, g)
        )
        reached |= {e for e in base if store.has_type(e, c.counted_type)}
    return len(reached)


def group_counts(store: KgStore, group: GroupSpec, include_zero: bool = True) -> dict[int, int]:
    """Distinct counted entities reached from each member of the group type.

    Legs are unioned before counting, so an entity reachable over two legs
    counts once.
    """
    counts: dict[int, int] = {}
    for g in sorted(store.entities_of_type(group.group_type)):
        n = entity_group_count(store, group, g)
        if n or include_zero:
            counts[g] = n
    return counts


# -- combination helper --------------------------------------------------------------


_OP_NODES = {"union": Union, "intersection": Intersection, "difference": Difference}


def multi_relation_combine(
    store: KgStore,
    plan_a: TUnion[QueryPlan, SetExpr],
    plan_b: TUnion[QueryPlan, SetExpr],
    op: str,
) -> SetExpr:
    """Combine the set expressions of two retrieve plans under one operator.

    The branches may use different relations; their result types must be
    comparable (identical type sets).
    """
    if op not in _OP_NODES:
        raise PlanError(f"unknown combine op {op!r}")
    a = plan_a.expr if isinstance(plan_a, Retrieve) else plan_a
    b = plan_b.expr if isinstance(plan_b, Retrieve) else plan_b
    ta = _validate_expr(store, a)
    tb = _validate_expr(store, b)
    if ta != tb:
        raise PlanError(f"type-incompatible branches: {sorted(ta)} vs {sorted(tb)}")
    return _OP_NODES[op](a, b)


# -- provenance --------------------------------------------------------------------


def plan_tuples(store: KgStore, plan: QueryPlan, include_zero_groups: bool = True) -> frozenset[Tuple]:
    """Store tuples the plan's answer depends on.

    Grouped plans depend on every counted tuple of every group member (the
    answer changes if any of them changes), so their provenance spans the
    whole group.
    """
    _validate_plan(store, plan)
    if isinstance(plan, (Retrieve, Count)):
        return frozenset(_expr_tuples(store, plan.expr))
    if isinstance(plan, Verify):
        return frozenset(f for f in plan.facts if f in store.tuples)

    out: set[Tuple] = set()
    group = plan.group
    members = set(store.entities_of_type(group.group_type))
    if isinstance(plan, (Comparative, CountOverComparative)):
        members.add(plan.reference)
    for g in members:
        for c in group.counted:
            out |= _counted_tuples(store, g, c)
    return frozenset(out)


def _expr_tuples(store: KgStore, expr: SetExpr) -> set[Tuple]:
    if isinstance(expr, Lookup):
        out = set()
        for e in _eval_lookup(store, expr):
            if expr.direction == OBJ:
                out.add(Tuple(expr.relation, expr.anchor, e))
            else:
                out.add(Tuple(expr.relation, e, expr.anchor))
        return out
    if isinstance(expr, (Union, Intersection, Difference)):
        return _expr_tuples(store, expr.a) | _expr_tuples(store, expr.b)
    if isinstance(expr, TypeUnion):
        out = set()
        for b in expr.branches:
            out |= _expr_tuples(store, b)
        return out
    raise PlanError(f"unknown set expression {type(expr).__name__}")


def _counted_tuples(store: KgStore, g: int, c: Counted) -> set[Tuple]:
    out: set[Tuple] = set()
    if c.direction == OBJ:
        for o in store.objects_of(c.relation, g):
            if store.has_type(o, c.counted_type):
                out.add(Tuple(c.relation, g, o))
    else:
        for s in store.subjects_of(c.relation, g):
            if store.has_type(s, c.counted_type):
                out.add(Tuple(c.relation, s, g))
    return out


def plan_relations(plan: QueryPlan) -> frozenset[int]:
    """All relation ids a plan mentions."""
    out: set[int] = set()

    def walk_expr(expr: SetExpr) -> None:
        if isinstance(expr, Lookup):
            out.add(expr.relation)
        elif isinstance(expr, (Union, Intersection, Difference)):
            walk_expr(expr.a)
            walk_expr(expr.b)
        elif isinstance(expr, TypeUnion):
            for b in expr.branches:
                out.add(b.relation)

    if isinstance(plan, (Retrieve, Count)):
        walk_expr(plan.expr)
    elif isinstance(plan, Verify):
        out |= {f.relation for f in plan.facts}
    else:
        out |= {c.relation for c in plan.group.counted}
    return frozenset(out)


def plan_entities(plan: QueryPlan) -> frozenset[int]:
    """All anchor/reference/fact entity ids a plan mentions."""
    out: set[int] = set()

    def walk_expr(expr: SetExpr) -> None:
        if isinstance(expr, Lookup):
            out.add(expr.anchor)
        elif isinstance(expr, (Union, Intersection, Difference)):
            walk_expr(expr.a)
            walk_expr(expr.b)
        elif isinstance(expr, TypeUnion):
            for b in expr.branches:
                out.add(b.anchor)

    if isinstance(plan, (Retrieve, Count)):
        walk_expr(plan.expr)
    elif isinstance(plan, Verify):
        for f in plan.facts:
            out |= {f.subject, f.object}
    elif isinstance(plan, (Comparative, CountOverComparative)):
        out.add(plan.reference)
    return frozenset(out)
