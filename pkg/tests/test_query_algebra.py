"""Plan semantics on the fixture graph plus oracle-equivalence properties.

Expected values on the fixture were derived with the brute-force evaluator
(or by hand over the eight tuples) before being frozen here.
"""

import random

import pytest

from conftest import make_random_store
from kgdialog import query_algebra as qa
from kgdialog.kg_store import Tuple


def lookup(ids, direction, rel, anchor, ty):
    return qa.Lookup(direction, ids[rel], ids[anchor], ids[ty])


def names(store, answer):
    assert isinstance(answer, qa.Entities)
    return {store.entity_label(e) for e in answer.members}


# -- retrieve / set operations ----------------------------------------------------


def test_intersection_india_china(store, ids):
    plan = qa.Retrieve(
        qa.Intersection(
            lookup(ids, "obj", "flows_through", "India", "river"),
            lookup(ids, "obj", "flows_through", "China", "river"),
        )
    )
    assert names(store, qa.execute(store, plan)) == {"Brahmaputra"}


def test_difference_india_minus_china(store, ids):
    plan = qa.Retrieve(
        qa.Difference(
            lookup(ids, "obj", "flows_through", "India", "river"),
            lookup(ids, "obj", "flows_through", "China", "river"),
        )
    )
    assert names(store, qa.execute(store, plan)) == {"Ganga", "Yamuna"}


def test_union_is_idempotent(store, ids):
    x = lookup(ids, "obj", "flows_through", "India", "river")
    assert qa.execute(store, qa.Retrieve(qa.Union(x, x))) == qa.execute(store, qa.Retrieve(x))


def test_verify_booleans_align_with_facts(store, ids):
    plan = qa.Verify(
        (
            Tuple(ids["flows_through"], ids["India"], ids["Ganga"]),
            Tuple(ids["flows_through"], ids["India"], ids["Mekong"]),
        )
    )
    assert qa.execute(store, plan) == qa.Booleans((True, False))


def test_count_rivers_of_india(store, ids):
    plan = qa.Count(lookup(ids, "obj", "flows_through", "India", "river"))
    assert qa.execute(store, plan) == qa.Counts(((None, 3),))


def test_argopt_max_country_by_rivers(store, ids):
    group = qa.GroupSpec(ids["country"], (qa.Counted(ids["flows_through"], "obj", ids["river"]),))
    assert names(store, qa.execute(store, qa.ArgOpt(group, "max"))) == {"India"}
    assert names(store, qa.execute(store, qa.ArgOpt(group, "min"))) == {"Egypt"}


def test_threshold_rivers_in_at_least_two_countries(store, ids):
    group = qa.GroupSpec(ids["river"], (qa.Counted(ids["flows_through"], "subj", ids["country"]),))
    plan = qa.ThresholdFilter(group, "atleast", 2)
    assert names(store, qa.execute(store, plan)) == {"Brahmaputra"}
    count = qa.execute(store, qa.CountOverThreshold(group, "atleast", 2))
    assert count == qa.Counts(((None, 1),))


def test_comparative_more_rivers_than_reference(store, ids):
    group = qa.GroupSpec(ids["country"], (qa.Counted(ids["flows_through"], "obj", ids["river"]),))
    more_than_china = qa.execute(store, qa.Comparative(group, ids["China"], "more"))
    assert names(store, more_than_china) == {"India"}
    over_egypt = qa.execute(store, qa.CountOverComparative(group, ids["Egypt"], "more"))
    assert over_egypt == qa.Counts(((None, 2),))


def test_type_union_partitions_by_type(store, ids):
    plan = qa.Retrieve(
        qa.TypeUnion(
            (
                lookup(ids, "obj", "flows_through", "India", "river"),
                lookup(ids, "obj", "capital", "India", "city"),
            )
        )
    )
    answer = qa.execute(store, plan)
    assert names(store, answer) == {"Ganga", "Yamuna", "Brahmaputra", "New Delhi"}
    assert answer.partition is not None
    by_type = dict(answer.partition)
    assert by_type[ids["river"]] == frozenset(
        {ids["Ganga"], ids["Yamuna"], ids["Brahmaputra"]}
    )
    assert by_type[ids["city"]] == frozenset({store.entity_id("New Delhi")})


def test_unknown_ids_and_type_mismatch_raise(store, ids):
    with pytest.raises(Exception):
        qa.execute(store, qa.Retrieve(qa.Lookup("obj", 99, ids["India"], ids["river"])))
    bad = qa.Union(
        lookup(ids, "obj", "flows_through", "India", "river"),
        lookup(ids, "obj", "capital", "India", "city"),
    )
    with pytest.raises(qa.PlanError):
        qa.execute(store, qa.Retrieve(bad))


def test_zero_count_groups_participate_when_enabled(store, ids):
    group = qa.GroupSpec(ids["country"], (qa.Counted(ids["capital"], "obj", ids["city"]),))
    with_zero = qa.execute(store, qa.ThresholdFilter(group, "atmost", 0))
    assert names(store, with_zero) == {"Egypt"}
    without = qa.execute(store, qa.ThresholdFilter(group, "atmost", 0), include_zero_groups=False)
    assert without == qa.Entities(frozenset())


# -- approx window ------------------------------------------------------------------


def test_approx_window_examples():
    assert qa.approx_window(3) == (2, 4)
    assert qa.approx_window(0) == (0, 1)
    assert qa.approx_window(22) == (20, 24)


# -- multi relation combine ------------------------------------------------------------


def test_multi_relation_combine_difference(store, ids):
    a = qa.Retrieve(lookup(ids, "obj", "flows_through", "India", "river"))
    b = qa.Retrieve(lookup(ids, "obj", "capital", "India", "river"))
    expr = qa.multi_relation_combine(store, a, b, "difference")
    assert isinstance(expr, qa.Difference)
    assert names(store, qa.execute(store, qa.Retrieve(expr))) == {
        "Ganga",
        "Yamuna",
        "Brahmaputra",
    }
    self_diff = qa.multi_relation_combine(store, a, a, "difference")
    assert qa.execute(store, qa.Retrieve(self_diff)) == qa.Entities(frozenset())
    with pytest.raises(qa.PlanError):
        qa.multi_relation_combine(
            store, a, qa.Retrieve(lookup(ids, "obj", "capital", "India", "city")), "union"
        )


def test_multi_relation_union_matches_brute_force(store, ids):
    expr = qa.multi_relation_combine(
        store,
        qa.Retrieve(lookup(ids, "obj", "flows_through", "China", "river")),
        qa.Retrieve(lookup(ids, "obj", "capital", "China", "river")),
        "union",
    )
    plan = qa.Retrieve(expr)
    assert qa.execute(store, plan) == qa.brute_force_execute(store, plan)


# -- brute force guard ------------------------------------------------------------------


def test_brute_force_guard():
    big = make_random_store(0, n_tuples=200)
    plan = qa.Retrieve(qa.Lookup("obj", 0, 0, 0))
    assert qa.brute_force_execute(big, plan) == qa.execute(big, plan)
    huge = make_random_store(1, n_tuples=100_001, n_relations=5, n_entities=40_000)
    if len(huge.tuples) > qa.BRUTE_FORCE_GUARD:
        with pytest.raises(qa.PlanError, match="guard"):
            qa.brute_force_execute(huge, plan)


def test_empty_store_retrieve_is_empty():
    from kgdialog.kg_store import KgStore

    empty = KgStore([], ["A"], ["r"], ["t"], {0: frozenset({0})})
    plan = qa.Retrieve(qa.Lookup("obj", 0, 0, 0))
    assert qa.brute_force_execute(empty, plan) == qa.Entities(frozenset())
    assert qa.execute(empty, plan) == qa.Entities(frozenset())


# -- randomized oracle equivalence -------------------------------------------------------


def random_plan(rng: random.Random, store) -> qa.QueryPlan:
    n_rel, n_ent, n_ty = store.n_relations, store.n_entities, store.n_types

    def rand_lookup(result_type=None, anchor=None):
        return qa.Lookup(
            rng.choice(["obj", "subj"]),
            rng.randrange(n_rel),
            anchor if anchor is not None else rng.randrange(n_ent),
            result_type if result_type is not None else rng.randrange(n_ty),
        )

    def rand_expr():
        kind = rng.choice(["lookup", "union", "intersection", "difference", "typeunion"])
        if kind == "lookup":
            return rand_lookup()
        if kind == "typeunion":
            anchor = rng.randrange(n_ent)
            types = rng.sample(range(n_ty), k=min(2, n_ty))
            return qa.TypeUnion(tuple(rand_lookup(ty, anchor) for ty in types))
        ty = rng.randrange(n_ty)
        cls = {"union": qa.Union, "intersection": qa.Intersection, "difference": qa.Difference}[kind]
        return cls(rand_lookup(ty), rand_lookup(ty))

    def rand_group():
        legs = tuple(
            qa.Counted(rng.randrange(n_rel), rng.choice(["obj", "subj"]), rng.randrange(n_ty))
            for _ in range(rng.randint(1, 2))
        )
        return qa.GroupSpec(rng.randrange(n_ty), legs)

    kind = rng.choice(
        ["retrieve", "count", "verify", "argopt", "threshold", "count_threshold", "comparative", "count_comparative"]
    )
    if kind == "retrieve":
        return qa.Retrieve(rand_expr())
    if kind == "count":
        return qa.Count(rand_expr())
    if kind == "verify":
        facts = []
        pool = sorted(store.tuples)
        for _ in range(rng.randint(1, 3)):
            if pool and rng.random() < 0.5:
                facts.append(rng.choice(pool))
            else:
                facts.append(
                    Tuple(rng.randrange(n_rel), rng.randrange(n_ent), rng.randrange(n_ent))
                )
        return qa.Verify(tuple(facts))
    if kind == "argopt":
        return qa.ArgOpt(rand_group(), rng.choice(["min", "max"]))
    if kind == "threshold":
        return qa.ThresholdFilter(rand_group(), rng.choice(qa.COMPARATORS), rng.randint(0, 4))
    if kind == "count_threshold":
        return qa.CountOverThreshold(rand_group(), rng.choice(qa.COMPARATORS), rng.randint(0, 4))
    if kind == "comparative":
        return qa.Comparative(rand_group(), rng.randrange(n_ent), rng.choice(["more", "less"]))
    return qa.CountOverComparative(rand_group(), rng.randrange(n_ent), rng.choice(["more", "less"]))


@pytest.mark.parametrize("seed", range(8))
def test_random_plans_match_oracle_on_random_stores(seed):
    rng = random.Random(1000 + seed)
    s = make_random_store(seed, n_tuples=rng.randint(100, 800), n_relations=rng.randint(1, 5), n_types=rng.randint(1, 4))
    for _ in range(40):
        plan = random_plan(rng, s)
        include_zero = rng.random() < 0.5
        assert qa.execute(s, plan, include_zero) == qa.brute_force_execute(s, plan, include_zero), plan


def test_set_laws_on_retrieve_results(store):
    rng = random.Random(7)
    for _ in range(80):
        ty = rng.randrange(store.n_types)
        a = qa.Lookup(rng.choice(["obj", "subj"]), rng.randrange(2), rng.randrange(10), ty)
        b = qa.Lookup(rng.choice(["obj", "subj"]), rng.randrange(2), rng.randrange(10), ty)
        ea = qa.execute(store, qa.Retrieve(a)).members
        eb = qa.execute(store, qa.Retrieve(b)).members
        assert qa.execute(store, qa.Retrieve(qa.Union(a, b))).members == ea | eb
        assert qa.execute(store, qa.Retrieve(qa.Union(b, a))).members == ea | eb
        assert qa.execute(store, qa.Retrieve(qa.Intersection(a, b))).members == (
            qa.execute(store, qa.Retrieve(qa.Intersection(b, a))).members
        )
        # difference equals intersection with the typed-universe complement
        universe = store.entities_of_type(ty)
        assert qa.execute(store, qa.Retrieve(qa.Difference(a, b))).members == ea & (universe - eb)
        # De Morgan over the typed universe
        assert universe - (ea | eb) == (universe - ea) & (universe - eb)


def test_count_equals_retrieve_cardinality(store):
    rng = random.Random(11)
    for _ in range(60):
        ty = rng.randrange(store.n_types)
        expr = qa.Union(
            qa.Lookup(rng.choice(["obj", "subj"]), rng.randrange(2), rng.randrange(10), ty),
            qa.Lookup(rng.choice(["obj", "subj"]), rng.randrange(2), rng.randrange(10), ty),
        )
        count = qa.execute(store, qa.Count(expr))
        members = qa.execute(store, qa.Retrieve(expr)).members
        assert count == qa.Counts(((None, len(members)),))


def test_count_over_type_union_counts_each_partition(store, ids):
    expr = qa.TypeUnion(
        (
            qa.Lookup("obj", ids["flows_through"], ids["India"], ids["river"]),
            qa.Lookup("obj", ids["capital"], ids["India"], ids["city"]),
        )
    )
    counts = qa.execute(store, qa.Count(expr))
    retrieve = qa.execute(store, qa.Retrieve(expr))
    assert counts == qa.Counts(((ids["river"], 3), (ids["city"], 1)))
    assert dict(counts.counts) == {ty: len(part) for ty, part in retrieve.partition}


def test_argopt_ties_return_all_and_threshold_nesting(store):
    rng = random.Random(13)
    for _ in range(40):
        group = qa.GroupSpec(
            rng.randrange(store.n_types),
            (qa.Counted(rng.randrange(2), rng.choice(["obj", "subj"]), rng.randrange(3)),),
        )
        counts = qa.group_counts(store, group)
        if counts:
            best = max(counts.values())
            maxima = qa.execute(store, qa.ArgOpt(group, "max")).members
            assert maxima == frozenset(g for g, c in counts.items() if c == best)
        n = rng.randint(0, 4)
        equal = qa.execute(store, qa.ThresholdFilter(group, "equal", n)).members
        atleast = qa.execute(store, qa.ThresholdFilter(group, "atleast", n)).members
        assert equal <= atleast
        over = qa.execute(store, qa.CountOverThreshold(group, "atleast", n))
        assert over == qa.Counts(((None, len(atleast)),))
