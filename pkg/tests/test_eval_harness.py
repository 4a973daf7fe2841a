"""Metric golden cases and aggregation properties.

BLEU goldens were computed by hand from the clipped n-gram fractions; the
precision/recall arithmetic cases follow directly from set counting.
"""

import json
import random

import pytest

from kgdialog import eval_harness as ev, query_algebra as qa
from kgdialog.eval_harness import EvalRecord


# -- precision / recall ------------------------------------------------------------------


def test_identical_sets_are_perfect():
    assert ev.precision_recall({"a", "b", "c"}, {"a", "b", "c"}) == (1.0, 1.0)


def test_partial_overlap_arithmetic():
    assert ev.precision_recall({"a", "b", "c", "d"}, {"a", "x"}) == (0.5, 0.25)


def test_empty_prediction_conventions():
    assert ev.precision_recall({"a"}, set()) == (0.0, 0.0)
    assert ev.precision_recall(set(), set()) == (1.0, 1.0)


def test_precision_recall_swap_symmetry_when_same_size():
    rng = random.Random(0)
    universe = list(range(30))
    for _ in range(50):
        k = rng.randint(1, 10)
        g = frozenset(rng.sample(universe, k))
        p = frozenset(rng.sample(universe, k))
        pg, rg = ev.precision_recall(g, p)
        ps, rs = ev.precision_recall(p, g)
        assert pg == rs
        assert rg == ps


# -- exact-match accuracy / F1 ----------------------------------------------------------


def test_all_exact_predictions_score_one():
    pairs = [
        (qa.Booleans((True, False)), qa.Booleans((True, False))),
        (qa.Counts(((None, 3),)), qa.Counts(((None, 3),))),
    ]
    assert ev.exact_match_accuracy(pairs) == 1.0
    assert ev.exact_match_f1(pairs) == 1.0


def test_positional_f1_arithmetic():
    pairs = [(qa.Booleans((True, False)), qa.Booleans((True, True)))]
    # one aligned hit over two gold and two predicted elements
    assert ev.exact_match_f1(pairs) == pytest.approx(0.5)
    assert ev.exact_match_accuracy(pairs) == 0.0


def test_length_mismatch_penalizes_both_sides():
    pairs = [(qa.Booleans((True, True, False)), qa.Booleans((True,)))]
    # precision 1/1, recall 1/3 -> F1 = 0.5
    assert ev.exact_match_f1(pairs) == pytest.approx(0.5)


def test_empty_record_set_returns_none():
    assert ev.exact_match_f1([]) is None
    assert ev.exact_match_accuracy([]) is None


# -- BLEU ---------------------------------------------------------------------------------


def test_bleu_identical_is_one():
    assert ev.bleu4("did you mean robbiate ?", "did you mean robbiate ?") == pytest.approx(1.0)


def test_bleu_last_token_substitution_golden():
    # clipped fractions 4/5, 3/4, 2/3, 1/2 with BP=1:
    # (4/5 * 3/4 * 2/3 * 1/2) ** 0.25 = 0.2 ** 0.25
    got = ev.bleu4("did you mean robbiate ?", "did you mean robbiate !")
    assert got == pytest.approx(0.2 ** 0.25, abs=1e-12)
    assert got == pytest.approx(0.6687403049764221, abs=1e-9)


def test_bleu_interior_substitution_has_no_fourgram():
    # "robbiate" -> "kappeln" breaks every 4-gram, so raw clipping gives 0
    assert ev.bleu4("did you mean robbiate ?", "did you mean kappeln ?") == 0.0
    smoothed = ev.bleu4("did you mean robbiate ?", "did you mean kappeln ?", smoothing=True)
    assert 0.0 < smoothed < 0.01


def test_bleu_no_overlap_is_zero():
    assert ev.bleu4("completely different words", "nothing shared at all") == 0.0


def test_bleu_empty_candidate_is_zero():
    assert ev.bleu4("some reference", "") == 0.0


def test_bleu_brevity_penalty_applies():
    import math

    full = ev.bleu4("a b c d e a b c d e", "a b c d e a b c d e")
    short = ev.bleu4("a b c d e a b c d e", "a b c d e")
    assert full == pytest.approx(1.0)
    # matched prefix but half length: BP = exp(1 - 10/5)
    assert short == pytest.approx(math.exp(-1.0), rel=1e-9)


def test_bleu_one_only_when_identical():
    rng = random.Random(1)
    words = "alpha beta gamma delta epsilon zeta".split()
    for _ in range(60):
        ref = " ".join(rng.choices(words, k=rng.randint(4, 8)))
        cand = " ".join(rng.choices(words, k=rng.randint(4, 8)))
        score = ev.bleu4(ref, cand)
        if score == pytest.approx(1.0):
            assert ref.split() == cand.split()


# -- records / aggregation ----------------------------------------------------------------


def _records():
    e = lambda *xs: qa.Entities(frozenset(xs))
    return [
        EvalRecord("Simple Question (Direct)", e(1, 2, 3), e(1, 2, 3)),
        EvalRecord("Simple Question (Direct)", e(1, 2, 3, 4), e(1, 9)),
        EvalRecord("Verification (Boolean) (All)", qa.Booleans((True, False)), qa.Booleans((True, True))),
        EvalRecord("Quantitative Reasoning (Count) (All)", qa.Counts(((None, 3),)), qa.Counts(((None, 3),))),
        EvalRecord("Clarification (Natural Language Generation)", "did you mean robbiate ?", "did you mean kappeln ?"),
    ]


def test_record_kind_mismatch_rejected():
    with pytest.raises(ev.EvalError):
        EvalRecord("x", qa.Booleans((True,)), qa.Counts(((None, 1),)))


def test_single_perfect_record_row():
    report = ev.aggregate([_records()[0]])
    row = report.rows[0]
    assert row.macro_precision == 1.0
    assert row.macro_recall == 1.0
    assert row.f1 == 1.0


def test_aggregate_rows_match_manual_recount():
    report = ev.aggregate(_records())
    rows = {r.question_type: r for r in report.rows}

    simple = rows["Simple Question (Direct)"]
    # record 1: P=R=1; record 2: P=0.5, R=0.25
    assert simple.macro_precision == pytest.approx(0.75)
    assert simple.macro_recall == pytest.approx(0.625)
    assert simple.micro_precision == pytest.approx((3 + 1) / 5)
    assert simple.micro_recall == pytest.approx((3 + 1) / 7)

    boolean = rows["Verification (Boolean) (All)"]
    assert boolean.accuracy == 0.0
    assert boolean.f1 == pytest.approx(0.5)

    count = rows["Quantitative Reasoning (Count) (All)"]
    assert count.accuracy == 1.0 and count.f1 == 1.0

    clarification = rows["Clarification (Natural Language Generation)"]
    assert 0.0 < clarification.bleu_4 < 0.01


def test_aggregate_invariant_under_reordering():
    records = _records()
    shuffled = list(records)
    random.Random(3).shuffle(shuffled)
    assert ev.aggregate(records) == ev.aggregate(shuffled)


def test_published_reference_rides_along_never_asserted():
    report = ev.aggregate(_records())
    ref = report.published_reference["precision_recall"]
    assert ref["Simple Question (Direct)"] == {"recall": 27.9, "precision": 7.77}
    assert ref["Overall"] == {"recall": 15.83, "precision": 6.7}
    assert report.published_reference["bleu4"][
        "Clarification (Natural Language Generation)"
    ] == 15.58
    text = ev.format_report(report)
    assert "27.90" in text and "15.83" in text


def test_record_file_round_trip(tmp_path):
    path = tmp_path / "records.jsonl"
    lines = [
        {"question_type": "Simple Question (Direct)",
         "gold": {"kind": "entities", "members": [1, 2]},
         "predicted": {"kind": "entities", "members": [2]}},
        {"question_type": "Verification (Boolean) (All)",
         "gold": {"kind": "booleans", "values": [True, False]},
         "predicted": {"kind": "booleans", "values": [True, False]}},
        {"question_type": "Clarification (Natural Language Generation)",
         "gold": "did you mean x ?",
         "predicted": "did you mean y ?"},
    ]
    path.write_text("\n".join(json.dumps(obj) for obj in lines) + "\n")
    records = ev.read_records(path)
    assert len(records) == 3
    report = ev.aggregate(records)
    assert {r.question_type for r in report.rows} == {l["question_type"] for l in lines}
