import math

import numpy as np
import pytest

from sepsearch.errors import EmptyRun, NoRelevant
from sepsearch.head import identity_head, init_head
from sepsearch.metrics import (
    evaluate_run,
    mrr,
    ndcg_at_k,
    recall_at_k,
    tie_order_report,
    transfer_report,
)
from sepsearch.retrieval import RankedList
from sepsearch.store import Qrels


def run(qid, *ids):
    return RankedList(qid, tuple((d, float(-i)) for i, d in enumerate(ids)))


def naive(ranked_ids, grades, k):
    """Independent re-implementation: list comprehensions over explicit ranks."""
    rel = [d for d, g in grades.items() if g > 0]
    top = ranked_ids[:k]
    rec = len([d for d in top if d in rel]) / min(len(rel), k)
    firsts = [i + 1 for i, d in enumerate(ranked_ids) if d in rel]
    rr = 1.0 / firsts[0] if firsts else 0.0
    gains = np.array([grades.get(d, 0) for d in top], dtype=float)
    dcg = float(np.sum(gains / np.log2(np.arange(2, len(gains) + 2))))
    ideal = np.array(sorted(grades.values(), reverse=True)[:k], dtype=float)
    idcg = float(np.sum(ideal / np.log2(np.arange(2, len(ideal) + 2))))
    return rec, rr, dcg / idcg


def test_recall_examples():
    q = Qrels([("q", "a", 1), ("q", "b", 1)])
    assert recall_at_k(run("q", "x", "a", "b"), q, 10) == 1.0
    q4 = Qrels([("q", d, 1) for d in "abcd"])
    assert recall_at_k(run("q", "a", "x", "b", "y"), q4, 10) == 0.5
    q20 = Qrels([("q", f"r{i}", 1) for i in range(20)])
    assert recall_at_k(run("q", *[f"r{i}" for i in range(10)]), q20, 10) == 1.0


def test_mrr_examples():
    q = Qrels([("q", "a", 1)])
    assert mrr(run("q", "a", "b"), q) == 1.0
    assert mrr(run("q", "x", "y", "a"), q) == pytest.approx(1 / 3)
    assert mrr(run("q", "x", "y"), q) == 0.0


def test_ndcg_examples():
    q = Qrels([("q", "a", 2), ("q", "b", 1)])
    assert ndcg_at_k(run("q", "a", "b"), q, 2) == 1.0
    single = Qrels([("q", "a", 1)])
    assert ndcg_at_k(run("q", "x", "a"), single, 2) == pytest.approx(0.6309297535714574, abs=1e-9)
    graded = Qrels([("q", "a", 1), ("q", "z", 0)])
    assert ndcg_at_k(run("q", "z", "y"), graded, 2) == 0.0


def test_no_relevant_raises():
    with pytest.raises(NoRelevant):
        recall_at_k(run("q", "a"), Qrels([("q", "a", 0)]), 1)


def test_evaluate_run_examples():
    q = Qrels([("q1", "a", 1), ("q2", "b", 1)])
    rep = evaluate_run([run("q1", "a")], q, [1, 5])
    assert all(v == 1.0 for v in rep.aggregates.values())
    rep = evaluate_run([run("q1", "a", "x"), run("q2", "x", "y")], q, [2])
    assert rep["ndcg@2"] == 0.5
    rep = evaluate_run([run("q1", "a"), run("q9", "a")], q, [1])
    assert rep.skipped == ["q9"] and rep.n_queries == 1
    with pytest.raises(EmptyRun):
        evaluate_run([], q, [1])


def random_cases(n_cases=100, n_items=20, seed=0):
    rng = np.random.default_rng(seed)
    for c in range(n_cases):
        ids = [f"d{i}" for i in range(n_items)]
        grades = {}
        for d in rng.choice(ids, size=int(rng.integers(1, 8)), replace=False):
            grades[d] = int(rng.integers(0, 4))
        if not any(g > 0 for g in grades.values()):
            grades[ids[int(rng.integers(0, n_items))]] = 1
        ranking = list(rng.permutation(ids)[: int(rng.integers(1, n_items + 1))])
        yield f"q{c:03d}", ranking, grades


def test_metrics_match_naive_oracle():
    for qid, ranking, grades in random_cases():
        q = Qrels((qid, d, g) for d, g in grades.items())
        r = run(qid, *ranking)
        for k in (1, 5, 10, 20):
            rec, rr, nd = naive(ranking, grades, k)
            assert recall_at_k(r, q, k) == pytest.approx(rec, abs=1e-9)
            assert ndcg_at_k(r, q, k) == pytest.approx(nd, abs=1e-9)
        assert mrr(r, q) == pytest.approx(naive(ranking, grades, 1)[1], abs=1e-9)


def test_report_means_and_ranges():
    cases = list(random_cases(seed=3))
    q = Qrels((qid, d, g) for qid, _, grades in cases for d, g in grades.items())
    rep = evaluate_run([run(qid, *r) for qid, r, _ in cases], q, [1, 10])
    for name, value in rep.aggregates.items():
        per = [row[name] for row in rep.per_query.values()]
        assert value == pytest.approx(sum(per) / len(per), abs=1e-12)
        assert 0.0 <= min(per) and max(per) <= 1.0
    assert rep.to_tsv().startswith("metric\tk\tvalue\nrecall\t1\t")
    assert '"queries": 100' in rep.summary_line()


def test_inserting_relevant_item_never_hurts():
    """Binary judgments: inserting an unretrieved relevant item anywhere in the
    top-k (truncating back to k) never lowers recall@k or nDCG@k."""
    rng = np.random.default_rng(9)
    k = 10
    checked = 0
    for qid, ranking, grades in random_cases(seed=5):
        binary = {d: int(g > 0) for d, g in grades.items()}
        q = Qrels((qid, d, g) for d, g in binary.items())
        top = ranking[:k]
        missing = [d for d, g in binary.items() if g and d not in top]
        if not missing:
            continue
        slot = int(rng.integers(0, len(top) + 1))
        after = (top[:slot] + [missing[0]] + top[slot:])[:k]
        assert recall_at_k(run(qid, *after), q, k) >= recall_at_k(run(qid, *top), q, k)
        assert ndcg_at_k(run(qid, *after), q, k) >= ndcg_at_k(run(qid, *top), q, k) - 1e-15
        checked += 1
    assert checked > 20


def test_tie_order_report_matches_evaluating_a_flat_run():
    cases = list(random_cases(n_cases=30, seed=7))
    q = Qrels((qid, d, g) for qid, _, grades in cases for d, g in grades.items())
    item_ids = [f"d{i}" for i in range(20)]
    flat = [RankedList(qid, tuple((d, 0.0) for d in sorted(item_ids)[:10])) for qid, _, _ in cases]
    a = evaluate_run(flat, q, [1, 10])
    b = tie_order_report(q, item_ids, [1, 10], depth=10)
    assert a.aggregates == pytest.approx(b.aggregates, abs=1e-12)


def test_transfer_report_same_dataset_identical(rng):
    from conftest import random_dataset

    ds = random_dataset(rng, dq=4, dd=4)
    a, b = transfer_report(init_head("linear", 4, 4, seed=0), ds, ds, [1, 10])
    assert a.aggregates == b.aggregates and a.per_query == b.per_query
    a, b = transfer_report(identity_head(), ds, ds, [10])
    assert a.aggregates == b.aggregates
