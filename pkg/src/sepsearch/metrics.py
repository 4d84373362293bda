"""Recall, MRR and nDCG over ranked lists, plus aggregate reports.

Conventions: recall@k is capped, ``hits / min(|relevant|, k)``; nDCG uses
linear gain (the raw grade) and ``1/log2(rank + 1)`` discounting; unjudged
retrieved items count as non-relevant.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import DimMismatch, EmptyRun, NoRelevant
from .retrieval import search


def _relevant(run, qrels):
    rel = qrels.relevant(run.query_id)
    if not rel:
        raise NoRelevant(f"query {run.query_id!r} has no relevant items")
    return rel


def recall_at_k(run, qrels, k):
    rel = _relevant(run, qrels)
    hits = sum(1 for d in run.item_ids()[:k] if d in rel)
    return hits / min(len(rel), k)


def mrr(run, qrels):
    rel = _relevant(run, qrels)
    for rank, d in enumerate(run.item_ids(), 1):
        if d in rel:
            return 1.0 / rank
    return 0.0


def _dcg(gains):
    return sum(g / math.log2(r + 1) for r, g in enumerate(gains, 1))


def ndcg_at_k(run, qrels, k):
    _relevant(run, qrels)
    judged = qrels.judged(run.query_id)
    dcg = _dcg([judged.get(d, 0) for d in run.item_ids()[:k]])
    idcg = _dcg(sorted(judged.values(), reverse=True)[:k])
    return dcg / idcg


def metric_names(ks):
    names = []
    for k in ks:
        names += [f"recall@{k}", f"ndcg@{k}"]
    return names + ["mrr"]


def query_metrics(run, qrels, ks):
    out = {}
    for k in ks:
        out[f"recall@{k}"] = recall_at_k(run, qrels, k)
        out[f"ndcg@{k}"] = ndcg_at_k(run, qrels, k)
    out["mrr"] = mrr(run, qrels)
    return out


@dataclass
class MetricsReport:
    aggregates: dict
    per_query: dict
    n_queries: int
    skipped: list = field(default_factory=list)

    def __getitem__(self, name):
        return self.aggregates[name]

    def to_tsv(self, per_query=True):
        lines = ["metric\tk\tvalue\n"]
        for name, value in self.aggregates.items():
            metric, _, k = name.partition("@")
            lines.append(f"{metric}\t{k or '-'}\t{value:.6f}\n")
        if per_query:
            lines.append("# per-query\n")
            for qid, row in self.per_query.items():
                for name, value in row.items():
                    metric, _, k = name.partition("@")
                    lines.append(f"{qid}\t{metric}\t{k or '-'}\t{value:.6f}\n")
        return "".join(lines)

    def summary_line(self):
        payload = {"queries": self.n_queries, "skipped": len(self.skipped)}
        payload.update({k: round(v, 6) for k, v in self.aggregates.items()})
        return json.dumps(payload, sort_keys=True)


def _aggregate(per_query, ks, skipped):
    if not per_query:
        raise EmptyRun("no evaluable queries (every query lacks relevant judgments)")
    n = len(per_query)
    agg = {name: sum(row[name] for row in per_query.values()) / n for name in metric_names(ks)}
    return MetricsReport(agg, per_query, n, skipped)


def evaluate_run(runs, qrels, ks=(1, 10)):
    """Per-query metrics and their means.  Queries without relevant items are
    listed in ``skipped`` and excluded from the means."""
    runs = list(runs)
    if not runs:
        raise EmptyRun("run contains no queries")
    ks = sorted(set(int(k) for k in ks))
    per_query, skipped = {}, []
    for run in sorted(runs, key=lambda r: r.query_id):
        if run.query_id in per_query:
            raise EmptyRun(f"query {run.query_id!r} appears twice in the run")
        try:
            per_query[run.query_id] = query_metrics(run, qrels, ks)
        except NoRelevant:
            skipped.append(run.query_id)
    return _aggregate(per_query, ks, skipped)


def evaluate_head(head, ds, ks=(1, 10), depth=None):
    """Exact search of ``ds`` with ``head`` applied to the queries, then evaluate."""
    depth = depth or max(ks)
    judged = set(ds.qrels.query_ids())
    runs = [r for r in search(ds.queries, ds.items, depth, head=head) if r.query_id in judged]
    return evaluate_run(runs, ds.qrels, ks)


def transfer_report(head, ds_train, ds_target, ks=(1, 10), depth=None):
    """Evaluate one frozen head in-domain and zero-shot on a second dataset."""
    for ds in (ds_train, ds_target):
        if head.in_dim is not None and head.in_dim != ds.queries.dim:
            raise DimMismatch(f"head input dim {head.in_dim} != {ds.name or 'dataset'} query dim {ds.queries.dim}")
    return evaluate_head(head, ds_train, ks, depth), evaluate_head(head, ds_target, ks, depth)


def tie_order_report(qrels, item_ids, ks=(1, 10), depth=None, query_ids=None):
    """Metrics of the ranking produced when every item scores the same.

    The ascending-id tie rule then ranks items in sorted id order for every
    query, so each metric follows directly from the sorted positions of the
    judged items; nothing is scored or sorted per query.
    """
    ks = sorted(set(int(k) for k in ks))
    depth = depth or max(ks)
    pos = {d: i for i, d in enumerate(sorted(item_ids))}
    per_query, skipped = {}, []
    for qid in sorted(query_ids if query_ids is not None else qrels.query_ids()):
        judged = {d: g for d, g in qrels.judged(qid).items() if d in pos}
        rel_pos = sorted(pos[d] for d, g in judged.items() if g >= 1)
        if not rel_pos:
            skipped.append(qid)
            continue
        row = {}
        ideal = sorted(judged.values(), reverse=True)
        for k in ks:
            cut = min(k, depth)
            row[f"recall@{k}"] = sum(p < cut for p in rel_pos) / min(len(rel_pos), k)
            dcg = sum(g / math.log2(pos[d] + 2) for d, g in judged.items() if pos[d] < cut)
            idcg = sum(g / math.log2(r + 2) for r, g in enumerate(ideal[:k]))
            row[f"ndcg@{k}"] = dcg / idcg
        row["mrr"] = 1.0 / (rel_pos[0] + 1) if rel_pos[0] < depth else 0.0
        per_query[qid] = row
    return _aggregate(per_query, ks, skipped)
