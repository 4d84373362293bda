"""Synthetic datasets and executable versions of the four encoding/searching scenarios.

Data model.  Item space holds two disjoint sets of ``n_topics`` orthonormal
topic directions, one for dataset A and one for dataset B.  Each dataset
has ``n_groups`` relevance groups whose centres are unit vectors inside its
topic subspace; item ``i`` belongs to group ``i mod n_groups`` and sits at
its centre plus Gaussian noise, and query ``j`` is relevant (grade 1) to
every item of group ``j mod n_groups``.  Every item is therefore relevant
to the same number of queries, so no query-independent ranking can beat
chance on recall.

What the query encoder exposes is what distinguishes the scenarios:

* S1: nothing, every query embedding is exactly zero.
* S2: the query's item-space signal verbatim (zero padded); the searching
  head is the one forced to output zero.
* S3/S4: ``R @ [s_kept; 0] + noise`` with ``R`` a seeded rotation of
  the query space shared by A and B and ``s_kept`` the query's item-space
  signal restricted to the retained topic directions: all of A's, and the
  first ``round(specificity * n_topics)`` of B's.  S3 is
  specificity 0 (B queries carry no signal), S4 is specificity 1.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .config import format_kv, load_kv, parse_bool
from .errors import BadSpec
from .head import LINEAR, MLP, forward, init_head, linear_head, zero_head
from .metrics import evaluate_head, tie_order_report
from .store import Dataset, EmbeddingMatrix, Qrels
from .train import TrainConfig, train_head

SCENARIOS = ("S1", "S2", "S3", "S4")
CONFIRMS, CONTRADICTS = "ConfirmsPaper", "Contradicts"
KS = (1, 10)
DEPTH = 10
CHANCE_TOL = 1e-9
ABOVE_CHANCE_FACTOR = 5.0
NEAR_CHANCE_FACTOR = 2.0


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "S4"
    dim_query: int = 16
    dim_item: int = 8
    n_queries: int = 256
    n_items: int = 512
    n_topics: int = 4
    noise_sigma: float = 0.05
    rotation_seed: int = 0
    data_seed: int = 0
    n_groups: int = 64
    disjoint_topics: bool = True
    specificity: float | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise BadSpec(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        for name in ("dim_query", "dim_item", "n_queries", "n_items", "n_topics", "n_groups"):
            if getattr(self, name) < 1:
                raise BadSpec(f"{name} must be positive")
        if self.n_topics > min(self.dim_query, self.dim_item):
            raise BadSpec("n_topics exceeds an embedding dimensionality")
        if self.disjoint_topics and 2 * self.n_topics > self.dim_item:
            raise BadSpec("disjoint A/B topic sets need 2 * n_topics <= dim_item")
        if self.dim_query < self.dim_item:
            raise BadSpec("query space must be at least as wide as item space")
        if self.n_queries <= self.n_groups:
            raise BadSpec("need more queries than groups so the held-out half is non-empty")
        if self.n_items < max(self.n_topics, self.n_groups):
            raise BadSpec("need at least one item per topic and per group")
        if not self.noise_sigma >= 0:
            raise BadSpec("noise_sigma must be non-negative")
        if self.rotation_seed < 0 or self.data_seed < 0:
            raise BadSpec("seeds must be non-negative")
        if self.scenario == "S3" and not self.disjoint_topics:
            raise BadSpec("S3 needs dataset B's topics to be disjoint from A's")
        if self.specificity is not None and not 0.0 <= self.specificity <= 1.0:
            raise BadSpec("specificity must lie in [0, 1]")

    @property
    def effective_specificity(self):
        if self.specificity is not None:
            return self.specificity
        return 0.0 if self.scenario == "S3" else 1.0

    @classmethod
    def from_mapping(cls, kv):
        types = {"scenario": str, "noise_sigma": float, "disjoint_topics": parse_bool}
        fields = set(cls.__dataclass_fields__)
        unknown = set(kv) - fields
        if unknown:
            raise BadSpec(f"unknown spec keys: {sorted(unknown)}")
        args = {}
        try:
            for k, v in kv.items():
                if k == "specificity":
                    args[k] = None if v.lower() in ("", "none") else float(v)
                else:
                    args[k] = types.get(k, int)(v)
        except ValueError as exc:
            raise BadSpec(str(exc)) from exc
        if "scenario" in args:
            args["scenario"] = args["scenario"].upper()
        return cls(**args)

    @classmethod
    def load(cls, path):
        return cls.from_mapping(load_kv(path))

    def to_text(self):
        d = asdict(self)
        d["specificity"] = "none" if self.specificity is None else self.specificity
        return format_kv(d)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _ids(prefix, n):
    width = max(4, len(str(n - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def _dataset(spec, tag, topics, n_kept, rotation, rng):
    n_q, n_d, n_g = spec.n_queries, spec.n_items, spec.n_groups
    coords = rng.standard_normal((n_g, spec.n_topics))
    coords /= np.linalg.norm(coords, axis=1, keepdims=True)
    centres = coords @ topics.T  # n_g x dim_item
    item_group = np.arange(n_d) % n_g
    items = centres[item_group] + spec.noise_sigma * rng.standard_normal((n_d, spec.dim_item))
    query_group = np.arange(n_q) % n_g
    signal = centres[query_group]
    q_noise = spec.noise_sigma * rng.standard_normal((n_q, spec.dim_query))
    pad = spec.dim_query - spec.dim_item
    if spec.scenario == "S1":
        queries = np.zeros((n_q, spec.dim_query))
    elif spec.scenario == "S2":
        queries = np.hstack([signal, np.zeros((n_q, pad))]) + q_noise
    else:
        kept = coords[query_group, :n_kept] @ topics[:, :n_kept].T
        generic = np.hstack([kept, np.zeros((n_q, pad))])
        queries = generic @ rotation.T + q_noise
    q_ids, d_ids = _ids("q", n_q), _ids("d", n_d)
    members = [np.flatnonzero(item_group == g) for g in range(n_g)]
    qrels = Qrels((q_ids[j], d_ids[i], 1) for j in range(n_q) for i in members[query_group[j]])
    return Dataset(
        EmbeddingMatrix(q_ids, queries.astype(np.float32)),
        EmbeddingMatrix(d_ids, items.astype(np.float32)),
        qrels,
        name=tag,
    )


def gen_synthetic(spec):
    """Datasets A (training) and B (transfer) for ``spec``; fully seeded."""
    basis = _orthogonal(np.random.default_rng([spec.data_seed, 2]), spec.dim_item)
    t = spec.n_topics
    topics_a = basis[:, :t]
    topics_b = basis[:, t:2 * t] if spec.disjoint_topics else topics_a
    retained = int(round(spec.effective_specificity * t)) if spec.disjoint_topics else t
    rotation = _orthogonal(np.random.default_rng([spec.rotation_seed, 3]), spec.dim_query)
    ds_a = _dataset(spec, "A", topics_a, t, rotation, np.random.default_rng([spec.data_seed, 0]))
    ds_b = _dataset(spec, "B", topics_b, retained, rotation, np.random.default_rng([spec.data_seed, 1]))
    return ds_a, ds_b


def split_queries(ds, n_groups):
    """Disjoint (train, test) views of ``ds`` sharing its items.

    Query ``j`` goes to the training half when ``(j // n_groups)`` is even, so
    both halves cover every group equally and keep uniform item popularity.
    """
    halves = ([], [])
    for j, qid in enumerate(ds.queries.ids):
        halves[(j // n_groups) % 2].append(qid)
    out = []
    for name, qids in zip(("train", "test"), halves):
        keep = set(qids)
        qrels = Qrels(e for e in ds.qrels.entries if e[0] in keep)
        queries = EmbeddingMatrix(qids, ds.queries.data[ds.queries.rows(qids)])
        out.append(Dataset(queries, ds.items, qrels, name=f"{ds.name}/{name}"))
    return tuple(out)


def least_squares_head(ds):
    """Closed-form linear head (with bias) regressing each query onto the mean of its relevant items."""
    targets = np.zeros((ds.queries.count, ds.items.dim))
    for qid in ds.qrels.query_ids():
        rel = ds.qrels.relevant(qid)
        if rel:
            targets[ds.queries.index_of(qid)] = ds.items.data[ds.items.rows(rel)].mean(axis=0)
    X = np.hstack([ds.queries.data, np.ones((ds.queries.count, 1))])
    sol, *_ = np.linalg.lstsq(X, targets, rcond=None)
    return linear_head(sol[:-1].T, sol[-1])


@dataclass
class ScenarioReport:
    scenario: str
    metrics_before: object
    metrics_after_training: object | None
    chance_level: float
    verdict: str
    notes: str = ""
    results: dict = field(default_factory=dict)
    chance: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    def to_tsv(self):
        lines = ["scenario\tdataset\thead\tmetric\tvalue\n"]
        for name, report in self.chance.items():
            for metric, v in report.aggregates.items():
                lines.append(f"{self.scenario}\t{name}\tchance\t{metric}\t{v:.6f}\n")
        for key, report in self.results.items():
            ds_name, head = key.split("/")
            for metric, v in report.aggregates.items():
                lines.append(f"{self.scenario}\t{ds_name}\t{head}\t{metric}\t{v:.6f}\n")
        return "".join(lines)

    def summary(self):
        out = [f"scenario {self.scenario}: {self.verdict}", f"  chance recall@10 (A): {self.chance_level:.6f}"]
        for key, report in self.results.items():
            out.append(f"  {key:<14} recall@10={report['recall@10']:.4f} mrr={report['mrr']:.4f} ndcg@10={report['ndcg@10']:.4f}")
        for name, ok in self.checks.items():
            out.append(f"  [{'ok' if ok else 'FAIL'}] {name}")
        if self.notes:
            out.append(f"  note: {self.notes}")
        return "\n".join(out) + "\n"


def _at_chance(report, chance):
    return all(abs(report[m] - chance[m]) <= CHANCE_TOL for m in chance.aggregates)


def _eval(head, ds):
    return evaluate_head(head, ds, KS, DEPTH)


def _fresh_head(spec, cfg, hidden=(), bias=True):
    kind = MLP if hidden else LINEAR
    return init_head(kind, spec.dim_query, spec.dim_item, hidden, seed=cfg.seed, bias=bias)


def _constant_scores(head, ds):
    out = forward(head, ds.queries.data)
    return bool(np.all(out == 0.0))


def run_scenario(spec, cfg=TrainConfig()):
    """Run one scenario end to end; the verdict is computed from ``checks``.

    Heads are trained on the training half of a dataset's queries and every
    metric, chance included, is measured on the held-out half.
    """
    ds_a, ds_b = gen_synthetic(spec)
    train_a, test_a = split_queries(ds_a, spec.n_groups)
    train_b, test_b = split_queries(ds_b, spec.n_groups)
    chance = {
        "A": tie_order_report(test_a.qrels, test_a.items.ids, KS, DEPTH),
        "B": tie_order_report(test_b.qrels, test_b.items.ids, KS, DEPTH),
    }
    results, checks, notes = {}, {}, ""
    before = after = None

    if spec.scenario == "S1":
        head = _fresh_head(spec, cfg, bias=False)
        before = _eval(head, test_a)
        trained = train_head(train_a, head, cfg).head
        results["A/trained"] = after = _eval(trained, test_a)
        results["B/frozen"] = _eval(trained, test_b)
        checks["head output is zero for every query"] = _constant_scores(trained, ds_a) and _constant_scores(trained, ds_b)
        checks["A metrics equal chance"] = _at_chance(after, chance["A"])
        checks["B metrics equal chance"] = _at_chance(results["B/frozen"], chance["B"])
    elif spec.scenario == "S2":
        head = zero_head(spec.dim_query, spec.dim_item)
        results["A/zero"] = before = _eval(head, test_a)
        results["B/zero"] = _eval(head, test_b)
        checks["head output is zero for every query"] = _constant_scores(head, ds_a) and _constant_scores(head, ds_b)
        checks["A metrics equal chance"] = _at_chance(before, chance["A"])
        checks["B metrics equal chance"] = _at_chance(results["B/zero"], chance["B"])
    else:
        head = _fresh_head(spec, cfg)
        results["A/initial"] = before = _eval(head, test_a)
        trained_a = train_head(train_a, head, cfg).head
        results["A/trained"] = after = _eval(trained_a, test_a)
        results["B/frozen"] = _eval(trained_a, test_b)
        results["B/retrained"] = _eval(train_head(train_b, head, cfg).head, test_b)
        ca, cb = chance["A"]["recall@10"], chance["B"]["recall@10"]
        checks[f"A recall@10 >= {ABOVE_CHANCE_FACTOR:g}x chance"] = after["recall@10"] >= ABOVE_CHANCE_FACTOR * ca
        if spec.scenario == "S3":
            for key in ("B/frozen", "B/retrained"):
                checks[f"{key} recall@10 <= {NEAR_CHANCE_FACTOR:g}x chance"] = (
                    results[key]["recall@10"] <= NEAR_CHANCE_FACTOR * cb
                )
        else:
            checks[f"B/retrained recall@10 >= {ABOVE_CHANCE_FACTOR:g}x chance"] = (
                results["B/retrained"]["recall@10"] >= ABOVE_CHANCE_FACTOR * cb
            )
            notes = f"frozen A head on B: recall@10={results['B/frozen']['recall@10']:.4f} (recorded only)"

    verdict = CONFIRMS if all(checks.values()) else CONTRADICTS
    return ScenarioReport(
        spec.scenario, before, after, chance["A"]["recall@10"], verdict, notes, results, chance, checks
    )


@dataclass(frozen=True)
class SweepRow:
    specificity: float
    head_size: int
    recall_a: float
    recall_b: float


def bottleneck_sweep(base_spec, head_sizes, specificities, cfg=TrainConfig()):
    """Held-out recall@10 on A (trained on A) and on B (retrained on B) over a grid.

    ``head_size`` 0 is a linear head; a positive size is an MLP with one
    tanh hidden layer of that width.
    """
    head_sizes, specificities = list(head_sizes), list(specificities)
    if not head_sizes or not specificities:
        raise BadSpec("sweep needs at least one head size and one specificity")
    if any(h < 0 for h in head_sizes):
        raise BadSpec("head sizes must be non-negative")
    rows = []
    for s in specificities:
        spec = replace(base_spec, scenario="S4", specificity=float(s))
        ds_a, ds_b = gen_synthetic(spec)
        train_a, test_a = split_queries(ds_a, spec.n_groups)
        train_b, test_b = split_queries(ds_b, spec.n_groups)
        for h in head_sizes:
            head = _fresh_head(spec, cfg, hidden=(h,) if h else ())
            ra = _eval(train_head(train_a, head, cfg).head, test_a)["recall@10"]
            rb = _eval(train_head(train_b, head, cfg).head, test_b)["recall@10"]
            rows.append(SweepRow(float(s), int(h), ra, rb))
    return rows


def format_sweep(rows):
    lines = ["specificity\thead_size\trecall@10_A\trecall@10_B\n"]
    lines += [f"{r.specificity:g}\t{r.head_size}\t{r.recall_a:.6f}\t{r.recall_b:.6f}\n" for r in rows]
    return "".join(lines)


def chance_recall_bound(spec):
    """Expected recall@10 of a random ranking (used only for quick sanity checks)."""
    per_group = math.ceil(spec.n_items / spec.n_groups)
    return 10 * per_group / spec.n_items / min(per_group, 10)
