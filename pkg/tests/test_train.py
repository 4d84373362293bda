import math
import time

import numpy as np
import pytest

from conftest import random_dataset
from sepsearch.errors import BadParams, DimMismatch, DivergedLoss, NonFinite, NoPositives
from sepsearch.head import identity_head, init_head, linear_head
from sepsearch.loss import info_nce_loss
from sepsearch.retrieval import fold_head
from sepsearch.scenarios import ScenarioSpec, gen_synthetic
from sepsearch.store import Dataset, EmbeddingMatrix, Qrels
from sepsearch.train import TrainConfig, make_training_pairs, precompute_transformed_queries, train_head


def direct_info_nce(S, tau):
    """Textbook formula without max subtraction (fine for moderate scores)."""
    total = 0.0
    for i in range(len(S)):
        total -= math.log(math.exp(S[i][i] / tau) / sum(math.exp(v / tau) for v in S[i]))
    return total / len(S)


def test_uniform_scores_give_log_b():
    assert info_nce_loss(np.full((4, 4), 3.0)) == pytest.approx(1.3862943611198906, abs=1e-12)


def test_single_candidate_is_zero():
    assert info_nce_loss(np.array([[123.0]])) == 0.0


def test_dominant_diagonal_value():
    S = np.array([[10.0, 0.0], [0.0, 10.0]])
    assert info_nce_loss(S, 1.0) == pytest.approx(4.5398899216864646e-05, rel=1e-9)
    assert info_nce_loss(S, 1.0) == pytest.approx(direct_info_nce(S, 1.0), rel=1e-9)


def test_matches_direct_formula_on_random_matrices(rng):
    for _ in range(20):
        B = int(rng.integers(1, 9))
        S = rng.standard_normal((B, B)) * 3
        tau = float(rng.uniform(0.2, 2.0))
        assert info_nce_loss(S, tau) == pytest.approx(direct_info_nce(S, tau), rel=1e-12, abs=1e-14)
        assert info_nce_loss(S, tau) >= 0


def test_huge_scores_do_not_overflow():
    S = np.array([[1e5, -1e5], [3e5, 2e5]])
    assert np.isfinite(info_nce_loss(S, 0.01))
    with pytest.raises(NonFinite):
        info_nce_loss(np.array([[np.inf]]))


def test_pairs_from_positives_only():
    queries = EmbeddingMatrix(["q1", "q2"], np.eye(2))
    items = EmbeddingMatrix(["d1", "d2"], np.eye(2))
    ds = Dataset(queries, items, Qrels([("q1", "d1", 1), ("q2", "d2", 0)]))
    assert make_training_pairs(ds, 0) == [("q1", "d1")]
    with pytest.raises(NoPositives):
        make_training_pairs(Dataset(queries, items, Qrels([("q2", "d2", 0)])), 0)


def test_pairs_shuffle_is_deterministic(rng):
    ds = random_dataset(rng, n_q=5, per_query=2)
    a, b = make_training_pairs(ds, 11), make_training_pairs(ds, 11)
    assert a == b and sorted(a) == sorted(ds.qrels.positives())
    assert make_training_pairs(ds, 12) != a


def test_identity_head_records_losses(rng):
    ds = random_dataset(rng, dq=4, dd=4)
    report = train_head(ds, identity_head(4), TrainConfig(batch_size=8, epochs=3))
    assert len(report.epoch_losses) == 3 and report.head.kind == "identity"
    assert report.steps == 3 * math.ceil(60 / 8)


def test_zero_learning_rate_leaves_head_unchanged(rng):
    ds = random_dataset(rng)
    head = init_head("mlp", 6, 4, [5], seed=1)
    for opt in ("sgd", "adam"):
        report = train_head(ds, head, TrainConfig(batch_size=8, epochs=2, learning_rate=0.0, optimizer=opt))
        assert report.head.same_params(head)


def test_training_reduces_loss_on_scenario_data():
    ds, _ = gen_synthetic(ScenarioSpec(scenario="S4"))
    head = init_head("linear", 16, 8, seed=0)
    report = train_head(ds, head, TrainConfig(batch_size=64, epochs=20))
    assert report.epoch_losses[-1] < report.epoch_losses[0]
    assert len(report.epoch_losses) == 20


def test_training_is_deterministic_and_leaves_data_untouched(rng):
    ds = random_dataset(rng)
    before = (ds.queries.data.tobytes(), ds.items.data.tobytes())
    cfg = TrainConfig(batch_size=16, epochs=4, learning_rate=0.01, weight_decay=1e-3)
    r1 = train_head(ds, init_head("linear", 6, 4, seed=5), cfg)
    r2 = train_head(ds, init_head("linear", 6, 4, seed=5), cfg)
    assert r1.epoch_losses == r2.epoch_losses
    assert r1.head.same_params(r2.head)
    assert (ds.queries.data.tobytes(), ds.items.data.tobytes()) == before


def test_train_errors(rng):
    ds = random_dataset(rng)
    with pytest.raises(DimMismatch):
        train_head(ds, init_head("linear", 5, 4, seed=0))
    with pytest.raises(DimMismatch):
        train_head(ds, init_head("linear", 6, 3, seed=0))
    with pytest.raises(BadParams):
        train_head(ds, init_head("linear", 6, 4, seed=0), TrainConfig(batch_size=1000))
    with pytest.raises(BadParams):
        TrainConfig(temperature=0)


def test_divergence_aborts(rng):
    ds = random_dataset(rng)
    head = linear_head(np.full((4, 6), 1e308))
    with pytest.raises(DivergedLoss):
        train_head(ds, head, TrainConfig(batch_size=8, epochs=1))


def test_config_parsing():
    cfg = TrainConfig.from_mapping({"batch_size": "32", "optimizer": "SGD", "shuffle": "false", "temperature": "0.5"})
    assert cfg.batch_size == 32 and cfg.optimizer == "sgd" and cfg.shuffle is False
    with pytest.raises(BadParams):
        TrainConfig.from_mapping({"batchsize": "3"})
    assert TrainConfig.from_mapping(dict(l.split("=") for l in cfg.to_text().split())) == cfg


def test_precompute_equals_fold(rng):
    ds = random_dataset(rng)
    head = init_head("mlp", 6, 4, [3], seed=0)
    assert precompute_transformed_queries(ds, head) == fold_head(head, ds.queries)


def test_step_cost_independent_of_embedding_count():
    """Per-step time is governed by B and head size, not by how many rows exist."""
    rng = np.random.default_rng(0)
    dim, pairs = 32, 2048

    def dataset(extra):
        n = pairs + extra
        q = EmbeddingMatrix([f"q{i}" for i in range(n)], rng.standard_normal((n, dim)))
        d = EmbeddingMatrix([f"d{i}" for i in range(n)], rng.standard_normal((n, dim)))
        return Dataset(q, d, Qrels((f"q{i}", f"d{i}", 1) for i in range(pairs)))

    cfg = TrainConfig(batch_size=256, epochs=3)
    head = init_head("linear", dim, dim, seed=0)
    small, big = dataset(0), dataset(6 * pairs)
    train_head(small, head, cfg)
    t_small = min(train_head(small, head, cfg).mean_step_time for _ in range(3))
    t_big = min(train_head(big, head, cfg).mean_step_time for _ in range(3))
    assert t_big / t_small < 1.5
