"""Trainable searching heads over frozen query/item embeddings.

Scores are inner products between ``head(query_embedding)`` and item
embeddings.  Heads are trained contrastively on precomputed matrices and can
be folded into the query embeddings, after which plain inner-product search
(exact or IVF) reproduces the same rankings.
"""
__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .head import SearchHead, apply, apply_batch, gradients, init_head, load_head, save_head
from .metrics import MetricsReport, evaluate_run, mrr, ndcg_at_k, recall_at_k, transfer_report
from .retrieval import (
    IvfIndex,
    RankedList,
    build_ivf,
    fold_head,
    relevance_prob,
    score,
    search_ivf,
    top_k_exact,
)
from .scenarios import ScenarioReport, ScenarioSpec, bottleneck_sweep, gen_synthetic, run_scenario
from .store import Dataset, EmbeddingMatrix, Qrels, load_embeddings, load_qrels, lookup, save_embeddings
from .train import TrainConfig, TrainReport, info_nce_loss, make_training_pairs, precompute_transformed_queries, train_head
