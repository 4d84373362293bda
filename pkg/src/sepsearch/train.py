"""Contrastive training of a searching head on frozen, precomputed embeddings.

No encoder is ever involved: each step gathers B query rows and B positive
item rows from the dataset matrices, scores them against each other, and
updates only the head.  Step cost therefore depends on B and the head size,
not on how many embeddings the dataset holds.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import format_kv, load_kv, parse_bool
from .errors import BadParams, DimMismatch, DivergedLoss, NoPositives, NonFinite
from .head import apply_batch, gradients
from .loss import info_nce_loss, info_nce_with_grad  # noqa: F401  (re-exported)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 20
    learning_rate: float = 1e-3
    temperature: float = 0.05
    optimizer: str = "adam"
    weight_decay: float = 0.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise BadParams("batch_size and epochs must be positive")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise BadParams("learning_rate must be a finite non-negative number")
        if not self.temperature > 0:
            raise BadParams("temperature must be positive")
        if self.weight_decay < 0:
            raise BadParams("weight_decay must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise BadParams(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.seed < 0:
            raise BadParams("seed must be non-negative")

    @classmethod
    def from_mapping(cls, kv):
        known = {f: t for f, t in cls.__annotations__.items()}
        unknown = set(kv) - set(known)
        if unknown:
            raise BadParams(f"unknown train config keys: {sorted(unknown)}")
        conv = {"int": int, "float": float, "str": lambda s: s.strip().lower(), "bool": parse_bool}
        try:
            return cls(**{k: conv[known[k]](v) for k, v in kv.items()})
        except ValueError as exc:
            raise BadParams(str(exc)) from exc

    @classmethod
    def load(cls, path):
        return cls.from_mapping(load_kv(path))

    def to_text(self):
        return format_kv(asdict(self))


@dataclass
class TrainReport:
    epoch_losses: list
    head: object
    steps: int
    wall_time: float
    step_times: list = field(default_factory=list, repr=False)

    @property
    def mean_step_time(self):
        return float(np.mean(self.step_times)) if self.step_times else 0.0

    def loss_log(self):
        """TSV ``epoch<TAB>mean_loss`` lines, epochs numbered from 1."""
        return "".join(f"{i}\t{loss:.10g}\n" for i, loss in enumerate(self.epoch_losses, 1))


def make_training_pairs(ds, seed=0, shuffle=True):
    """One (query_id, item_id) pair per grade >= 1 judgment, optionally shuffled."""
    pairs = ds.qrels.positives()
    if not pairs:
        raise NoPositives("qrels contain no grade >= 1 judgments")
    if shuffle:
        perm = np.random.default_rng(seed).permutation(len(pairs))
        pairs = [pairs[i] for i in perm]
    return pairs


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        return [p - self.lr * g for p, g in zip(params, grads)]


class _Adam:
    def __init__(self, lr, params):
        self.lr = lr
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            out.append(p - self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS))
        return out


def _check_dims(ds, head):
    if head.in_dim is not None and head.in_dim != ds.queries.dim:
        raise DimMismatch(f"head input dim {head.in_dim} != query dim {ds.queries.dim}")
    out_dim = head.out_dim if head.out_dim is not None else ds.queries.dim
    if out_dim != ds.items.dim:
        raise DimMismatch(f"head output dim {out_dim} != item dim {ds.items.dim}")


def train_head(ds, head, cfg=TrainConfig(), log=None):
    """Fit ``head`` to ``ds`` with in-batch InfoNCE; returns a TrainReport.

    ``log``, if given, is called as ``log(epoch, mean_loss)`` after each epoch.
    """
    _check_dims(ds, head)
    pairs = make_training_pairs(ds, cfg.seed, cfg.shuffle)
    if cfg.batch_size > len(pairs):
        raise BadParams(f"batch_size {cfg.batch_size} exceeds {len(pairs)} training pairs")
    q_rows = ds.queries.rows([q for q, _ in pairs])
    d_rows = ds.items.rows([d for _, d in pairs])
    Qall, Dall = ds.queries.data, ds.items.data
    rng = np.random.default_rng(cfg.seed + 1)

    params = head.params()
    is_weight = [p.ndim == 2 for p in params]
    opt = _Sgd(cfg.learning_rate) if cfg.optimizer == "sgd" else _Adam(cfg.learning_rate, params)

    n = len(pairs)
    epoch_losses, step_times = [], []
    steps = 0
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if (cfg.shuffle and epoch > 0) else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            t0 = time.perf_counter()
            idx = order[start:start + cfg.batch_size]
            Q = Qall[q_rows[idx]]
            D = Dall[d_rows[idx]]
            current = head.with_params(params) if params else head
            try:
                loss, grads = gradients(current, Q, D, temperature=cfg.temperature)
            except NonFinite as exc:
                raise DivergedLoss(f"epoch {epoch + 1}, step {steps + 1}: {exc}") from exc
            if params:
                if cfg.weight_decay:
                    grads = [g + cfg.weight_decay * p if w else g for g, p, w in zip(grads, params, is_weight)]
                params = opt.step(params, grads)
                if not all(np.isfinite(p).all() for p in params):
                    raise DivergedLoss(f"epoch {epoch + 1}: parameters became non-finite")
            total += loss * len(idx)
            steps += 1
            step_times.append(time.perf_counter() - t0)
        mean = total / n
        if not math.isfinite(mean):
            raise DivergedLoss(f"epoch {epoch + 1}: mean loss {mean}")
        epoch_losses.append(mean)
        if log is not None:
            log(epoch + 1, mean)
    final = head.with_params(params) if params else head
    return TrainReport(epoch_losses, final, steps, time.perf_counter() - t_start, step_times)


def precompute_transformed_queries(ds, head):
    """Materialize head(query) for every query: the folded query encoder's output."""
    _check_dims(ds, head)
    return apply_batch(head, ds.queries)
