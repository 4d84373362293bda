import numpy as np
import pytest

from sepsearch import kernels
from sepsearch.store import Dataset, EmbeddingMatrix, Qrels


@pytest.fixture(params=kernels.available())
def backend(request):
    prev = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_matrix(rng, n, dim, prefix="d", f32=True):
    data = rng.standard_normal((n, dim))
    if f32:
        data = data.astype(np.float32)
    return EmbeddingMatrix([f"{prefix}{i:05d}" for i in range(n)], data)


def random_dataset(rng, n_q=20, n_d=60, dq=6, dd=4, per_query=3):
    queries = random_matrix(rng, n_q, dq, "q")
    items = random_matrix(rng, n_d, dd, "d")
    entries = []
    for qid in queries.ids:
        for j in rng.choice(n_d, size=per_query, replace=False):
            entries.append((qid, items.ids[j], 1))
    return Dataset(queries, items, Qrels(entries))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
