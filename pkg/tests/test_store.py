import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sepsearch.errors import (
    BadMagic,
    CorruptHeader,
    DimMismatch,
    DuplicateId,
    DuplicatePair,
    IoFailure,
    NonFiniteValue,
    ParseError,
    UnknownId,
)
from sepsearch.store import (
    Dataset,
    EmbeddingMatrix,
    Qrels,
    decode_embeddings,
    encode_embeddings,
    load_dataset,
    load_embeddings,
    load_qrels,
    lookup,
    parse_qrels,
    save_dataset,
    save_embeddings,
)


def test_round_trip_small(tmp_path):
    m = EmbeddingMatrix(["a", "b"], [[1, 0, 0], [0, 1, 0]])
    save_embeddings(m, tmp_path / "m.sepe")
    back = load_embeddings(tmp_path / "m.sepe")
    assert back.count == 2 and back.dim == 3
    assert back == m


def test_round_trip_one_by_one(tmp_path):
    m = EmbeddingMatrix(["x"], [[0.5]])
    save_embeddings(m, tmp_path / "m.sepe")
    assert load_embeddings(tmp_path / "m.sepe") == m


def test_round_trip_random_elementwise(tmp_path, rng):
    data = rng.standard_normal((100, 8)).astype(np.float32)
    m = EmbeddingMatrix([f"id-{i}" for i in range(100)], data)
    save_embeddings(m, tmp_path / "m.sepe")
    back = load_embeddings(tmp_path / "m.sepe")
    assert back.ids == m.ids
    for i in range(100):
        for j in range(8):
            assert back.data[i, j] == data[i, j]


@given(
    hnp.arrays(
        np.float32,
        hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12),
        elements=st.floats(allow_nan=False, allow_infinity=False, width=32),
    ),
    st.text(min_size=0, max_size=6),
)
@settings(max_examples=60, deadline=None)
def test_round_trip_is_bit_exact(data, prefix):
    m = EmbeddingMatrix([f"{prefix}{i}" for i in range(data.shape[0])], data)
    back = decode_embeddings(encode_embeddings(m))
    assert back.ids == m.ids
    assert back.data.tobytes() == m.data.tobytes()


def test_unicode_ids_survive(tmp_path):
    m = EmbeddingMatrix(["é", "日本", ""], np.eye(3))
    save_embeddings(m, tmp_path / "u.sepe")
    assert load_embeddings(tmp_path / "u.sepe").ids == ("é", "日本", "")


def test_bad_magic():
    buf = bytearray(encode_embeddings(EmbeddingMatrix(["a"], [[1.0]])))
    buf[:4] = b"NOPE"
    with pytest.raises(BadMagic):
        decode_embeddings(bytes(buf))


def test_payload_one_value_short_is_corrupt():
    m = EmbeddingMatrix(["a", "b"], [[1, 0, 0], [0, 1, 0]])
    buf = encode_embeddings(m)
    header, payload, ids = buf[:24], buf[24:48], buf[48:]
    with pytest.raises(CorruptHeader):
        decode_embeddings(header + payload[:-4] + ids)


@pytest.mark.parametrize("cut", [5, 23, 30, -1])
def test_truncations_are_typed_errors(cut):
    buf = encode_embeddings(EmbeddingMatrix(["a", "b"], [[1, 2], [3, 4]]))
    with pytest.raises(CorruptHeader):
        decode_embeddings(buf[:cut])


def test_trailing_bytes_rejected():
    buf = encode_embeddings(EmbeddingMatrix(["a"], [[1.0]]))
    with pytest.raises(CorruptHeader):
        decode_embeddings(buf + b"\x00")


def test_header_version_and_reserved_checked():
    buf = bytearray(encode_embeddings(EmbeddingMatrix(["a"], [[1.0]])))
    bad = bytearray(buf)
    struct.pack_into("<I", bad, 4, 2)
    with pytest.raises(CorruptHeader):
        decode_embeddings(bytes(bad))
    bad = bytearray(buf)
    struct.pack_into("<I", bad, 20, 1)
    with pytest.raises(CorruptHeader):
        decode_embeddings(bytes(bad))


def test_nan_in_file_rejected():
    buf = bytearray(encode_embeddings(EmbeddingMatrix(["a", "b"], [[1, 2], [3, 4]])))
    struct.pack_into("<f", buf, 24 + 4, float("nan"))  # row 0 col 1
    with pytest.raises(NonFiniteValue, match="row 0 col 1"):
        decode_embeddings(bytes(buf))


def test_duplicate_id_in_file_rejected():
    good = encode_embeddings(EmbeddingMatrix(["a", "b"], [[1.0], [2.0]]))
    bad = good[:-1] + b"a"
    with pytest.raises(DuplicateId):
        decode_embeddings(bad)


def test_constructor_invariants():
    with pytest.raises(DuplicateId):
        EmbeddingMatrix(["a", "a"], [[1.0], [2.0]])
    with pytest.raises(NonFiniteValue):
        EmbeddingMatrix(["a"], [[np.inf]])
    with pytest.raises(DimMismatch):
        EmbeddingMatrix(["a", "b"], [[1.0]])


def test_matrices_are_immutable():
    m = EmbeddingMatrix(["a"], [[1.0, 2.0]])
    with pytest.raises(ValueError):
        m.data[0, 0] = 5.0


def test_save_to_unwritable_path(tmp_path):
    with pytest.raises(IoFailure):
        save_embeddings(EmbeddingMatrix(["a"], [[1.0]]), tmp_path / "missing" / "m.sepe")


def test_load_missing_file(tmp_path):
    with pytest.raises(IoFailure):
        load_embeddings(tmp_path / "nope.sepe")


def test_lookup(tmp_path):
    m = EmbeddingMatrix(["a", "b"], [[1, 2], [3, 4]])
    assert lookup(m, "b").tolist() == [3, 4]
    with pytest.raises(UnknownId):
        lookup(m, "c")
    save_embeddings(m, tmp_path / "m.sepe")
    assert lookup(load_embeddings(tmp_path / "m.sepe"), "a").tolist() == [1, 2]


def test_tie_rank_orders_ids():
    m = EmbeddingMatrix(["c", "a", "b"], np.zeros((3, 1)))
    assert m.tie_rank.tolist() == [2, 0, 1]


def test_qrels_parse():
    q = parse_qrels("q1\td1\t1\n")
    assert q.entries == (("q1", "d1", 1),)
    assert parse_qrels("# comment\nq1\td1\t0\n\nq1\td2\t2\n").relevant("q1") == {"d2": 2}


def test_qrels_errors(tmp_path):
    with pytest.raises(DuplicatePair):
        parse_qrels("q1\td1\t1\nq1\td1\t2\n")
    with pytest.raises(ParseError):
        parse_qrels("q1\td1\t-1\n")
    with pytest.raises(ParseError):
        parse_qrels("q1 d1 1\n")
    with pytest.raises(ParseError):
        parse_qrels("q1\td1\tone\n")
    (tmp_path / "q.tsv").write_text("q1\td1\t1\n")
    assert len(load_qrels(tmp_path / "q.tsv")) == 1


def test_dataset_referential_check():
    queries = EmbeddingMatrix(["q1"], [[1.0]])
    items = EmbeddingMatrix(["d1"], [[1.0, 0.0]])
    Dataset(queries, items, Qrels([("q1", "d1", 1)]))
    with pytest.raises(UnknownId):
        Dataset(queries, items, Qrels([("q2", "d1", 1)]))
    with pytest.raises(UnknownId):
        Dataset(queries, items, Qrels([("q1", "d9", 1)]))


def test_dataset_dir_round_trip(tmp_path, rng):
    from conftest import random_dataset

    ds = random_dataset(rng)
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.queries == ds.queries and back.items == ds.items and back.qrels == ds.qrels
