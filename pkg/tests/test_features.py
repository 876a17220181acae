import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdmtl import numerics as nx
from sdmtl.features import (
    CATEGORICAL, NUMERIC, DatasetSchema, FeatureSpec, FunnelViolationError, LabelError,
    MissingColumnError, SchemaError, ValueParseError, embed_lookup, hash_category, init_embeddings,
    load_csv, log_round_bucketize, read_csv,
)

SCHEMA = DatasetSchema((FeatureSpec("city", CATEGORICAL, 16), FeatureSpec("price", NUMERIC, 6)), 2)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.mark.parametrize("x,b", [(0, 0), (6, 2), (100, 5), (0.6, 0), (0.7, 1)])
def test_bucketize_examples(x, b):
    assert log_round_bucketize(x) == b


def test_bucketize_clamps_and_rejects():
    assert log_round_bucketize(1e9, 6) == 5
    with pytest.raises(ValueError):
        log_round_bucketize(-0.1)
    with pytest.raises(ValueError):
        log_round_bucketize(float("nan"))


@given(st.floats(0, 1e12), st.floats(0, 1e12))
def test_bucketize_monotone(a, b):
    lo, hi = sorted((a, b))
    assert log_round_bucketize(lo) <= log_round_bucketize(hi)


@given(st.text(max_size=20), st.integers(1, 1000))
def test_hash_in_range_and_stable(tok, vocab):
    h = hash_category(tok, vocab)
    assert 0 <= h < vocab and h == hash_category(tok, vocab)


def test_schema_needs_two_tasks():
    with pytest.raises(SchemaError):
        DatasetSchema((FeatureSpec("a", CATEGORICAL, 4),), 1)


def test_schema_round_trip(tmp_path):
    SCHEMA.save(tmp_path / "s.cfg")
    loaded = DatasetSchema.load(tmp_path / "s.cfg")
    assert loaded == SCHEMA
    assert loaded.label_columns == ["t1", "t2"]


def test_accepts_funnel_valid_rows(tmp_path):
    p = write(tmp_path, "city,price,t1,t2\nparis,0,1,0\nrome,6,1,1\noslo,100,0,0\n")
    ds = read_csv(p, SCHEMA)
    assert len(ds) == 3 and ds.dropped == 0
    np.testing.assert_array_equal(ds.rows[:, 1], [0, 2, 5])
    assert ds.rows[0, 0] == hash_category("paris", 16)


def test_drop_row_policy(tmp_path):
    p = write(tmp_path, "city,price,t1,t2\na,0,1,0\nb,1,0,1\nc,2,0,0\n")
    ds = read_csv(p, SCHEMA, "drop_row")
    assert len(ds) == 2 and ds.dropped == 1
    assert np.all(ds.labels[:, 1] <= ds.labels[:, 0])


def test_reject_file_policy_names_row(tmp_path):
    p = write(tmp_path, "city,price,t1,t2\na,0,1,0\nb,1,0,1\n")
    with pytest.raises(FunnelViolationError, match="row 1"):
        read_csv(p, SCHEMA, "reject_file")


def test_distinct_errors(tmp_path):
    with pytest.raises(MissingColumnError, match="price"):
        read_csv(write(tmp_path, "city,t1,t2\na,1,0\n"), SCHEMA)
    with pytest.raises(LabelError, match="t2"):
        read_csv(write(tmp_path, "city,price,t1,t2\na,1,1,2\n"), SCHEMA)
    with pytest.raises(ValueParseError, match="price"):
        read_csv(write(tmp_path, "city,price,t1,t2\na,-3,1,0\n"), SCHEMA)
    with pytest.raises(FileNotFoundError):
        read_csv(tmp_path / "absent.csv", SCHEMA)


def test_stream_deterministic_and_batched(tmp_path):
    body = "".join(f"c{i % 5},{i},{int(i % 3 > 0)},{int(i % 3 > 1)}\n" for i in range(25))
    p = write(tmp_path, "city,price,t1,t2\n" + body)
    a = list(load_csv(p, SCHEMA, batch_size=10))
    b = list(load_csv(p, SCHEMA, batch_size=10))
    assert [x.size for x in a] == [10, 10, 5]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.rows, y.rows)
        np.testing.assert_array_equal(x.labels, y.labels)
        assert np.all(x.labels[:, 1] <= x.labels[:, 0])
        assert np.all((x.rows >= 0) & (x.rows < np.array(SCHEMA.vocab_sizes)))


def test_embed_lookup_shapes_and_rows(rng):
    tables = list(init_embeddings([5, 7, 3], 4, rng).values())
    rows = np.array([[0, 6, 2], [0, 6, 2]])
    H = embed_lookup(rows, tables)
    assert H.shape == (2, 3, 4)
    np.testing.assert_array_equal(H.value[0], H.value[1])
    np.testing.assert_array_equal(H.value[0, 1], tables[1].value[6])


def test_embed_grad_of_repeated_row(rng):
    tables = list(init_embeddings([5, 7], 4, rng).values())
    nx.backward(nx.sum(embed_lookup(np.array([[2, 0], [2, 1]]), tables)))
    np.testing.assert_array_equal(tables[0].grad[2], 2.0 * np.ones(4))
    np.testing.assert_array_equal(tables[0].grad[0], np.zeros(4))


def test_embed_out_of_range(rng):
    tables = list(init_embeddings([5], 4, rng).values())
    with pytest.raises(IndexError):
        embed_lookup(np.array([[5]]), tables)


def test_embedding_init_bound(rng):
    t = init_embeddings([100], 18, rng)["emb.0"].value
    assert np.abs(t).max() <= math.sqrt(6 / 118)
