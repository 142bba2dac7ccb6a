import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hefedrnn import data
from hefedrnn.exceptions import DataError


def test_minmax_example():
    s, lo, hi = data.minmax([0, 5, 10])
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])
    assert (lo, hi) == (0.0, 10.0)
    np.testing.assert_array_equal(data.unscale(s, lo, hi), [0, 5, 10])
    with pytest.raises(DataError):
        data.minmax([3, 3, 3])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50).filter(lambda v: max(v) - min(v) > 1e-3))
def test_minmax_invertible(values):
    s, lo, hi = data.minmax(values)
    assert s.min() == 0.0 and s.max() == 1.0
    np.testing.assert_allclose(data.unscale(s, lo, hi), values, atol=1e-6 * (hi - lo))


def test_window_example():
    ws = data.window(np.arange(6.0), 3)
    assert len(ws) == 3
    np.testing.assert_array_equal(ws.inputs[0, :, 0], [0, 1, 2])
    np.testing.assert_array_equal(ws.targets[:, 0, 0], [3, 4, 5])
    ws2 = data.window(np.arange(6.0), 2, kappa=2)
    np.testing.assert_array_equal(ws2.targets[0, :, 0], [2, 3])
    with pytest.raises(DataError):
        data.window(np.arange(3.0), 3)


@given(st.integers(5, 60), st.integers(1, 4))
def test_window_count(n, T):
    ws = data.window(np.random.default_rng(n).random((n, 2)), T)
    assert len(ws) == n - T
    assert ws.inputs.shape == (n - T, T, 2) and ws.targets.shape == (n - T, 1, 1)


def test_window_drops_target_from_inputs():
    F = np.arange(20.0).reshape(10, 2)
    ws = data.window(F, 2, inputs="features")
    assert ws.inputs.shape[-1] == 1
    np.testing.assert_array_equal(ws.targets[0, 0], [F[2, 0]])


@settings(max_examples=25)
@given(st.integers(1, 7), st.integers(10, 80), st.integers(0, 100))
def test_even_shards_partition(N, n, seed):
    ws = data.window(np.arange(n + 1.0), 1)
    parts = data.shard(ws, N, "even", np.random.default_rng(seed))
    got = np.sort(np.concatenate([p.inputs[:, 0, 0] for p in parts]))
    np.testing.assert_array_equal(got, np.arange(n))
    sizes = [len(p) for p in parts]
    assert max(sizes) - min(sizes) <= 1


def test_half_shards():
    ws = data.window(np.arange(577.0), 1)
    parts = data.shard(ws, 4, "half", np.random.default_rng(0))
    assert len(parts[0]) == 288
    assert sum(len(p) for p in parts) == 576
    got = np.sort(np.concatenate([p.inputs[:, 0, 0] for p in parts]))
    np.testing.assert_array_equal(got, np.arange(576))


def test_file_shards_and_errors():
    files = [data.window(np.arange(k + 3.0), 2) for k in (2, 4, 6)]
    parts = data.shard(files, 2, "files")
    assert [len(p) for p in parts] == [3 + 5, 7]
    with pytest.raises(DataError):
        data.shard(files, 4, "files")
    with pytest.raises(DataError):
        data.shard(files[0], 2, "random")
    with pytest.raises(DataError):
        data.shard(files[0], 5, "even")


def test_metrics_examples():
    m = data.metrics([1.0, 2.0], [2.5, 0.5])
    assert m["mae"] == 1.5
    y = np.array([1.0, 2.0, 3.0])
    assert data.metrics(y, y)["r2"] == 1.0
    assert data.metrics(np.full(3, 2.0), y)["r2"] == 0.0
    with pytest.raises(DataError):
        data.metrics(y, np.ones(3))
    with pytest.raises(DataError):
        data.metrics(y, y[:2])
    onehot = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert data.metrics(np.array([[0.9, 0.1], [0.6, 0.4]]), onehot, "classification")["accuracy"] == 0.5


def test_synth_series():
    a = data.synth("sine", 200, noise=0.05, seed=3)
    b = data.synth("sine", 200, noise=0.05, seed=3)
    np.testing.assert_array_equal(a.values, b.values)
    clean = data.synth("sine", 200, period=50)
    np.testing.assert_allclose(clean.values[:150], clean.values[50:], atol=1e-12)
    ar = data.synth("ar1", 50, noise=1.0, coef=0.0, seed=1)
    raw = np.random.default_rng(1).standard_normal(50)
    np.testing.assert_allclose(ar.unscale(ar.values), raw, atol=1e-12)
    with pytest.raises(DataError):
        data.synth("walk")


def test_split_is_chronological():
    s = data.synth("sine", 100)
    head, tail = s.split(0.8)
    assert len(head) == 80 and len(tail) == 20
    np.testing.assert_array_equal(np.concatenate([head.values, tail.values]), s.values)
    with pytest.raises(ValueError):
        s.split(1.0)


def test_load_plain(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,value\n0,2\n1,4\n2,6\n")
    s = data.load_and_scale(p)
    np.testing.assert_array_equal(s.values, [0, 0.5, 1])
    assert s.unscale(0.5) == 4.0
    p.write_text("t,value\n0,2\n1,abc\n")
    with pytest.raises(DataError, match="row 3"):
        data.load_and_scale(p)
    with pytest.raises(DataError):
        data.load_and_scale(tmp_path / "missing.csv")
    with pytest.raises(DataError):
        data.load_and_scale(p, value_column="nope")


def test_load_hec_schema(tmp_path):
    p = tmp_path / "house.csv"
    p.write_text("time,kwh\n2020-01-01 01:00:00,3\n2020-01-01 00:00:00,1\n2021-06-15 23:00:00,2\n")
    s = data.load_and_scale(p, "hec")
    assert s.features.shape == (3, 6)
    np.testing.assert_array_equal(s.values, [0.0, 1.0, 0.5])
    assert s.features[2, 1] == 1.0 and s.features[0, 5] == 0.0 and s.features[2, 5] == 1.0


def test_load_stock_schema(tmp_path):
    p = tmp_path / "stock.csv"
    p.write_text("Date,Open,High,Low,Close\n2020-01-02,2,4,1,3\n2020-01-01,1,2,1,2\n")
    s = data.load_and_scale(p, "stock")
    assert s.features.shape == (2, 5)
    np.testing.assert_allclose(s.features[0], [(0 + 1 + 0 + 1) / 12, 0, 1 / 3, 0, 1 / 3])


def test_load_bcw(tmp_path):
    rng = np.random.default_rng(0)
    lines = []
    for i in range(20):
        attrs = [str(v) for v in rng.integers(1, 11, 9)]
        if i == 3:
            attrs[5] = "?"
        lines.append(",".join([str(1000 + i), *attrs, "4" if i % 2 else "2"]))
    p = tmp_path / "bcw.data"
    p.write_text("\n".join(lines) + "\n")
    tr, te = data.load_bcw(p, n_train=15)
    assert len(tr) == 15 and len(te) == 5
    assert tr.inputs.shape == (15, 9, 1) and tr.targets.shape == (15, 1, 2)
    assert np.all(np.isfinite(tr.inputs)) and np.all(np.isfinite(te.inputs))
    np.testing.assert_array_equal(tr.targets.sum(axis=-1), 1.0)
    p.write_text("1,2,3\n")
    with pytest.raises(DataError):
        data.load_bcw(p)
