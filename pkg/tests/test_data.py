import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatbotnet import data as dio
from gatbotnet.exceptions import ConfigError, DataError, DimensionError

CSV3 = """Flow ID,Src IP,Flow Duration,Tot Fwd Pkts,Label
a,10.0.0.1,1.5,3,Normal
b,10.0.0.2,2.5,4,http_flood
c,10.0.0.3,0.25,1,UDP Flood
"""


def test_load_three_rows(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text(CSV3)
    ds = dio.load_netflow_csv(p)
    assert ds.n_rows == 3
    assert ds.labels.tolist() == [0, 1, 4]
    assert ds.feature_names == ("Flow Duration", "Tot Fwd Pkts")
    np.testing.assert_array_equal(ds.features, [[1.5, 3], [2.5, 4], [0.25, 1]])
    assert ds.rows_in == 3 and ds.rows_dropped == 0


def test_inf_row_dropped(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text(CSV3.replace("2.5,4", "inf,4"))
    ds = dio.load_netflow_csv(p)
    assert ds.rows_dropped == 1
    assert ds.rows_in == ds.rows_kept + ds.rows_dropped
    assert ds.labels.tolist() == [0, 4]


def test_non_numeric_column_dropped(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("proto,x,Label\ntcp,1,Normal\nudp,2,TCP flood\n")
    ds = dio.load_netflow_csv(p)
    assert ds.feature_names == ("x",)


def test_load_errors(tmp_path):
    with pytest.raises(DataError):
        dio.load_netflow_csv(tmp_path / "missing.csv")
    p = tmp_path / "f.csv"
    p.write_text(CSV3)
    with pytest.raises(DataError, match="label column"):
        dio.load_netflow_csv(p, label_column="Class")
    p.write_text(CSV3.replace("UDP Flood", "Port scan"))
    with pytest.raises(DataError, match="Port scan"):
        dio.load_netflow_csv(p)


def test_label_map_round_trip():
    lm = dio.LabelMap()
    for i in range(len(lm)):
        assert lm.index(lm.name(i)) == i
    assert lm.names == ("Normal", "HTTP flood", "TCP flood", "Brute force", "UDP flood")


def test_reference_class_counts_and_proportions():
    counts = np.array(list(dio.REFERENCE_CLASS_COUNTS.values()))
    np.testing.assert_allclose(counts / counts.sum(), dio.REFERENCE_PROPORTIONS, atol=5e-6)
    ds = dio.FlowDataset(np.zeros((5, 1)), [0, 1, 2, 3, 4])
    assert set(dio.check_reference_class_counts(ds)) == set(dio.LABEL_NAMES)


# scaler ---------------------------------------------------------------------

def test_scaler_rules():
    train = np.array([[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]])
    sc = dio.fit_scaler(train)
    np.testing.assert_array_equal(dio.apply_scaler(sc, train), [[0, 0], [0.5, 0], [1, 0]])
    np.testing.assert_array_equal(sc.transform([[12.0, 9.0], [-3.0, 7.0]]), [[1, 0], [0, 0]])
    with pytest.raises(DimensionError):
        sc.transform(np.zeros((1, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_scaler_range(seed):
    rng = np.random.default_rng(seed)
    train, test = rng.normal(size=(20, 4)) * 5, rng.normal(size=(7, 4)) * 8
    sc = dio.fit_scaler(train)
    assert np.all(sc.data_max_ >= sc.data_min_)
    out = sc.transform(test)
    assert out.min() >= 0 and out.max() <= 1


# split ----------------------------------------------------------------------

def test_split_sizes_100():
    s = dio.split(100)
    assert (s.test_ids.size, s.val_ids.size, s.train_ids.size) == (20, 8, 72)


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 3000), st.integers(0, 1000))
def test_split_partition(n, seed):
    s = dio.split(n, dio.SplitSpec(seed=seed))
    ids = np.concatenate([s.train_ids, s.val_ids, s.test_ids])
    assert np.array_equal(np.sort(ids), np.arange(n))
    n_test = int(np.floor(0.2 * n + 0.5))
    assert s.test_ids.size == n_test
    assert s.val_ids.size == int(np.floor(0.1 * (n - n_test) + 0.5))


def test_split_deterministic_and_round_trip(tmp_path):
    a, b = dio.split(500, dio.SplitSpec(seed=4)), dio.split(500, dio.SplitSpec(seed=4))
    for k in ("train_ids", "val_ids", "test_ids"):
        assert np.array_equal(getattr(a, k), getattr(b, k))
    a.save(tmp_path / "s.json")
    c = dio.Split.load(tmp_path / "s.json")
    assert np.array_equal(c.test_ids, a.test_ids) and c.seed == 4
    assert not np.array_equal(dio.split(500, dio.SplitSpec(seed=5)).test_ids, a.test_ids)


def test_stratified_split_keeps_minorities():
    ds = dio.synth_blobs(1000, seed=1)
    s = dio.split(ds, dio.SplitSpec(stratify=True))
    per_class = np.bincount(ds.labels, minlength=5)
    expected = np.floor(per_class * 0.2 + 0.5).astype(int)
    assert np.bincount(ds.labels[s.test_ids], minlength=5).tolist() == expected.tolist()


def test_split_errors():
    with pytest.raises(DataError):
        dio.split(5)
    with pytest.raises(ConfigError):
        dio.SplitSpec(test_fraction=1.0)


# synthetic corpus -----------------------------------------------------------

def test_synth_class_counts():
    ds = dio.synth_blobs(10_000)
    assert list(ds.class_counts().values()) == [8087, 1713, 142, 38, 20]
    assert ds.features.shape == (10_000, 84)


def test_synth_deterministic():
    a, b = dio.synth_blobs(1000, seed=3), dio.synth_blobs(1000, seed=3)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)


def test_synth_zero_separation_is_uninformative():
    from sklearn.linear_model import LogisticRegression

    ds = dio.synth_blobs(4000, class_proportions=(0.6, 0.4, 0, 0, 0), dim=10, separation=0.0, seed=2)
    s = dio.split(ds)
    clf = LogisticRegression(max_iter=500).fit(ds.features[s.train_ids], ds.labels[s.train_ids])
    acc = clf.score(ds.features[s.test_ids], ds.labels[s.test_ids])
    majority = np.mean(ds.labels[s.test_ids] == 0)
    assert acc <= majority + 0.03


def test_synth_rejects_bad_proportions():
    with pytest.raises(ConfigError):
        dio.synth_blobs(1000, class_proportions=(0.5, 0.4, 0, 0, 0))


def test_csv_and_matrix_round_trips(tmp_path):
    ds = dio.synth_blobs(1000, dim=6, seed=8)
    ds.to_csv(tmp_path / "d.csv")
    back = dio.load_netflow_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    dio.save_matrix(tmp_path / "m.fmat", ds.features)
    np.testing.assert_array_equal(dio.load_matrix(tmp_path / "m.fmat"), ds.features)
    dio.write_reduced_csv(tmp_path / "r.csv", ds.features[:, :3], ds.labels)
    z, y = dio.read_reduced_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(z, ds.features[:, :3])
    np.testing.assert_array_equal(y, ds.labels)
