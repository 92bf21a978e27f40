import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aeroop import data as D


def series(t=5, h=4, w=3, seed=0, georef=None):
    gen = np.random.default_rng(seed)
    stamps = 1_600_000_000 + 3600 * np.arange(t, dtype=np.int64)
    return D.GridSeries(stamps, gen.uniform(0, 5, size=(t, h, w)).astype(np.float32), georef)


def test_gsf_round_trip_bytes(tmp_path):
    s = series(georef=D.Georef(10.0, 70.0, 0.25, 0.5))
    p1, p2 = tmp_path / "a.gsf", tmp_path / "b.gsf"
    D.save_gsf(s, p1)
    back = D.load_gsf(p1)
    assert back.values.tobytes() == s.values.tobytes()
    assert np.array_equal(back.timestamps, s.timestamps)
    assert back.georef == s.georef
    D.save_gsf(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_gsf_layout(tmp_path):
    s = series(t=2, h=1, w=2)
    p = tmp_path / "x.gsf"
    D.save_gsf(s, p)
    buf = p.read_bytes()
    assert buf[:4] == b"GSF1"
    assert struct.unpack_from("<IQQQB", buf, 4) == (1, 2, 1, 2, 0)
    assert len(buf) == 33 + 8 * 2 + 4 * 4
    assert struct.unpack_from("<q", buf, 33)[0] == s.timestamps[0]
    assert np.frombuffer(buf, "<f4", offset=49).tobytes() == s.values.astype("<f4").tobytes()


def test_gsf_26_hours(tmp_path):
    p = tmp_path / "d.gsf"
    D.save_gsf(series(t=26), p)
    assert D.load_gsf(p).shape[0] == 26


def test_gsf_errors(tmp_path):
    p = tmp_path / "e.gsf"
    D.save_gsf(series(), p)
    good = p.read_bytes()
    p.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(D.GSFError, match="magic") as exc:
        D.load_gsf(p)
    assert exc.value.offset == 0
    p.write_bytes(good[:-3])
    with pytest.raises(D.GSFError, match="truncated"):
        D.load_gsf(p)
    p.write_bytes(good + b"\0")
    with pytest.raises(D.GSFError, match="trailing"):
        D.load_gsf(p)
    bad = bytearray(good)
    struct.pack_into("<q", bad, 33 + 8 * 2, 0)  # third timestamp goes backwards
    p.write_bytes(bytes(bad))
    with pytest.raises(D.GSFError, match="increasing") as exc:
        D.load_gsf(p)
    assert exc.value.offset == 33 + 8 * 2


def test_series_validation():
    with pytest.raises(ValueError):
        D.GridSeries(np.array([2, 1]), np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        D.GridSeries(np.array([1, 2]), np.full((2, 2, 2), np.nan))
    with pytest.warns(UserWarning, match="negative"):
        D.GridSeries(np.array([1, 2]), -np.ones((2, 2, 2)))


def test_point_csv(tmp_path):
    p = tmp_path / "p.csv"
    D.export_point_csv(p, [10, 20], [0.5, 1.25])
    assert p.read_text().splitlines()[0] == "timestamp,value"
    t, v = D.read_point_csv(p)
    assert t.tolist() == [10, 20] and v.tolist() == [0.5, 1.25]


# -- windows ----------------------------------------------------------------


def test_window_counts():
    assert len(D.make_windows(np.zeros((100, 2, 2)))) == 75
    assert len(D.make_windows(np.zeros((26, 2, 2)))) == 1
    w = D.make_windows(np.zeros((30, 2, 2)))[0]
    assert w.inputs.shape[0] == 10 and w.targets.shape[0] == 16
    assert len(D.make_windows(np.zeros((30, 2, 2)), stride=3)) == (30 - 26) // 3 + 1
    with pytest.raises(ValueError):
        D.make_windows(np.zeros((25, 2, 2)))


@given(st.integers(26, 60), st.integers(1, 5), st.integers(1, 12))
def test_windows_never_overlap(t, stride, k):
    values = np.arange(t, dtype=float)[:, None, None] * np.ones((1, 2, 2))
    for w in D.make_windows(values, 26, k, stride):
        assert w.length == 26
        assert w.inputs[-1, 0, 0] + 1 == w.targets[0, 0, 0]
        assert w.inputs[0, 0, 0] == w.start_index


def test_window_timestamps():
    s = series(t=30)
    ws = D.make_windows(s)
    assert ws[3].start_timestamp == s.timestamps[3]


# -- splits and normalization ----------------------------------------------


def test_split_deterministic_and_disjoint():
    ws = D.make_windows(np.random.default_rng(0).uniform(size=(35, 2, 2)))
    a = D.shuffle_split(ws, 3, 2, seed=9)
    b = D.shuffle_split(ws, 3, 2, seed=9)
    assert [w.start_index for w in a.train + a.val] == [w.start_index for w in b.train + b.val]
    starts = [w.start_index for w in a.train + a.val]
    assert len(set(starts)) == 5
    assert set(starts) <= {w.start_index for w in ws}
    with pytest.raises(ValueError):
        D.shuffle_split(ws, 8, 3, seed=0)


def test_normalizer():
    n = D.Normalizer(0.0, 2.0)
    assert n.apply(1.0) == 0.5
    x = np.random.default_rng(1).uniform(-3, 7, size=100)
    assert np.abs(n.invert(n.apply(x)) - x).max() < 1e-12
    assert n.apply(3.0) > 1  # no clipping
    with pytest.raises(ValueError):
        D.Normalizer(1.0, 1.0)


def test_normalizer_ignores_val():
    values = np.random.default_rng(2).uniform(0, 1, size=(40, 2, 2))
    ws = D.make_windows(values)
    split = D.shuffle_split(ws, 5, 5, seed=0)
    for w in split.val:
        w.targets[:] = 99.0
    norm = D.fit_normalizer(split.train)
    lo = min(min(w.inputs.min(), w.targets.min()) for w in split.train)
    hi = max(max(w.inputs.max(), w.targets.max()) for w in split.train)
    assert (norm.vmin, norm.vmax) == (lo, hi) and norm.vmax < 99


# -- georeference -----------------------------------------------------------


def test_grid_index_examples():
    g = D.Georef(8.0, 68.0, 0.2, 0.25)
    assert D.grid_index_of(g, 8.0, 68.0, (20, 30)) == (0, 0)
    assert D.grid_index_of(g, 8.0 + 3 * 0.2, 68.0 + 7 * 0.25, (20, 30)) == (3, 7)
    with pytest.raises(ValueError):
        D.grid_index_of(g, 0.0, 68.0, (20, 30))
    with pytest.raises(ValueError):
        D.grid_index_of(None, 8.0, 68.0, (20, 30))


@given(st.floats(8.0, 11.7), st.floats(68.0, 75.2))
def test_grid_index_is_nearest_cell(lat, lon):
    g = D.Georef(8.0, 68.0, 0.2, 0.25)
    r, c = D.grid_index_of(g, lat, lon, (20, 30))
    rows = 8.0 + 0.2 * np.arange(20)
    cols = 68.0 + 0.25 * np.arange(30)
    d = (rows[:, None] - lat) ** 2 / 0.04 + (cols[None, :] - lon) ** 2 / 0.0625
    best = d.min()
    assert d[r, c] <= best + 1e-9
