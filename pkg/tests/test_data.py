import json

import numpy as np
import pytest

from invpde.data import (DatasetFormatError, FieldDataset, Grid, NoiseSpec, SampleSpec, add_noise, downsample,
                         keyed_normals, load_dataset, sample_points, save_dataset)


def make_ds(n=16, nt=5, seed=0):
    rng = np.random.default_rng(seed)
    grid = Grid.square(n)
    times = 0.01 * np.arange(nt)
    return FieldDataset(grid, times, {"u": rng.standard_normal((nt, n, n)),
                                      "v": rng.standard_normal((nt, n, n))}, {"solver": "test"})


def test_round_trip_is_bitwise(tmp_path):
    ds = make_ds()
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.equals(ds)
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    assert meta["format_version"] == 1 and meta["vars"] == ["u", "v"]


def test_truncated_file_is_rejected(tmp_path):
    ds = make_ds()
    p = save_dataset(ds, tmp_path / "d")
    raw = (p / "u.f64").read_bytes()
    (p / "u.f64").write_bytes(raw[:-8])
    with pytest.raises(DatasetFormatError, match="bytes"):
        load_dataset(p)


def test_version_and_var_mismatch(tmp_path):
    p = save_dataset(make_ds(), tmp_path / "d")
    meta = json.loads((p / "meta.json").read_text())
    meta["format_version"] = 99
    (p / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(DatasetFormatError):
        load_dataset(p)
    meta["format_version"] = 1
    meta["vars"] = ["u"]
    (p / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(DatasetFormatError):
        load_dataset(p)


def test_nonfinite_rejected(tmp_path):
    ds = make_ds()
    ds.fields["u"][0, 0, 0] = np.nan
    p = save_dataset(ds, tmp_path / "d")
    with pytest.raises(DatasetFormatError):
        load_dataset(p)


def test_nonuniform_times_rejected():
    grid = Grid.square(8)
    with pytest.raises(ValueError):
        FieldDataset(grid, np.array([0.0, 0.1, 0.3]), {"u": np.zeros((3, 8, 8))})


def test_downsample_keeps_origin():
    ds = make_ds(16)
    d = downsample(ds, 4)
    assert d.grid.shape == (4, 4)
    np.testing.assert_array_equal(d.fields["u"], ds.fields["u"][:, ::4, ::4])
    np.testing.assert_allclose(d.grid.axes()[0], ds.grid.axes()[0][::4])
    with pytest.raises(ValueError):
        downsample(ds, 3)


def test_noise_statistics():
    n = 128
    grid = Grid.square(n)
    x, y = grid.mesh()
    u = np.sin(x) * np.cos(y)
    ds = FieldDataset(grid, np.array([0.0, 0.1]), {"u": np.stack([u, u])})
    noisy = add_noise(ds, NoiseSpec(0.5, 3))
    diff = noisy.fields["u"] - ds.fields["u"]
    ratio = diff.std() / ds.fields["u"].std()
    assert abs(ratio - 0.5) < 0.01
    assert add_noise(ds, NoiseSpec(0.0, 3)).equals(ds)


def test_noise_keyed_by_variable_and_seed():
    a = keyed_normals(7, "u", 100)
    np.testing.assert_array_equal(a, keyed_normals(7, "u", 100))
    assert not np.array_equal(a, keyed_normals(7, "v", 100))
    assert not np.array_equal(a, keyed_normals(8, "u", 100))
    # prefix property: entry i is independent of the total length
    np.testing.assert_array_equal(keyed_normals(7, "u", 10), a[:10])


def test_noise_independent_of_other_variables():
    ds = make_ds()
    only_u = FieldDataset(ds.grid, ds.times, {"u": ds.fields["u"]})
    np.testing.assert_array_equal(add_noise(ds, NoiseSpec(0.1, 1)).fields["u"],
                                  add_noise(only_u, NoiseSpec(0.1, 1)).fields["u"])


def test_sample_points():
    ds = make_ds(16, 20)
    tr = sample_points(ds, SampleSpec(5, n_spatial_points=30, seed=2, time_range=(3, 15)))
    assert tr.n == 150
    assert set(tr.time_index) <= set(range(3, 15)) and len(set(tr.time_index)) == 5
    # values match the grid
    k = 17
    t, s = tr.time_index[k], tr.spatial_index[k]
    assert tr.values["u"][k] == ds.fields["u"][t].ravel()[s]
    x, y = ds.grid.mesh()
    assert tr.coords[k, 1] == x.ravel()[s] and tr.coords[k, 2] == y.ravel()[s]
    assert tr.coords[k, 0] == ds.times[t]
    again = sample_points(ds, SampleSpec(5, n_spatial_points=30, seed=2, time_range=(3, 15)))
    np.testing.assert_array_equal(tr.coords, again.coords)
    with pytest.raises(ValueError):
        sample_points(ds, SampleSpec(50))
