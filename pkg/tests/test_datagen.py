import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edg import datagen as dg


def test_rotated_gaussian_first_domain_labels():
    n = dg.boundary_normal(1, 12.0)
    assert (np.array([1.0, 0.1]) @ n > 0) and not (np.array([1.0, -0.1]) @ n > 0)


def test_antipodal_domain_flips_labels():
    # 15 steps of 12 degrees is 180 degrees
    pts = np.random.default_rng(0).normal(size=(500, 2))
    y1 = (pts @ dg.boundary_normal(1, 12.0) > 0)
    y16 = (pts @ dg.boundary_normal(16, 12.0) > 0)
    assert np.all(y1 != y16)


def test_rotated_gaussian_balance_large_n():
    ds = dg.gen_rotated_gaussian(n_domains=5, n_per_domain=10000, seed=3)
    for d in ds.sources + ds.targets:
        assert 0.4 <= d.y.mean() <= 0.6


def test_rotated_gaussian_defaults_and_labels():
    ds = dg.gen_rotated_gaussian(seed=1)
    assert ds.n_source == 29 and ds.n_target == 1
    assert all(d.n == 125 for d in ds.sources + ds.targets)
    for d in ds.sources + ds.targets:
        np.testing.assert_array_equal(d.y, (d.x @ dg.boundary_normal(d.index, 12.0) > 0).astype(int))


@pytest.mark.parametrize("t", [1, 2, 7, 30])
def test_boundary_normals_rotate_by_delta(t):
    a, b = dg.boundary_normal(t, 12.0), dg.boundary_normal(t + 1, 12.0)
    np.testing.assert_allclose(a @ dg.rotation_matrix(12.0), b, atol=1e-12)
    assert abs(np.linalg.norm(a) - 1) <= 1e-12


def test_rotation_matrix_row_convention():
    # the row vector (1, 0) turns counterclockwise to (cos, sin)
    np.testing.assert_allclose(np.array([1.0, 0.0]) @ dg.rotation_matrix(90.0), [0.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("x, expected", [((0.0, 0.3), 1), ((0.0, -0.3), 0), ((math.pi / 2, 1.2), 1)])
def test_sine_label_examples(x, expected):
    assert dg.sine_label(np.array([x]))[0] == expected


def test_sine_boundary_continuity():
    eps = 1e-9
    for t in range(1, 11):
        edge = t * math.pi / 3
        for x2 in (-1.2, -0.4, 0.2, 1.1):
            left = dg.sine_label(np.array([[edge - eps, x2]]))[0]
            right = dg.sine_label(np.array([[edge + eps, x2]]))[0]
            assert left == right


def test_sine_strips_and_both_classes():
    ds = dg.gen_sine(seed=4)
    assert ds.n_source == 10 and ds.n_target == 1
    for d in ds.sources + ds.targets:
        lo, hi = (d.index - 1) * math.pi / 3, d.index * math.pi / 3
        assert lo <= d.x[:, 0].min() and d.x[:, 0].max() < hi
        assert np.abs(d.x[:, 1]).max() <= 1.5
        assert 0 < d.y.mean() < 1


def test_generators_are_deterministic():
    for gen in (dg.gen_rotated_gaussian, dg.gen_sine):
        a, b = gen(seed=7), gen(seed=7)
        for da, db in zip(a.sources + a.targets, b.sources + b.targets):
            assert da.x.tobytes() == db.x.tobytes() and da.y.tobytes() == db.y.tobytes()
        c = gen(seed=8)
        assert not np.array_equal(a.sources[0].x, c.sources[0].x)


def test_generator_rejects_bad_counts():
    with pytest.raises(ValueError):
        dg.gen_rotated_gaussian(n_domains=1)


def test_target_lookup():
    ds = dg.gen_sine(seed=0)
    assert ds.target(1).index == 11
    with pytest.raises(IndexError):
        ds.target(2)


# ---------------------------------------------------------------- images


def test_identity_rotation_is_exact():
    img = np.random.default_rng(1).random((28, 28))
    np.testing.assert_array_equal(dg.rotate_image(img, 0.0), img)


@pytest.mark.parametrize("deg", [15.0, 37.0, 90.0, 200.0])
def test_center_pixel_is_fixed(deg):
    img = np.zeros((29, 29))
    img[14, 14] = 1.0
    out = dg.rotate_image(img, deg)
    assert out[14, 14] == pytest.approx(1.0, abs=1e-12)
    assert np.unravel_index(np.argmax(out), out.shape) == (14, 14)


def test_rotate_90_moves_pixel_counterclockwise():
    img = np.zeros((5, 5))
    img[2, 4] = 1.0  # right of center
    out = dg.rotate_image(img, 90.0)
    assert out[0, 2] == pytest.approx(1.0, abs=1e-12)  # above center


def _digits(n, rng):
    # blurry blobs away from the corners, so rotation loses little mass
    imgs = np.zeros((n, 28, 28))
    yy, xx = np.mgrid[0:28, 0:28]
    for i in range(n):
        for _ in range(3):
            cy, cx = rng.uniform(9, 19, 2)
            imgs[i] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 6.0)
    return np.clip(imgs / imgs.max(axis=(1, 2), keepdims=True), 0, 1)


def test_rotation_round_trip_error():
    rng = np.random.default_rng(2)
    for img in _digits(10, rng):
        back = dg.rotate_image(dg.rotate_image(img, 15.0), -15.0)
        assert np.abs(back - img).mean() <= 0.02


def test_idx_round_trip_and_loader(tmp_path):
    rng = np.random.default_rng(3)
    imgs = (_digits(40, rng) * 255).astype(np.uint8)
    labels = rng.integers(0, 10, 40).astype(np.uint8)
    dg.write_idx(tmp_path / "img.idx", imgs)
    dg.write_idx(tmp_path / "lab.idx", labels)
    np.testing.assert_array_equal(dg.read_idx(tmp_path / "img.idx"), imgs)
    raw = (tmp_path / "img.idx").read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03"
    ds = dg.load_rotating_images(tmp_path / "img.idx", tmp_path / "lab.idx", n_domains=3, n_per_domain=10, seed=1)
    assert ds.n_source == 2 and ds.d_in == 784
    first = ds.sources[0]
    assert first.x.max() <= 1.0
    assert first.meta["angle_deg"] == 0.0 and ds.targets[0].meta["angle_deg"] == 30.0


def test_idx_rejects_bad_magic(tmp_path):
    (tmp_path / "bad.idx").write_bytes(b"\x00\x00\x09\x03" + b"\x00" * 12)
    with pytest.raises(ValueError):
        dg.read_idx(tmp_path / "bad.idx")


def test_loader_rejects_oversampling(tmp_path):
    dg.write_idx(tmp_path / "i.idx", np.zeros((4, 3, 3), dtype=np.uint8))
    dg.write_idx(tmp_path / "l.idx", np.zeros(4, dtype=np.uint8))
    with pytest.raises(ValueError):
        dg.load_rotating_images(tmp_path / "i.idx", tmp_path / "l.idx", n_domains=2, n_per_domain=5)


# ---------------------------------------------------------------- splits and files


def test_split_counts_and_partition():
    ds = dg.gen_rotated_gaussian(seed=0)
    tr, va = dg.split_train_val(ds, 0.8, seed=0)
    for dt, dv in zip(tr.sources, va.sources):
        assert dt.n == 100 and dv.n == 25
        rows_t, rows_v = set(dt.meta["rows"]), set(dv.meta["rows"])
        assert not rows_t & rows_v and rows_t | rows_v == set(range(125))
    assert tr.targets[0] is ds.targets[0] and va.targets[0] is ds.targets[0]


def test_split_is_deterministic():
    ds = dg.gen_sine(seed=0)
    a, b = dg.split_train_val(ds, 0.8, 5), dg.split_train_val(ds, 0.8, 5)
    assert a[0].sources[3].meta["rows"] == b[0].sources[3].meta["rows"]


def test_split_rejects_tiny_domain():
    ds = dg.EvolvingDataset([dg.DomainSamples(1, np.zeros((1, 2)), np.zeros(1, int))],
                            [dg.DomainSamples(2, np.zeros((3, 2)), np.zeros(3, int))])
    with pytest.raises(ValueError):
        dg.split_train_val(ds, 0.5)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 60), frac=st.floats(0.05, 0.95), seed=st.integers(0, 2**31))
def test_split_always_partitions(n, frac, seed):
    ds = dg.gen_sine(n_domains=3, n_per_domain=n, seed=1)
    tr, va = dg.split_train_val(ds, frac, seed)
    for d, dt, dv in zip(ds.sources, tr.sources, va.sources):
        assert dt.n >= 1 and dv.n >= 1 and dt.n + dv.n == d.n
        assert sorted(dt.meta["rows"] + dv.meta["rows"]) == list(range(d.n))


def test_edgdata_round_trip(tmp_path):
    ds = dg.gen_rotated_gaussian(n_domains=6, n_per_domain=20, seed=9, n_target=2)
    path = tmp_path / "d.edg"
    dg.save_dataset(ds, path)
    assert path.read_bytes()[:8] == b"EDGDATA1"
    back = dg.load_dataset(path)
    assert back.n_source == 4 and back.n_target == 2
    assert back.meta == ds.meta
    for a, b in zip(ds.sources + ds.targets, back.sources + back.targets):
        assert a.index == b.index
        assert a.x.tobytes() == b.x.tobytes()
        np.testing.assert_array_equal(a.y, b.y)


def test_edgdata_rejects_foreign_file(tmp_path):
    (tmp_path / "x").write_bytes(b"NOTADATA" + b"\x00" * 20)
    with pytest.raises(ValueError):
        dg.load_dataset(tmp_path / "x")
