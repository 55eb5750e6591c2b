import numpy as np
import pytest

from cmtboost.data import (AugmentationSpec, DataError, ImageRecord, SyntheticSpec, augment,
                           boundary_gradient_statistic, generate_synthetic, largest_remainder,
                           load_dataset, median_filter_3x3, preprocess, record_seed,
                           resize_bicubic, save_dataset, split_dataset, write_png)


def catmull_rom_1d(p0, p1, p2, p3, t):
    """Textbook Catmull-Rom spline segment between p1 and p2."""
    return 0.5 * (2 * p1 + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t ** 2
                  + (-p0 + 3 * p1 - 3 * p2 + p3) * t ** 3)


def resize_oracle(img, out_h, out_w):
    H, W = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sy = (i + 0.5) * H / out_h - 0.5
            sx = (j + 0.5) * W / out_w - 0.5
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            at = lambda r, c: img[min(max(r, 0), H - 1), min(max(c, 0), W - 1)]
            rows = [catmull_rom_1d(*(at(y0 + dy, x0 + dx) for dx in (-1, 0, 1, 2)), sx - x0)
                    for dy in (-1, 0, 1, 2)]
            out[i, j] = catmull_rom_1d(*rows, sy - y0)
    return np.clip(out, 0, 1)


def median_oracle(img):
    H, W = img.shape
    out = np.empty_like(img)
    for i in range(H):
        for j in range(W):
            vals = sorted(img[min(max(i + a, 0), H - 1), min(max(j + b, 0), W - 1)]
                          for a in (-1, 0, 1) for b in (-1, 0, 1))
            out[i, j] = vals[4]
    return out


# -- loading --------------------------------------------------------------

def _write_tree(root, n_benign, n_malignant):
    rng = np.random.default_rng(0)
    for name, n in (("benign", n_benign), ("malignant", n_malignant)):
        for i in range(n):
            write_png(root / name / f"img{i}.png", rng.random((1, 8, 10)))


def test_load_dataset_orders_and_labels(tmp_path):
    _write_tree(tmp_path, 3, 2)
    recs = load_dataset(tmp_path)
    assert [r.label for r in recs] == [0, 0, 0, 1, 1]
    assert [r.id for r in recs][:3] == ["benign/img0", "benign/img1", "benign/img2"]
    assert recs[0].pixels.shape == (1, 8, 10) and recs[0].pixels.dtype == np.float32
    assert 0 <= recs[0].pixels.min() and recs[0].pixels.max() <= 1


def test_load_dataset_errors(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        load_dataset(tmp_path / "missing")
    (tmp_path / "benign").mkdir()
    with pytest.raises(DataError, match="malignant"):
        load_dataset(tmp_path)
    (tmp_path / "malignant").mkdir()
    with pytest.raises(DataError, match="no images"):
        load_dataset(tmp_path)


def test_unreadable_image_strict_and_permissive(tmp_path):
    _write_tree(tmp_path, 1, 1)
    (tmp_path / "benign" / "broken.png").write_bytes(b"not a png")
    with pytest.raises(DataError, match="broken.png"):
        load_dataset(tmp_path)
    assert len(load_dataset(tmp_path, permissive=True)) == 2


def test_png_round_trip_quantizes_to_8_bit(tmp_path):
    recs = generate_synthetic(SyntheticSpec(count_per_class=2, size=16))
    save_dataset(recs, tmp_path)
    back = load_dataset(tmp_path)
    assert len(back) == 4
    np.testing.assert_allclose(back[0].pixels, recs[0].pixels, atol=0.5 / 255 + 1e-6)


# -- resize and median ----------------------------------------------------

def test_resize_same_size_is_identity(rng):
    img = rng.random((1, 7, 5)).astype(np.float32)
    out = resize_bicubic(img, 7, 5)
    assert np.max(np.abs(out - img)) <= 1e-6 and out is not img


def test_resize_ramp_matches_per_pixel_oracle():
    ramp = (np.arange(4)[None, :] + np.arange(4)[:, None]) / 6.0
    out = resize_bicubic(ramp[None].astype(np.float32), 8, 8)[0]
    np.testing.assert_allclose(out, resize_oracle(ramp, 8, 8), atol=1e-6)


def test_resize_random_downscale_matches_oracle(rng):
    img = rng.random((6, 9))
    np.testing.assert_allclose(resize_bicubic(img[None], 4, 5)[0], resize_oracle(img, 4, 5), atol=1e-6)


def test_resize_constant_image_stays_constant():
    out = resize_bicubic(np.full((1, 5, 5), 0.3, np.float32), 11, 3)
    np.testing.assert_allclose(out, 0.3, atol=1e-6)


def test_median_removes_impulse_and_is_idempotent():
    img = np.zeros((1, 5, 5), np.float32)
    img[0, 2, 2] = 1.0
    once = median_filter_3x3(img)
    assert once[0, 2, 2] == 0.0
    np.testing.assert_array_equal(median_filter_3x3(once), once)


def test_median_matches_sort_oracle(rng):
    img = rng.random((6, 7)).astype(np.float32)
    np.testing.assert_array_equal(median_filter_3x3(img[None])[0], median_oracle(img))


def test_preprocess_shapes(rng):
    img = rng.random((1, 20, 30)).astype(np.float32)
    assert preprocess(img, 16, 16).shape == (1, 16, 16)
    out = preprocess(img, 8, 8, channels=3)
    assert out.shape == (3, 8, 8) and np.array_equal(out[0], out[2])


# -- split ----------------------------------------------------------------

def test_largest_remainder_examples():
    assert largest_remainder(1076, (0.7, 0.1, 0.2)) == [753, 108, 215]
    assert largest_remainder(1044, (0.7, 0.1, 0.2)) == [731, 104, 209]
    assert largest_remainder(32, (0.7, 0.1, 0.2)) == [22, 3, 7]


def _fake(nb, nm):
    z = np.zeros((1, 2, 2), np.float32)
    return ([ImageRecord(f"b{i}", z, 0) for i in range(nb)]
            + [ImageRecord(f"m{i}", z, 1) for i in range(nm)])


def test_split_is_stratified_disjoint_and_exhaustive():
    recs = _fake(1076, 1044)
    s = split_dataset(recs, seed=3)
    count = lambda part, c: sum(r.label == c for r in part)
    assert [count(s.train, 0), count(s.validation, 0), count(s.test, 0)] == [753, 108, 215]
    assert [count(s.train, 1), count(s.validation, 1), count(s.test, 1)] == [731, 104, 209]
    ids = [r.id for part in (s.train, s.validation, s.test) for r in part]
    assert len(ids) == len(set(ids)) == len(recs)


def test_split_determinism_and_manifest():
    recs = _fake(10, 9)
    a, b = split_dataset(recs, seed=1), split_dataset(recs, seed=1)
    assert a.manifest_csv() == b.manifest_csv()
    assert a.manifest_csv().splitlines()[0] == "id,label,split"
    assert split_dataset(recs, seed=2).manifest_csv() != a.manifest_csv()


def test_split_errors():
    with pytest.raises(ValueError):
        split_dataset(_fake(3, 3), fractions=(0.5, 0.5, 0.5))
    with pytest.raises(DataError):
        split_dataset(_fake(3, 0))


# -- augmentation ---------------------------------------------------------

def test_identity_augmentation_returns_equal_copy(rng):
    rec = ImageRecord("x", rng.random((1, 6, 6)).astype(np.float32), 0)
    out = augment(rec, AugmentationSpec.identity(), 5)
    assert np.array_equal(out.pixels, rec.pixels) and out.pixels is not rec.pixels


def test_flip_only_is_exact_and_involutive(rng):
    rec = ImageRecord("x", rng.random((1, 5, 6)).astype(np.float32), 0)
    spec = AugmentationSpec(1.0, 0.0, (1.0, 1.0), (0.0, 0.0))
    once = augment(rec, spec, 0)
    np.testing.assert_allclose(once.pixels, rec.pixels[:, :, ::-1], atol=1e-6)
    np.testing.assert_allclose(augment(once, spec, 1).pixels, rec.pixels, atol=1e-6)
    vspec = AugmentationSpec(0.0, 1.0, (1.0, 1.0), (0.0, 0.0))
    np.testing.assert_allclose(augment(rec, vspec, 0).pixels, rec.pixels[:, ::-1], atol=1e-6)


def test_scale_grows_a_centered_square():
    img = np.zeros((1, 41, 41), np.float32)
    img[0, 15:26, 15:26] = 1.0          # 11-pixel square
    spec = AugmentationSpec(0.0, 0.0, (1.5, 1.5), (0.0, 0.0))
    out = augment(ImageRecord("s", img, 0), spec, 0).pixels[0]
    width = int((out[20] > 0.5).sum())
    assert abs(width - 16.5) <= 2


def test_augment_is_deterministic_per_seed(rng):
    rec = ImageRecord("x", rng.random((1, 8, 8)).astype(np.float32), 0)
    spec = AugmentationSpec()
    assert augment(rec, spec, 11).pixels.tobytes() == augment(rec, spec, 11).pixels.tobytes()
    assert record_seed(0, "a", 1) == record_seed(0, "a", 1) != record_seed(0, "a", 2)


# -- synthetic ------------------------------------------------------------

def test_synthetic_is_balanced_deterministic_and_in_range():
    spec = SyntheticSpec(count_per_class=4, size=32, seed=5)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert [r.label for r in a] == [0] * 4 + [1] * 4
    assert all(x.pixels.tobytes() == y.pixels.tobytes() for x, y in zip(a, b))
    assert all(r.pixels.shape == (1, 32, 32) and 0 <= r.pixels.min() and r.pixels.max() <= 1 for r in a)
    other = generate_synthetic(SyntheticSpec(count_per_class=4, size=32, seed=6))
    assert a[0].pixels.tobytes() != other[0].pixels.tobytes()


def test_malignant_boundaries_are_sharper_on_100_images():
    recs = generate_synthetic(SyntheticSpec(count_per_class=50, size=64, seed=0))
    stats = np.array([boundary_gradient_statistic(r.pixels) for r in recs])
    labels = np.array([r.label for r in recs])
    assert stats[labels == 1].mean() > stats[labels == 0].mean()
