import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparse_seg import data
from sparse_seg.data import (Manifest, ManifestError, PatchSpec, apply_transform, load_manifest,
                             patchify, patchify_arrays, sparsity_table, split)


def _write_pair(root, name, image, mask):
    data.write_image(root / f"{name}.png", image)
    data.write_mask(root / f"{name}_mask.png", mask)
    return f"{name}.png", f"{name}_mask.png"


@pytest.fixture
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for k in range(6):
        h, w = 20 + 2 * k, 24
        rows.append(_write_pair(tmp_path, f"img{k}", rng.integers(0, 256, (3, h, w), np.uint8),
                                rng.random((h, w)) < 0.05))
    (tmp_path / "all.csv").write_text("image,mask\n" + "".join(f"{a},{b}\n" for a, b in rows))
    return tmp_path


def _split_counts(total, n):
    q, r = divmod(total, n)
    return [q + (i < r) for i in range(n)]


def test_damage_table_fixture():
    rows = sparsity_table(_split_counts(725_251, 208), _split_counts(64_408_870, 208))
    bg, roi, tot = rows
    assert (bg.total, roi.total, tot.total) == (63_683_619, 725_251, 64_408_870)
    assert f"{roi.percentage:.1f}" == "1.1"
    assert f"{bg.percentage:.1f}" == "98.9"
    assert [round(r.mean_per_image) for r in rows] == [306_171, 3_487, 309_658]
    text = data.format_sparsity(rows)
    assert "725,251" in text and "1.1%" in text


def test_two_image_fixture_matches_exhaustive_counts(tmp_path):
    a = np.zeros((10, 10), np.uint8)
    a[2:4, 3:5] = 1
    a[7, 7] = 1
    b = np.zeros((10, 10), np.uint8)
    b[0, 0] = b[9, 9] = 1
    rows = []
    for name, m in (("a", a), ("b", b)):
        rows.append(_write_pair(tmp_path, name, np.zeros((1, 10, 10), np.uint8), m))
    m = Manifest(tmp_path, rows)
    bg, roi, tot = data.sparsity_stats(m)
    exhaustive = sum(int(v) for mask in (a, b) for v in mask.ravel())
    assert roi.total == exhaustive == 7
    assert (bg.total, tot.total) == (193, 200)
    assert (bg.mean_per_image, roi.mean_per_image) == (96.5, 3.5)
    assert (bg.percentage, roi.percentage) == pytest.approx((96.5, 3.5))


def test_mask_decoding_any_positive_is_damage(tmp_path):
    from PIL import Image
    Image.fromarray(np.array([[0, 1, 128, 255]], np.uint8)).save(tmp_path / "m.png")
    assert data.read_mask(tmp_path / "m.png").tolist() == [[0, 1, 1, 1]]


class TestManifest:
    def test_load_and_relative_paths(self, dataset):
        m = load_manifest(dataset / "all.csv")
        assert len(m) == 6
        image, mask = m.load(2)
        assert image.shape == (3, 24, 24) and mask.shape == (24, 24)

    def test_missing_file_names_row(self, dataset):
        (dataset / "img3_mask.png").unlink()
        with pytest.raises(ManifestError, match="row 4: missing file"):
            load_manifest(dataset / "all.csv")

    def test_size_mismatch_names_row(self, dataset):
        data.write_mask(dataset / "img1_mask.png", np.zeros((5, 5)))
        with pytest.raises(ManifestError, match="row 2: image 24x22 and mask 5x5 differ"):
            load_manifest(dataset / "all.csv")

    def test_undecodable(self, dataset):
        (dataset / "img0.png").write_bytes(b"not a png")
        with pytest.raises(ManifestError, match="row 1: cannot decode"):
            load_manifest(dataset / "all.csv")

    def test_empty_and_bad_header(self, tmp_path):
        (tmp_path / "e.csv").write_text("image,mask\n")
        with pytest.raises(ManifestError, match="empty manifest"):
            load_manifest(tmp_path / "e.csv")
        (tmp_path / "h.csv").write_text("a,b\nx,y\n")
        with pytest.raises(ManifestError, match="header"):
            load_manifest(tmp_path / "h.csv")
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(tmp_path / "nope.csv")

    def test_save_round_trip_from_other_directory(self, dataset, tmp_path_factory):
        m = load_manifest(dataset / "all.csv")
        out = tmp_path_factory.mktemp("elsewhere") / "copy.csv"
        m.subset([4, 1]).save(out)
        back = load_manifest(out)
        assert np.array_equal(back.load(0)[0], m.load(4)[0])
        assert np.array_equal(back.load(1)[1], m.load(1)[1])


def test_split_sizes():
    m208 = Manifest("r", [(f"{i}", f"{i}m") for i in range(208)])
    tr, te = split(m208, 0.05, seed=0)
    assert (len(tr), len(te)) == (198, 10)
    tr, te = split(Manifest("r", [("a", "am"), ("b", "bm")]), 0.05)
    assert (len(tr), len(te)) == (1, 1)
    with pytest.raises(ManifestError):
        split(Manifest("r", [("a", "am")]))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 300), st.floats(0.01, 0.99), st.integers(0, 2 ** 31))
def test_split_partitions(n, fraction, seed):
    m = Manifest("r", [(f"{i}", f"{i}m") for i in range(n)])
    tr, te = split(m, fraction, seed)
    a, b = set(tr.pairs), set(te.pairs)
    assert not a & b and a | b == set(m.pairs)
    assert len(te) == min(n - 1, max(1, int(np.floor(n * fraction + 0.5))))
    assert split(m, fraction, seed) == (tr, te)


def _images(rng, n=3):
    imgs = [rng.integers(0, 256, (3, 30 + 3 * k, 40), np.uint8) for k in range(n)]
    masks = [(rng.random(im.shape[1:]) < 0.1).astype(np.uint8) for im in imgs]
    return imgs, masks


def test_patch_count_and_shape():
    imgs, masks = _images(np.random.default_rng(0))
    ps = patchify_arrays(imgs, masks, PatchSpec(crop_size=16, patches_per_image=5))
    assert len(ps) == 15
    assert ps.images.shape == (15, 3, 16, 16) and ps.masks.shape == (15, 16, 16)
    assert [(t.image_index, t.patch_index) for t in ps.transforms] == \
        [(i, j) for i in range(3) for j in range(5)]


def test_transform_consistency_and_roi_preservation():
    imgs, masks = _images(np.random.default_rng(1))
    spec = PatchSpec(crop_size=16, patches_per_image=12)
    ps = patchify_arrays(imgs, masks, spec)
    for k, t in enumerate(ps.transforms):
        assert np.array_equal(apply_transform(masks[t.image_index], t, 16), ps.masks[k])
        assert np.array_equal(apply_transform(imgs[t.image_index], t, 16), ps.images[k])
        crop = masks[t.image_index][t.top:t.top + 16, t.left:t.left + 16]
        assert ps.masks[k].sum() == crop.sum()
    assert {t.rotation for t in ps.transforms} <= set(spec.rotations)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 31))
def test_four_quarter_turns_is_identity(h, w, seed):
    x = np.random.default_rng(seed).integers(0, 256, (2, h, w), np.uint8)
    t = data.PatchTransform(0, 0, 0, 0, 90, False)
    s = min(h, w)
    y = x[..., :s, :s].copy()
    for _ in range(4):
        y = apply_transform(y, t, s)
    assert np.array_equal(y, x[..., :s, :s])


def test_patchify_deterministic_and_seed_sensitive():
    imgs, masks = _images(np.random.default_rng(2))
    a = patchify_arrays(imgs, masks, PatchSpec(crop_size=16, patches_per_image=4, seed=5))
    b = patchify_arrays(imgs, masks, PatchSpec(crop_size=16, patches_per_image=4, seed=5))
    c = patchify_arrays(imgs, masks, PatchSpec(crop_size=16, patches_per_image=4, seed=6))
    assert np.array_equal(a.images, b.images) and a.transforms == b.transforms
    assert a.transforms != c.transforms


def test_patch_of_image_independent_of_other_images():
    imgs, masks = _images(np.random.default_rng(3))
    spec = PatchSpec(crop_size=16, patches_per_image=3)
    full = patchify_arrays(imgs, masks, spec)
    first = patchify_arrays(imgs[:1], masks[:1], spec)
    assert full.transforms[:3] == first.transforms


def test_small_images_are_reflect_padded():
    img = np.arange(2 * 5 * 3, dtype=np.uint8).reshape(2, 5, 3)
    ps = patchify_arrays([img], [np.ones((5, 3), np.uint8)],
                         PatchSpec(crop_size=8, patches_per_image=2))
    assert ps.images.shape == (2, 2, 8, 8)
    assert ps.masks.all()
    padded = data.pad_to(img, 8, 8)
    assert np.array_equal(padded[:, :5, :3], img)
    assert np.array_equal(padded[:, 5, :3], img[:, 3])


def test_min_roi_rejection_sampling():
    rng = np.random.default_rng(4)
    mask = np.zeros((64, 64), np.uint8)
    mask[50:60, 50:60] = 1
    spec = PatchSpec(crop_size=16, patches_per_image=10, min_roi_pixels=1)
    ps = patchify_arrays([rng.integers(0, 256, (1, 64, 64), np.uint8)], [mask], spec)
    assert (ps.masks.reshape(10, -1).sum(1) >= 1).sum() >= 8


def test_indivisible_crop_warns(caplog):
    imgs, masks = _images(np.random.default_rng(5), n=1)
    patchify_arrays(imgs, masks, PatchSpec(crop_size=12, patches_per_image=1), depth=3)
    assert "not divisible" in caplog.text


def test_saved_patches_reload_bitwise(dataset, tmp_path_factory):
    m = load_manifest(dataset / "all.csv")
    ps = patchify(m, PatchSpec(crop_size=16, patches_per_image=2))
    out = tmp_path_factory.mktemp("patches")
    data.save_patches(ps, out)
    images, masks = data.load_patches(out)
    assert np.array_equal(images, ps.images) and np.array_equal(masks, ps.masks)
    assert (out / "patch_000001_img.png").exists()


@pytest.mark.parametrize("bad", [dict(crop_size=0), dict(patches_per_image=0),
                                 dict(rotations=(45,)), dict(rotations=())])
def test_patch_spec_validation(bad):
    with pytest.raises(ValueError):
        PatchSpec(**bad)
