import hashlib

import numpy as np
import pytest
from PIL import Image

from gait import dataset as ds
from gait import gradient_adjustment as ga
from gait.autodiff import Tensor
from gait.errors import ConfigError, DatasetError

# measured on seed 0, 100 images per domain: T 1.420, S 0.411 (ratio 3.45)
SOBEL_RATIO_FLOOR = 3.0
# measured over seeds 0-4: mean mask coverage 0.72-0.74 (S) and 0.69-0.70 (T)
MASK_MEAN_FLOOR = 0.6


def _mean_sobel(records):
    r = ga.sobel_response(Tensor(ds.stack(records)))
    return float(np.mean(np.abs(r.horizontal.data)) + np.mean(np.abs(r.vertical.data)))


@pytest.fixture(scope="module")
def hundred():
    return ds.render(ds.DatasetSpec(n_images=100, seed=0))


def test_source_background_exactly_constant(hundred):
    src, _ = hundred
    for r in src:
        bg = r.pixels[0][ds.background_mask(r)]
        # every background pixel equals the drawn level (std would add rounding noise)
        assert bg.size and np.all(bg == r.background)


def test_source_background_range(hundred):
    spec = ds.DatasetSpec()
    assert all(spec.b_lo <= r.background <= spec.b_hi for r in hundred[0])


def test_target_background_statistics(hundred):
    _, tgt = hundred
    bg = np.concatenate([r.pixels[0][ds.background_mask(r)] for r in tgt])
    assert abs(bg.mean() - 0.85) < 0.01
    assert abs(bg.std() - 0.05) < 0.01


def test_pixels_in_range(hundred):
    for r in hundred[0] + hundred[1]:
        assert r.pixels.shape == (1, 32, 32) and np.all(np.abs(r.pixels) <= 1)


def test_target_edges_stronger_than_source(hundred):
    src, tgt = hundred
    assert _mean_sobel(tgt) > SOBEL_RATIO_FLOOR * _mean_sobel(src)


def test_target_outlines_stronger_than_target_background(hundred):
    _, tgt = hundred
    r = ga.sobel_response(Tensor(ds.stack(tgt)))
    mag = np.abs(r.horizontal.data) + np.abs(r.vertical.data)
    masks = np.stack([ds.background_mask(t) for t in tgt])[:, None]
    assert mag[~masks].mean() > mag[masks].mean()


def _digest(folder):
    h = hashlib.sha256()
    for p in sorted(folder.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(folder).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_generate_is_byte_deterministic(tmp_path):
    spec = ds.DatasetSpec(n_images=5, seed=7)
    assert ds.generate(spec, tmp_path / "a") == {"S": 5, "T": 5}
    ds.generate(spec, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert len(list((tmp_path / "a" / "S").glob("*.png"))) == 5
    assert len((tmp_path / "a" / "manifest.jsonl").read_text().splitlines()) == 10


def test_roundtrip_quantization(tmp_path):
    spec = ds.DatasetSpec(n_images=4, seed=2)
    ds.generate(spec, tmp_path)
    src, tgt = ds.render(spec)
    for domain, orig in (("S", src), ("T", tgt)):
        loaded = ds.load_folder(tmp_path / domain, 32)
        assert [r.id for r in loaded] == [r.id for r in orig]
        err = np.max(np.abs(ds.stack(loaded) - ds.stack(orig)))
        assert err <= 1 / 127.5
        assert loaded[0].ellipses == orig[0].ellipses and loaded[0].domain == domain


def test_load_order_sorted_and_stable(tmp_path):
    for name in ("c.png", "a.png", "b.png"):
        ds.save_png(np.zeros((1, 8, 8)), tmp_path / name)
    ids = [r.id for r in ds.load_folder(tmp_path)]
    assert ids == ["a", "b", "c"] == [r.id for r in ds.load_folder(tmp_path)]


def test_load_empty_folder(tmp_path):
    with pytest.raises(DatasetError, match="empty"):
        ds.load_folder(tmp_path)


def test_load_undecodable_names_file(tmp_path):
    (tmp_path / "broken.png").write_bytes(b"not a png")
    with pytest.raises(DatasetError, match="broken.png"):
        ds.load_folder(tmp_path)


def test_load_size_mismatch_rejected(tmp_path):
    ds.save_png(np.zeros((1, 16, 16)), tmp_path / "x.png")
    with pytest.raises(DatasetError, match="resiz"):
        ds.load_folder(tmp_path, 32)


def test_load_pixel_mapping(tmp_path):
    Image.fromarray(np.array([[0, 255]], dtype=np.uint8)).save(tmp_path / "m.png")
    assert ds.load_folder(tmp_path)[0].pixels.tolist() == [[[-1.0, 1.0]]]


def test_mask_false_at_ellipse_centers(hundred):
    for r in hundred[0] + hundred[1]:
        m = ds.background_mask(r)
        for cx, cy, *_ in r.ellipses:
            assert not m[int(cy), int(cx)]


def test_mask_coverage(hundred):
    for records in hundred:
        cover = [ds.background_mask(r).mean() for r in records]
        assert np.mean(cover) > MASK_MEAN_FLOOR
        assert min(cover) > 0.4


def test_mask_and_dilated_shapes_cover_image(hundred):
    from scipy import ndimage
    for r in hundred[0][:20]:
        grown = ndimage.binary_dilation(ds.shape_footprint(r), structure=ds._disk(ds.MASK_MARGIN))
        assert np.all(ds.background_mask(r) | grown)
        assert not np.any(ds.background_mask(r) & ds.shape_footprint(r))


def test_mask_needs_geometry():
    with pytest.raises(DatasetError, match="geometry"):
        ds.background_mask(ds.ImageRecord("x", np.zeros((1, 8, 8))))


def test_spec_validation():
    with pytest.raises(ConfigError):
        ds.render(ds.DatasetSpec(b_lo=0.5, b_hi=0.1))
    with pytest.raises(ConfigError):
        ds.render(ds.DatasetSpec(n_images=0))
