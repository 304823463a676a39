import math

import numpy as np
import pytest
from PIL import Image
from scipy.stats import chisquare

from raindropsep.core import ImageTensor, residual
from raindropsep.data import (
    DatasetError,
    SyntheticSpec,
    build_manifest,
    droplet_mask,
    load_image,
    random_crop,
    random_hflip,
    save_image,
    synthesize,
    write_synthetic,
)


def write_png(path, value=128, size=(8, 8)):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.full((*size, 3), value, dtype=np.uint8)).save(path)


def test_empty_directory(tmp_path):
    with pytest.raises(DatasetError, match="no images found"):
        build_manifest(tmp_path, "flat")


def test_flat_unpaired(tmp_path):
    for i in range(5):
        write_png(tmp_path / "rain" / f"{i}.png")
        write_png(tmp_path / "clean" / f"c{4 - i}.png")
    m = build_manifest(tmp_path, "flat", "unpaired")
    assert len(m.rainy_paths) == 5 and len(m.clean_paths) == 5
    assert [p.name for p in m.clean_paths] == sorted(p.name for p in m.clean_paths)
    assert build_manifest(tmp_path, "flat", "unpaired") == m


def test_rainds_paired_orphan(tmp_path):
    for name in ("a", "b", "c"):
        write_png(tmp_path / "raindrop" / f"{name}.png")
    for name in ("a", "c"):
        write_png(tmp_path / "gt" / f"{name}.png")
    with pytest.raises(DatasetError, match=r"b\.png"):
        build_manifest(tmp_path, "rainds", "paired")


def test_nus_paired_suffix_rule(tmp_path):
    for i in (2, 0, 1):
        write_png(tmp_path / "data" / f"{i}_rain.png", value=10 * i)
        write_png(tmp_path / "gt" / f"{i}_clean.png", value=10 * i)
    m = build_manifest(tmp_path, "nus", "paired")
    assert [p.name for p in m.rainy_paths] == ["0_rain.png", "1_rain.png", "2_rain.png"]
    assert [p.name for p in m.clean_paths] == ["0_clean.png", "1_clean.png", "2_clean.png"]


def test_orphan_clean_file(tmp_path):
    write_png(tmp_path / "data" / "0_rain.png")
    write_png(tmp_path / "gt" / "0_clean.png")
    write_png(tmp_path / "gt" / "7_clean.png")
    with pytest.raises(DatasetError, match="7_clean"):
        build_manifest(tmp_path, "nus", "paired")


def test_undecodable_file(tmp_path):
    write_png(tmp_path / "rain" / "a.png")
    (tmp_path / "clean").mkdir()
    (tmp_path / "clean" / "b.png").write_bytes(b"not an image")
    with pytest.raises(DatasetError, match="cannot decode"):
        build_manifest(tmp_path, "flat")


def test_image_round_trip(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, (3, 5, 7)) / 255.0
    save_image(arr, tmp_path / "x.png")
    back = load_image(tmp_path / "x.png")
    assert back.shape == (3, 5, 7) and back.dtype == np.float32
    np.testing.assert_allclose(back, arr, atol=1e-6)
    assert load_image(tmp_path / "x.png", channels=1).shape == (1, 5, 7)


def test_crop_exact_size_is_identity():
    img = np.random.default_rng(0).random((3, 16, 16))
    out = random_crop(img, 16, np.random.default_rng(1))
    np.testing.assert_array_equal(out, img)
    tensor = random_crop(ImageTensor(img), 16, np.random.default_rng(1))
    assert isinstance(tensor, ImageTensor)


def test_crop_reproducible_and_paired():
    img = np.random.default_rng(0).random((3, 40, 50))
    other = img * 0.5
    a = random_crop(img, 16, np.random.default_rng(7))
    b = random_crop(img, 16, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    ca, cb = random_crop(img, 16, np.random.default_rng(3), other)
    np.testing.assert_array_equal(ca * 0.5, cb)


def test_crop_too_small():
    with pytest.raises(ValueError, match="smaller than crop"):
        random_crop(np.zeros((3, 20, 40)), 32, np.random.default_rng(0))


def test_crop_offsets_uniform():
    # encode the row/column offset into pixel values and read them back
    yy, xx = np.mgrid[0:300, 0:300]
    img = np.stack([yy, xx]).astype(np.float64)
    rng = np.random.default_rng(2024)
    tops, lefts = [], []
    for _ in range(10_000):
        c = random_crop(img, 256, rng)
        tops.append(int(c[0, 0, 0]))
        lefts.append(int(c[1, 0, 0]))
    tops, lefts = np.array(tops), np.array(lefts)
    assert tops.min() == 0 and tops.max() == 44
    for offsets in (tops, lefts):
        counts = np.bincount(offsets, minlength=45)
        assert chisquare(counts).pvalue > 1e-3
    joint = np.bincount(tops * 45 + lefts, minlength=45 * 45)
    assert chisquare(joint).pvalue > 1e-3


def test_hflip_paired():
    a = np.arange(12.0).reshape(1, 3, 4)
    flips = [random_hflip(np.random.default_rng(s), a, a * 2) for s in range(8)]
    for x, y in flips:
        np.testing.assert_array_equal(x * 2, y)
    assert any(not np.array_equal(x, a) for x, _ in flips)


def test_no_droplets_means_clean_rainy():
    samples = synthesize(SyntheticSpec(count=3, size=32, droplets=(0, 0), seed=1))
    for rainy, triple in samples:
        assert not triple.mask.data.any()
        np.testing.assert_array_equal(rainy.data, triple.background.data)


def test_samples_obey_blend_law():
    for rainy, triple in synthesize(SyntheticSpec(count=5, size=32, seed=2)):
        assert residual(rainy, triple) == 0.0


def lattice_count_in_disk(cy, cx, r, size):
    count = 0
    for y in range(size):
        for x in range(size):
            if (y - cy) ** 2 + (x - cx) ** 2 <= r * r:
                count += 1
    return count


@pytest.mark.parametrize("centre", [(16.0, 16.0), (15.3, 17.8), (20.5, 11.25)])
def test_hard_droplet_area(centre):
    r = 5.0
    mask = droplet_mask(32, [centre], [(r, r)], feather=0)
    area = int(mask.sum())
    assert set(np.unique(mask)) <= {0.0, 1.0}
    assert area == lattice_count_in_disk(*centre, r, 32)
    # pixels whose centres lie within sqrt(2)/2 of the circle bound the error
    slack = 2 * math.sqrt(2) * math.pi * r
    assert abs(area - math.pi * r * r) <= slack


def test_single_hard_droplet_via_synthesize():
    spec = SyntheticSpec(count=4, size=64, droplets=(1, 1), radius=(5, 5), aspect=(1, 1),
                         feather=0, seed=3)
    for _, triple in synthesize(spec):
        area = triple.mask.data.sum()
        assert 0 < area <= math.pi * 25 + 2 * math.sqrt(2) * math.pi * 5


def test_default_masks_are_sparse():
    samples = synthesize(SyntheticSpec(count=20, seed=4))
    assert np.mean([t.mask.data.mean() for _, t in samples]) < 0.5


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(radius=(0.5, 2))
    with pytest.raises(ValueError):
        SyntheticSpec(feather=-1)
    with pytest.raises(ValueError):
        SyntheticSpec(count=0)


def test_write_synthetic(tmp_path):
    samples = synthesize(SyntheticSpec(count=3, size=32, seed=5))
    manifest = write_synthetic(samples, tmp_path)
    lines = manifest.read_text().strip().split("\n")
    assert lines[0] == "rainy\tbackground\traindrop\tmask"
    assert len(lines) == 4
    m = build_manifest(tmp_path, "flat", "paired")
    assert len(m.rainy_paths) == 3
    mask = np.asarray(Image.open(tmp_path / "mask" / "0000.png"))
    assert mask.ndim == 2 and mask.dtype == np.uint8
    rainy = load_image(tmp_path / "rain" / "0001.png")
    np.testing.assert_allclose(rainy, samples[1][0].data, atol=0.5 / 255 + 1e-6)
