import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgml.data import SceneSpec, generate, load_image_dir, read_pnm, save_image_dir, split, write_pnm
from mgml.errors import ConfigError, ParseError


def test_counts_and_balance():
    ds = generate(SceneSpec(), 50)
    assert len(ds) == 400
    assert np.bincount(ds.labels).tolist() == [50] * 8
    assert ds.images.shape == (400, 3, 64, 64)


def test_confusable_pairs_are_consecutive_classes():
    assert SceneSpec().confusable_pairs() == [(0, 1), (2, 3), (4, 5), (6, 7)]


def test_swapped_pairs_have_equal_global_means():
    ds = generate(SceneSpec(), 3)
    means = ds.images.mean(axis=(1, 2, 3))
    for a, b in SceneSpec().confusable_pairs():
        ma, mb = means[ds.labels == a], means[ds.labels == b]
        assert np.all(np.abs(ma[:, None] - mb[None, :]) < 1e-9)
        # ...yet the images themselves differ
        assert not np.allclose(ds.images[ds.labels == a][0], ds.images[ds.labels == b][0])


def test_global_mean_cannot_separate_confusable_pairs():
    """A threshold on per-image mean intensity is the best presence-only classifier; it stays near chance."""
    ds = generate(SceneSpec(noise_std=0.15, jitter=6, seed=1), 200)
    tr, te = split(ds, 0.5, 1)
    f_tr = tr.images.mean(axis=(1, 2, 3))
    f_te = te.images.mean(axis=(1, 2, 3))
    for a, b in SceneSpec().confusable_pairs():
        xa, xb = f_tr[tr.labels == a], f_tr[tr.labels == b]
        # nearest class mean, fitted on train
        ca, cb = xa.mean(), xb.mean()
        sel = (te.labels == a) | (te.labels == b)
        pred = np.where(np.abs(f_te[sel] - ca) <= np.abs(f_te[sel] - cb), a, b)
        assert (pred == te.labels[sel]).mean() <= 0.60


def test_generation_is_deterministic():
    spec = SceneSpec(noise_std=0.1, jitter=3, seed=4)
    assert generate(spec, 5).images.tobytes() == generate(spec, 5).images.tobytes()
    assert generate(spec, 5).images.tobytes() != generate(SceneSpec(noise_std=0.1, jitter=3, seed=5), 5).images.tobytes()


def test_motif_too_large_is_config_error():
    with pytest.raises(ConfigError):
        SceneSpec(image_size=16, motif_size=12)


def test_split_half():
    tr, te = split(generate(SceneSpec(), 50), 0.5, 0)
    assert len(tr) == len(te) == 200
    assert np.bincount(tr.labels).tolist() == [25] * 8
    assert np.bincount(te.labels).tolist() == [25] * 8


def test_split_fifth_of_hundred():
    tr, te = split(generate(SceneSpec(num_classes=2), 100), 0.2, 0)
    assert np.bincount(tr.labels).tolist() == [20, 20]
    assert np.bincount(te.labels).tolist() == [80, 80]


def test_split_is_deterministic_and_disjoint():
    ds = generate(SceneSpec(noise_std=0.1, seed=2), 10)
    a_tr, a_te = split(ds, 0.5, 7)
    b_tr, _ = split(ds, 0.5, 7)
    assert a_tr.images.tobytes() == b_tr.images.tobytes()
    rows_tr = {im.tobytes() for im in a_tr.images}
    assert not rows_tr & {im.tobytes() for im in a_te.images}


@pytest.mark.parametrize("rate", [0.01, 0.99, 0.0, 1.0])
def test_extreme_split_is_config_error(rate):
    with pytest.raises(ConfigError):
        split(generate(SceneSpec(), 10), rate)


# ---------------------------------------------------------------- PPM / PGM

def test_pgm_scaling_and_replication(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
    img = read_pnm(p)
    assert img.shape == (3, 2, 2)
    for c in range(3):
        assert img[c].ravel().tolist() == [0.0, 1.0, 0.0, 1.0]


def test_ppm_channel_order(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P6\n# comment\n1 1\n255\n" + bytes([255, 0, 51]))
    assert read_pnm(p).ravel().tolist() == [1.0, 0.0, 0.2]


@pytest.mark.parametrize("blob,match", [
    (b"P3\n1 1\n255\n1 2 3", "magic"),
    (b"P5\n2 x\n255\n\0\0", "malformed"),
    (b"P5\n2 2\n65535\n" + bytes(8), "maxval"),
    (b"P5\n2 2\n255\n" + bytes(3), "truncated payload"),
    (b"P6\n2 2", "truncated header"),
])
def test_bad_files_raise_parse_error_with_path(tmp_path, blob, match):
    p = tmp_path / "bad.pnm"
    p.write_bytes(blob)
    with pytest.raises(ParseError, match=match) as info:
        read_pnm(p)
    assert str(p) in str(info.value)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]), st.integers(0, 2**31))
def test_pnm_round_trip(h, w, c, seed):
    import tempfile
    from pathlib import Path

    img = np.random.default_rng(seed).integers(0, 256, (c, h, w)) / 255.0
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "img"
        write_pnm(p, img)
        back = read_pnm(p)
    expect = np.repeat(img, 3, axis=0) if c == 1 else img
    assert np.array_equal(back, expect)


def test_directory_labels_follow_sorted_names(tmp_path):
    for name in ("b", "a"):
        (tmp_path / name).mkdir()
        write_pnm(tmp_path / name / "0.pgm", np.full((1, 2, 2), 0.5 if name == "a" else 1.0))
    ds = load_image_dir(tmp_path)
    assert ds.class_names == ["a", "b"]
    assert ds.labels.tolist() == [0, 1]
    assert ds.images[1].max() == 1.0


def test_empty_class_directory_is_config_error(tmp_path):
    (tmp_path / "a").mkdir()
    write_pnm(tmp_path / "a" / "0.pgm", np.zeros((1, 2, 2)))
    (tmp_path / "b").mkdir()
    with pytest.raises(ConfigError, match="no .ppm"):
        load_image_dir(tmp_path)


def test_saved_dataset_reloads_through_manifest(tmp_path):
    ds = generate(SceneSpec(image_size=32, motif_size=6, num_classes=3), 2)
    manifest = save_image_dir(ds, tmp_path)
    back = load_image_dir(tmp_path, manifest)
    assert back.labels.tolist() == sorted(ds.labels.tolist())
    assert np.max(np.abs(back.images - ds.images[np.argsort(ds.labels, kind="stable")])) <= 0.5 / 255 + 1e-12
