"""Procedural dataset: rasterization audits, enumeration, batching, disk IO."""

import numpy as np
import pytest

from c2vae import data
from c2vae.errors import ConfigError, ShapeError
from c2vae.utils import make_rng


@pytest.fixture(scope="module")
def default_ds():
    return data.generate(data.default_spec(), resolution=16)


def test_default_size_is_product(default_ds):
    assert len(default_ds) == 3 * 4 * 8 * 8 == 768


def test_images_exactly_binary(default_ds):
    vals = np.unique(default_ds.images)
    assert set(vals.tolist()) <= {0.0, 1.0}


def test_render_deterministic():
    spec = data.default_spec()
    a = data.render(spec, (1, 2, 3, 4), 16)
    b = data.render(spec, (1, 2, 3, 4), 16)
    assert np.array_equal(a, b)


def test_render_rejects_out_of_range():
    spec = data.default_spec()
    with pytest.raises(ShapeError):
        data.render(spec, (3, 0, 0, 0), 16)
    with pytest.raises(ShapeError):
        data.render(spec, (0, 0, 8, 0), 16)


def test_rasterization_audit_all_tuples(default_ds):
    # every image nonempty, and its foreground count equals the glyph's pixel
    # count: a clipped sprite would come up short
    glyph_counts = {
        (si, ci): data._glyph(data.SHAPES[si], data._side_px(ci, 16)).sum()
        for si in range(3) for ci in range(4)}
    for img, tup in zip(default_ds.images, default_ds.factors):
        n = img.sum()
        assert n > 0
        assert n == glyph_counts[(tup[0], tup[1])], f"clipping at {tuple(tup)}"


def test_glyph_pixel_counts_all_distinct():
    # the injectivity argument rests on this
    counts = set()
    for shape_i in range(3):
        for scale_i in range(4):
            side = data._side_px(scale_i, 16)
            counts.add(float(data._glyph(data.SHAPES[shape_i], side).sum()))
    assert len(counts) == 12


def test_exhaustive_pairwise_uniqueness(default_ds):
    flat = default_ds.images.reshape(len(default_ds), -1)
    unique = np.unique(flat, axis=0)
    assert unique.shape[0] == len(default_ds)


def test_factor_columns_cycle_lexicographically(default_ds):
    f = default_ds.factors
    cards = default_ds.spec.cardinalities
    # last factor cycles fastest
    np.testing.assert_array_equal(f[:8, 3], np.arange(8))
    assert f[8, 2] == 1 and f[8, 3] == 0
    # first factor changes slowest: period = product of downstream cards
    assert np.all(f[:256, 0] == 0) and f[256, 0] == 1
    for col, card in enumerate(cards):
        assert f[:, col].max() == card - 1 and f[:, col].min() == 0


def test_regeneration_bit_identical(default_ds):
    again = data.generate(data.default_spec(), resolution=16)
    assert np.array_equal(default_ds.images, again.images)
    assert np.array_equal(default_ds.factors, again.factors)


def test_centroid_tracks_position(default_ds):
    # fixing posX=3 puts every foreground centroid within one 2px cell of the
    # grid-cell center
    cell = 16 / 8
    target_x = (3 + 0.5) * cell
    rows = np.flatnonzero(default_ds.factors[:, 2] == 3)
    for row in rows[::7]:
        img = default_ds.images[row]
        ys, xs = np.nonzero(img)
        assert abs(xs.mean() - target_x) <= cell


def test_centroid_moves_monotonically_with_posx(default_ds):
    spec = default_ds.spec
    cents = []
    for px in range(8):
        img = data.render(spec, (0, 2, px, 4), 16)
        ys, xs = np.nonzero(img)
        cents.append(xs.mean())
    assert np.all(np.diff(cents) > 0)


def test_orientation_flag():
    spec = data.default_spec(orientation=True)
    assert spec.total == 3 * 4 * 4 * 8 * 8
    ds_img = data.render(spec, (2, 3, 0, 3, 3), 16)   # cross, largest scale
    rot = data.render(spec, (2, 3, 1, 3, 3), 16)
    assert ds_img.shape == rot.shape == (16, 16)


def test_invalid_cardinalities_raise():
    with pytest.raises(ConfigError):
        data.default_spec(positions=1)
    with pytest.raises(ConfigError):
        data.default_spec(shapes=0)
    with pytest.raises(ConfigError):
        data.default_spec(scales=1)


def test_resolution_too_small_rejected():
    with pytest.raises(ConfigError):
        data.generate(data.default_spec(), resolution=8)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def test_full_batch_is_permutation(default_ds):
    b = data.EpochBatcher(default_ds, len(default_ds), make_rng(0, "t"))
    idx = b.next_indices()
    np.testing.assert_array_equal(np.sort(idx), np.arange(len(default_ds)))


def test_batch_sequence_deterministic(default_ds):
    seq1 = [data.EpochBatcher(default_ds, 64, make_rng(5, "t")).next_indices()
            for _ in range(1)]
    b1 = data.EpochBatcher(default_ds, 64, make_rng(5, "t"))
    b2 = data.EpochBatcher(default_ds, 64, make_rng(5, "t"))
    for _ in range(30):
        np.testing.assert_array_equal(b1.next_indices(), b2.next_indices())


def test_epoch_covers_every_index_once(default_ds):
    b = data.EpochBatcher(default_ds, 64, make_rng(7, "t"))
    seen = np.concatenate([b.next_indices() for _ in range(768 // 64)])
    np.testing.assert_array_equal(np.sort(seen), np.arange(768))


def test_batch_too_large_rejected(default_ds):
    with pytest.raises(ShapeError):
        data.EpochBatcher(default_ds, 769, make_rng(0, "t"))


def test_fixed_factor_batch_shares_value(default_ds):
    g = make_rng(1, "fixed")
    for factor in range(4):
        batch, value = data.fixed_factor_batch(default_ds, factor, 32, g)
        # recover rows by matching images against the dataset
        flat = default_ds.flat_images()
        for row_img in batch:
            match = np.flatnonzero((flat == row_img).all(axis=1))
            assert default_ds.factors[match[0], factor] == value


def test_fixed_factor_batch_other_factors_vary(default_ds):
    g = make_rng(2, "fixed")
    batch, value = data.fixed_factor_batch(default_ds, 2, 32, g)
    flat = default_ds.flat_images()
    rows = [np.flatnonzero((flat == img).all(axis=1))[0] for img in batch]
    other = default_ds.factors[rows][:, [0, 1, 3]]
    assert all(np.unique(other[:, j]).size > 1 for j in range(3))


def test_fixed_factor_batch_replacement_and_errors(default_ds):
    g = make_rng(3, "fixed")
    batch, _ = data.fixed_factor_batch(default_ds, 2, 200, g, replace=True)
    assert batch.shape == (200, 256)
    with pytest.raises(ShapeError):
        data.fixed_factor_batch(default_ds, 2, 200, g, replace=False)


def test_fixed_posx_centroid(default_ds):
    g = make_rng(4, "fixed")
    posx_index = default_ds.spec.index("posX")
    batch, value = data.fixed_factor_batch(default_ds, posx_index, 40, g)
    cell = 16 / 8
    target = (value + 0.5) * cell
    for img in batch.reshape(-1, 16, 16):
        ys, xs = np.nonzero(img)
        assert abs(xs.mean() - target) <= cell


# ---------------------------------------------------------------------------
# disk round trip
# ---------------------------------------------------------------------------

def test_dataset_round_trip_bit_identical(tmp_path, default_ds):
    data.save_dataset(tmp_path, default_ds)
    back = data.load_dataset(tmp_path)
    assert np.array_equal(back.images, default_ds.images)
    assert np.array_equal(back.factors, default_ds.factors)
    assert back.spec == default_ds.spec
    assert back.resolution == 16
    # byte-identical rewrite
    first = (tmp_path / "images.ctf").read_bytes()
    data.save_dataset(tmp_path, default_ds)
    assert (tmp_path / "images.ctf").read_bytes() == first
