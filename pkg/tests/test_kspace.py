import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evorecon import kspace as ks
from evorecon.errors import EvoreconError

from oracles import dft2_naive, dft_entry


def complex_image(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# -- FFT ----------------------------------------------------------------------

def test_fft_round_trip_and_parseval(rng):
    x = complex_image(rng, (64, 64))
    k = ks.fft2(x)
    assert np.abs(ks.ifft2(k) - x).max() < 1e-10
    assert abs(np.linalg.norm(k) - np.linalg.norm(x)) < 1e-10


def test_fft_matches_naive_dft(rng):
    x = complex_image(rng, (64, 64))
    assert np.abs(ks.fft2(x) - dft2_naive(x)).max() < 1e-9


def test_fft_single_entries_against_scalar_sum(rng):
    x = complex_image(rng, (8, 16))
    k = ks.fft2(x)
    for u, v in [(0, 0), (1, 3), (7, 15), (4, 8)]:
        assert abs(k[u, v] - dft_entry(x, u, v)) < 1e-12


def test_constant_image_has_only_dc():
    k = ks.fft2(np.full((8, 8), 3.0))
    assert k[0, 0] == pytest.approx(24.0)
    k[0, 0] = 0
    assert np.abs(k).max() < 1e-12


@pytest.mark.parametrize("shape", [(6, 8), (8, 12), (0, 8)])
def test_fft_rejects_non_power_of_two(shape):
    with pytest.raises(ValueError):
        ks.fft2(np.zeros(shape))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4, 8, 16, 32]))
def test_parseval_property(seed, n):
    x = complex_image(np.random.default_rng(seed), (n, 2 * n))
    assert abs(np.linalg.norm(ks.fft2(x)) - np.linalg.norm(x)) < 1e-10


# -- masks ------------------------------------------------------------------------

def test_uniform_mask_256():
    m = ks.make_uniform_mask(256, 4, 0.04)
    # 64 stride rows + ceil(10.24) = 11 centre rows, 3 of which are stride rows
    assert m.kept == 72
    assert m.effective_acceleration == pytest.approx(256 / 72)
    assert round(m.effective_acceleration, 1) == 3.6
    assert m.keep[ks.center_rows(256, 0.04)].all()
    assert list(ks.center_rows(256, 0.04)) == list(range(123, 134))


def test_uniform_mask_small_and_identity():
    m = ks.make_uniform_mask(16, 4, 0.0)
    assert m.kept == 4 and m.effective_acceleration == 4.0
    full = ks.make_uniform_mask(16, 4, 1.0)
    assert full.kept == 16 and full.effective_acceleration == 1.0


def test_center_rows_even_count_leans_low():
    assert list(ks.center_rows(16, 0.25)) == [6, 7, 8, 9]
    assert list(ks.center_rows(16, 3 / 16)) == [7, 8, 9]


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([8, 16, 32, 64, 128, 256]), st.integers(1, 8), st.floats(0, 1))
def test_mask_invariants(rows, r, c):
    m = ks.make_uniform_mask(rows, r, c)
    assert m.keep[ks.center_rows(rows, c)].all()
    assert m.kept >= rows / r
    assert m.effective_acceleration == rows / int(m.keep.sum())


def test_random_mask_is_seeded_and_exact():
    a = ks.make_random_mask(64, 4, 0.08, seed=3)
    b = ks.make_random_mask(64, 4, 0.08, seed=3)
    assert a == b
    assert a.kept == 16
    assert a.keep[ks.center_rows(64, 0.08)].all()
    assert ks.make_random_mask(64, 4, 0.08, seed=4) != a


def test_random_mask_density_favours_centre():
    rows = 64
    centre = set(ks.center_rows(rows, 0.04).tolist())
    inner = set(range(rows // 4, 3 * rows // 4))
    hits = total = 0
    for seed in range(1000):
        m = ks.make_random_mask(rows, 4, 0.04, seed)
        drawn = [i for i in np.flatnonzero(m.keep) if i not in centre]
        total += len(drawn)
        hits += sum(i in inner for i in drawn)
    assert hits / total > 0.6


def test_mask_argument_errors():
    with pytest.raises(ValueError):
        ks.make_uniform_mask(16, 0, 0.04)
    with pytest.raises(ValueError):
        ks.make_uniform_mask(16, 4, 1.5)


# -- degradation -------------------------------------------------------------------

def test_full_mask_is_lossless(rng):
    img = rng.uniform(0, 2, (16, 16))
    pair = ks.degrade(img, ks.make_uniform_mask(16, 4, 1.0))
    assert pair.scale == img.max()
    np.testing.assert_allclose(pair.aliased, pair.target, atol=1e-12)
    assert pair.target.max() == 1.0


def test_delta_aliases_into_four_replicas():
    img = np.zeros((16, 16))
    img[5, 9] = 1.0
    pair = ks.degrade(img, ks.make_uniform_mask(16, 4, 0.0))
    col = pair.aliased[:, 9]
    np.testing.assert_allclose(col[[1, 5, 9, 13]], 0.25, atol=1e-12)
    rest = np.delete(pair.aliased, [1, 5, 9, 13], axis=0)
    assert np.abs(rest).max() < 1e-12
    assert np.abs(np.delete(pair.aliased, 9, axis=1)).max() < 1e-12


def test_dropping_rows_loses_information():
    img = ks.generate_phantoms(1, 32, 1)[0]
    pair = ks.degrade(img, ks.make_uniform_mask(32, 4, 0.04))
    assert np.mean((pair.aliased - pair.target) ** 2) > 0
    assert 0 <= pair.aliased.min() and pair.aliased.max() <= 1


def test_degrade_errors():
    m = ks.make_uniform_mask(8, 2, 0.0)
    with pytest.raises(EvoreconError):
        ks.degrade(np.zeros((8, 8)), m)
    with pytest.raises(ValueError):
        ks.degrade(np.ones((16, 16)), m)
    with pytest.raises(ValueError):
        ks.degrade(np.ones(8), m)


# -- phantoms and datasets -------------------------------------------------------------

def test_phantoms():
    a = ks.generate_phantoms(20, 32, 7)
    b = ks.generate_phantoms(20, 32, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], ks.generate_phantoms(1, 32, 8)[0])
    for img in a:
        assert img.shape == (32, 32)
        assert img.min() >= 0
        assert img.max() > 0.1


def test_dataset_splits_and_reproducibility():
    imgs = ks.generate_phantoms(200, 16, 0)
    mask = ks.make_uniform_mask(16, 4, 0.04)
    ds = ks.build_dataset(imgs, mask, seed=2)
    assert (len(ds.train), len(ds.validation), len(ds.test)) == (150, 20, 30)
    keys = [p.target.tobytes() for p in ds.train + ds.validation + ds.test]
    assert len(set(keys)) == 200
    again = ks.build_dataset(imgs, mask, seed=2)
    assert all(np.array_equal(p.aliased, q.aliased) for p, q in zip(ds.test, again.test))
    other = ks.build_dataset(imgs, mask, seed=3)
    assert [p.scale for p in other.train] != [p.scale for p in ds.train]
    x, y = ds.arrays("validation")
    assert x.shape == y.shape == (20, 16, 16, 1) and x.dtype == np.float32


def test_split_fractions_must_sum_to_one():
    with pytest.raises(ValueError):
        ks.split_sizes(10, (0.5, 0.2, 0.2))


def test_dataset_round_trip(tmp_path):
    imgs = ks.generate_phantoms(20, 8, 4)
    ds = ks.build_dataset(imgs, ks.make_random_mask(8, 2, 0.25, seed=9), seed=1)
    ks.save_dataset(ds, tmp_path / "d")
    back = ks.load_dataset(tmp_path / "d")
    assert back.mask == ds.mask
    assert back.fractions == ds.fractions and back.seed == ds.seed
    for split in ks.SPLITS:
        for p, q in zip(getattr(ds, split), getattr(back, split)):
            np.testing.assert_array_equal(p.aliased, q.aliased)
            np.testing.assert_array_equal(p.target, q.target)
            assert p.scale == q.scale
    with pytest.raises(EvoreconError):
        ks.load_dataset(tmp_path / "missing")
