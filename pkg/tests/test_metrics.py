import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evorecon import metrics as me

from oracles import mse_loops, nmse_loops, psnr_closed, ssim_windows


def random_pairs(n=50, size=32, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        y = rng.uniform(0, 1, (size, size))
        yield y, np.clip(y + rng.normal(0, 0.1, y.shape), 0, 1)


def test_metrics_match_brute_force_oracles():
    for y, yh in random_pairs():
        assert abs(me.mse(y, yh) - mse_loops(y, yh)) < 1e-9
        assert abs(me.nmse(y, yh) - nmse_loops(y, yh)) < 1e-9
        assert abs(me.ssim(y, yh) - ssim_windows(y, yh)) < 1e-9
        assert abs(me.psnr(y, yh) - psnr_closed(mse_loops(y, yh))) < 1e-9


def test_ssim_identity_and_inversion(rng):
    x = rng.uniform(0, 1, (32, 32))
    assert me.ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    binary = (rng.uniform(size=(32, 32)) > 0.5).astype(float)
    assert me.ssim(binary, 1 - binary) < 0.5


def test_ssim_errors():
    with pytest.raises(ValueError):
        me.ssim(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(ValueError):
        me.ssim(np.zeros((5, 5)), np.zeros((5, 5)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.001, 0.5))
def test_ssim_bounded_and_maximal_at_equality(seed, noise):
    # only the upper bound is asserted: anti-correlated windows give
    # negative structure terms even for nonnegative images
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (16, 16))
    y = np.clip(x + rng.normal(0, noise, x.shape), 0, 1)
    s = me.ssim(x, y)
    assert s <= 1.0
    if not np.array_equal(x, y):
        assert s < 1.0 - 1e-12


def test_nmse_cases(rng):
    y = rng.uniform(0.1, 1, (8, 8))
    assert me.nmse(y, y) == 0
    assert me.nmse(y, np.zeros_like(y)) == pytest.approx(1.0, abs=1e-15)
    assert me.nmse(y, 2 * y) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        me.nmse(np.zeros((4, 4)), y[:4, :4])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_nmse_scale_invariant(seed, a):
    rng = np.random.default_rng(seed)
    y, yh = rng.uniform(0.1, 1, (2, 8, 8))
    assert me.nmse(a * y, a * yh) == pytest.approx(me.nmse(y, yh), rel=1e-9)


def test_psnr_cases():
    assert me.psnr_from_mse(0.01) == 20.0
    assert me.psnr_from_mse(1.0) == 0.0
    assert me.psnr_from_mse(0.01, peak=2.0) - me.psnr_from_mse(0.01) == pytest.approx(
        10 * math.log10(4), abs=1e-12)
    assert round(10 * math.log10(4), 4) == 6.0206
    assert me.psnr(np.ones((4, 4)), np.ones((4, 4))) == math.inf
    y = np.zeros((10, 10))
    assert me.psnr(y, y + 0.1) == pytest.approx(20.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 10), st.floats(1e-8, 10))
def test_psnr_decreasing_in_mse(a, b):
    if a < b:
        assert me.psnr_from_mse(a) > me.psnr_from_mse(b)


def test_aggregate():
    assert me.aggregate([3.0, 3.0, 3.0]) == (3.0, 0.0)
    mean, std = me.aggregate([0.0, 2.0])
    assert mean == 1.0 and std == pytest.approx(math.sqrt(2), abs=1e-15)
    with pytest.raises(ValueError):
        me.aggregate([])


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        me.mse(np.zeros(3), np.zeros(4))


def test_reports():
    pairs = list(random_pairs(4, 16, 1))
    res = me.evaluate_pairs([p[0] for p in pairs], [p[1] for p in pairs])
    assert set(res) == set(me.METRICS)
    csv = me.report_csv(res).splitlines()
    assert csv[0] == "name,mean,std" and len(csv) == 5
    assert float(csv[1].split(",")[1]) == res["mse"][0]
    table = me.format_table({"Aliased": res}).splitlines()
    assert table[0].startswith("Model") and table[1].startswith("Aliased")
