from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from volfuse.metrics import (
    DegenerateInputError,
    MetricWeights,
    average_gradient,
    entropy,
    gaussian_window,
    joint_score,
    ssim,
)
from volfuse.volume import MapImage


def ssim_loop(a, b, size=11, sigma=1.5):
    """Window-by-window SSIM, written independently of the filtered version."""
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    a = (a - lo) / (hi - lo)
    b = (b - lo) / (hi - lo)
    r = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i : i + size, j : j + size], b[i : i + size, j : j + size]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va = np.sum(w * (pa - ma) ** 2)
            vb = np.sum(w * (pb - mb) ** 2)
            cv = np.sum(w * (pa - ma) * (pb - mb))
            vals.append(((2 * ma * mb + c1) * (2 * cv + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_entropy_examples():
    assert entropy(np.full((5, 5), 2.0)) == 0.0
    half = np.zeros((4, 4))
    half[:, 2:] = 1.0
    assert entropy(half) == pytest.approx(1.0)
    ramp = np.arange(256.0).reshape(16, 16)
    assert entropy(ramp) == pytest.approx(8.0)
    assert entropy(MapImage(ramp)) == pytest.approx(8.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 7), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_entropy_bounds(img):
    e = entropy(img)
    assert 0.0 <= e <= np.log2(img.size) + 1e-12


def test_entropy_affine_invariant(rng):
    img = rng.random((20, 20))
    assert entropy(3.0 * img + 7.0) == pytest.approx(entropy(img))


def test_average_gradient_examples():
    assert average_gradient(np.full((4, 6), 9.0)) == 0.0
    ramp = np.tile(np.arange(6.0), (5, 1))
    assert average_gradient(ramp) == pytest.approx(1 / np.sqrt(2))
    checker = np.indices((6, 6)).sum(axis=0) % 2
    assert average_gradient(checker.astype(float)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        average_gradient(np.zeros((1, 5)))


def test_average_gradient_scales_linearly(rng):
    img = rng.random((10, 12))
    assert average_gradient(2.5 * img + 1) == pytest.approx(2.5 * average_gradient(img))
    assert average_gradient(img.T) == pytest.approx(average_gradient(img))


def test_gaussian_window():
    g = gaussian_window()
    assert g.size == 11
    assert g.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(g, g[::-1])


def test_ssim_matches_loop_oracle(rng):
    a = rng.random((16, 18))
    b = 0.7 * a + 0.3 * rng.random((16, 18))
    assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-12)


def test_ssim_properties(rng):
    a = rng.random((20, 20))
    b = rng.random((20, 20))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert ssim(a, 1.0 - a) < 0.5
    assert ssim(a, b) < 1.0
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


def test_weights():
    assert MetricWeights().as_tuple() == (0.6, 0.3, 0.1)
    assert MetricWeights.parse("1,0,0").as_tuple() == (1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        MetricWeights(-1, 0.5, 0.5)
    with pytest.raises(ValueError):
        MetricWeights(0, 0, 0)
    with pytest.raises(ValueError):
        MetricWeights.parse("1,2")


def test_joint_score_hand_combination(rng):
    src = [rng.random((16, 16)), rng.random((16, 16))]
    fused = 0.5 * (src[0] + src[1])
    w = MetricWeights(0.6, 0.3, 0.1)
    rep = joint_score(fused, src, w)
    l_avg = average_gradient(fused) / max(average_gradient(s) for s in src)
    l_en = entropy(fused) / 8.0
    l_ssim = np.mean([ssim(fused, s) for s in src])
    assert rep.total == pytest.approx(0.6 * l_avg + 0.3 * l_en + 0.1 * l_ssim, abs=1e-12)
    assert rep.norm_avg == pytest.approx(l_avg)
    d = rep.to_dict()
    assert d["weights"] == {"lambda_avg": 0.6, "lambda_en": 0.3, "lambda_ssim": 0.1}


def test_joint_score_degenerate_sources():
    flat = np.ones((12, 12))
    with pytest.raises(DegenerateInputError):
        joint_score(flat, [flat, flat])
    with pytest.raises(ValueError):
        joint_score(flat, [])
