import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cfdiff.errors import ContractError, ShapeError
from cfdiff.segmentation import (dice, difference_image, fuse_modalities, histogram_bins, iou,
                                 normalize_contrast, otsu_from_histogram, otsu_threshold, segment)
from oracles import otsu_bruteforce_histogram


def test_difference_image():
    a = np.full((4, 3, 3), 0.8)
    b = np.full((4, 3, 3), 0.3)
    assert np.allclose(difference_image(a, b), 0.5)
    assert not difference_image(a, a).any()
    assert np.array_equal(difference_image(a, b), difference_image(b, a))
    with pytest.raises(ShapeError):
        difference_image(a, b[:3])


def test_normalize_identity_band():
    gen = np.random.default_rng(0)
    ch = np.concatenate([[0.0], gen.uniform(0, 1, 998), [1.0]])
    lo, hi = np.percentile(ch, [1, 99])
    ch = (ch - lo) / (hi - lo)  # now exactly spans [0, 1] at its own percentiles
    out = normalize_contrast(ch[None])[0]
    band = (ch >= 0) & (ch <= 1)
    assert np.max(np.abs(out[band] - ch[band])) < 1e-6


def test_normalize_constant_and_minmax():
    assert not normalize_contrast(np.full((2, 4, 4), 0.3)).any()
    out = normalize_contrast(np.array([[0.0, 0.2, 1.0]]), 0, 100)
    np.testing.assert_allclose(out, [[0.0, 0.2, 1.0]])


def test_normalize_small_lesion_falls_back_to_max():
    ch = np.zeros((1, 20, 20))
    ch[0, :2, :1] = 0.4  # 0.5 % of pixels
    out = normalize_contrast(ch)
    assert out.max() == 1.0 and out.sum() == 2.0


def test_otsu_two_level():
    thr, mask = otsu_threshold(np.array([0, 0, 0, 1, 1.0]))
    assert 0 < thr < 1
    assert mask.tolist() == [False, False, False, True, True]


def test_otsu_constant():
    thr, mask = otsu_threshold(np.full((3, 3), 0.7))
    assert thr == 0.7 and not mask.any()


@pytest.mark.parametrize("seed", range(100))
def test_otsu_matches_bruteforce_on_random_histograms(seed):
    gen = np.random.default_rng(seed)
    counts = gen.integers(0, 50, size=256) * (gen.uniform(size=256) < 0.6)
    counts[0] += 1
    counts[-1] += 1
    assert otsu_from_histogram(counts) == otsu_bruteforce_histogram(counts.tolist())


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 7), elements=st.floats(-5, 5, allow_nan=False)))
def test_otsu_threshold_is_scan_argmax(values):
    thr, mask = otsu_threshold(values, bins=16)
    if values.min() == values.max():
        assert not mask.any()
        return
    idx, edges = histogram_bins(values, 16)
    k = otsu_bruteforce_histogram(np.bincount(idx.ravel(), minlength=16).tolist())
    assert thr == edges[k]
    assert np.array_equal(mask, values > thr)
    # class 0 from the histogram is exactly the set at or below the threshold
    assert np.array_equal(idx < k, values <= thr)


def test_fusion_examples():
    w = (0.25,) * 4
    votes = np.zeros((4, 1, 3), bool)
    votes[:2, 0, 0] = True      # two votes
    votes[0, 0, 1] = True       # one vote
    r = fuse_modalities(votes, w)
    assert r.score[0, 0] == 0.5 and r.mask[0, 0]
    assert r.score[0, 1] == 0.25 and not r.mask[0, 1]
    assert not r.mask[0, 2]
    same = np.stack([votes[0]] * 3)
    assert np.array_equal(fuse_modalities(same, (0.2, 0.3, 0.5)).mask, votes[0])


def test_fusion_errors():
    with pytest.raises(ContractError):
        fuse_modalities(np.zeros((4, 2, 2)), (0.3,) * 4)
    with pytest.raises(ShapeError):
        fuse_modalities(np.zeros((3, 2, 2)), (0.25,) * 4)


def test_fusion_majority_random():
    votes = np.random.default_rng(0).uniform(size=(4, 100, 100)) < 0.5
    r = fuse_modalities(votes, (0.25,) * 4)
    assert np.array_equal(r.mask, votes.sum(0) >= 2)


def test_dice_iou():
    a = np.zeros((4, 4), bool)
    b = np.zeros((4, 4), bool)
    assert dice(a, b) == 1.0 and iou(a, b) == 1.0
    a[0] = True
    assert dice(a, a) == 1.0 and iou(a, a) == 1.0
    b[1] = True
    assert dice(a, b) == 0.0 and iou(a, b) == 0.0
    b[0, :2] = True
    b[1] = False
    b[2, :2] = True  # |A|=4, |B|=4, overlap 2
    assert dice(a, b) == 0.5 and iou(a, b) == pytest.approx(2 / 6)


@settings(max_examples=100, deadline=None)
@given(arrays(bool, (5, 5)), arrays(bool, (5, 5)))
def test_iou_le_dice(a, b):
    d, j = dice(a, b), iou(a, b)
    assert j <= d + 1e-12
    if d in (0.0, 1.0):
        assert j == d
    else:
        assert j < d


def _pair(channels_changed):
    gen = np.random.default_rng(1)
    x = gen.uniform(0.2, 0.6, (4, 16, 16))
    cf = x.copy()
    for c in channels_changed:
        cf[c, 4:9, 6:11] += 0.4
    sq = np.zeros((16, 16), bool)
    sq[4:9, 6:11] = True
    return x, cf, sq


def test_segment_identical_pair_is_empty():
    x, _, _ = _pair([])
    assert not segment(x, x).mask.any()


def test_segment_three_channels_find_square():
    x, cf, sq = _pair([0, 2, 3])
    assert np.array_equal(segment(x, cf).mask, sq)


def test_segment_single_channel_is_empty():
    x, cf, _ = _pair([1])
    r = segment(x, cf)
    assert r.channel_masks[1].any() and not r.mask.any()


def test_segment_min_contrast_rejects_weak_change():
    x, cf, sq = _pair([0, 2, 3])
    weak = x + 0.1 * (cf - x)  # 0.04 change
    assert np.array_equal(segment(x, weak).mask, sq)
    assert not segment(x, weak, min_contrast=0.1).mask.any()
    assert np.array_equal(segment(x, cf, min_contrast=0.1).mask, sq)
