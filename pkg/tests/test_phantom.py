import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfdiff.denoiser import ConditionLabel
from cfdiff.errors import BadMagicError, ConfigError, MaskValueError, TruncatedError, VersionError
from cfdiff.phantom import (PhantomSample, PhantomSpec, decode_sample, encode_sample,
                            generate_dataset, generate_sample, healthy_schedule)

SPEC = PhantomSpec()
# sha256 over the encoded default 2000-sample corpus (seed 0, half healthy)
CORPUS_SHA256 = "50c8ba7a2c108d386558c2630aaaae8a487debb9159c594b734810287c9a6229"


def test_force_healthy():
    s = generate_sample(SPEC, 3, ConditionLabel.HEALTHY)
    assert s.label == ConditionLabel.HEALTHY and not s.tumor_mask.any()


def test_same_seed_is_bit_identical():
    a, b = generate_sample(SPEC, 11), generate_sample(SPEC, 11)
    assert encode_sample(a) == encode_sample(b)


def test_healthy_twin_shares_anatomy():
    sick = generate_sample(SPEC, 5, ConditionLabel.UNHEALTHY)
    well = generate_sample(SPEC, 5, ConditionLabel.HEALTHY)
    assert np.array_equal(sick.brain_mask, well.brain_mask)
    outside = ~sick.tumor_mask
    assert np.array_equal(sick.image[:, outside], well.image[:, outside])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_sample_invariants(seed):
    s = generate_sample(SPEC, seed)
    assert s.image.dtype == np.float32 and s.image.shape == (4, 32, 32)
    assert s.image.min() >= 0 and s.image.max() <= 1
    assert (s.label == ConditionLabel.UNHEALTHY) == bool(s.tumor_mask.any())
    assert not (s.tumor_mask & ~s.brain_mask).any()
    assert 0.40 <= s.brain_mask.mean() <= 0.70
    assert np.all(s.image[:, ~s.brain_mask] == 0)


def test_tumor_contrast_signs():
    s = generate_sample(SPEC, 2, ConditionLabel.UNHEALTHY)
    twin = generate_sample(SPEC, 2, ConditionLabel.HEALTHY)
    delta = s.image - twin.image
    m = s.tumor_mask
    assert delta[0, m].max() < 0 and delta[2, m].min() > 0 and delta[3, m].min() > 0
    assert delta[1, m].max() > 0 and (delta[1, m] == 0).any()  # rim only on T1ce


def test_tumor_area_statistics():
    areas = np.array([generate_sample(SPEC, 10_000 + i, ConditionLabel.UNHEALTHY).tumor_mask.mean()
                      for i in range(1000)])
    assert np.mean((areas >= 0.005) & (areas <= 0.20)) >= 0.99


def test_dataset_counts_and_seed_rule():
    ds = generate_dataset(SPEC, 10, 0.5, seed=100)
    assert sum(s.label == ConditionLabel.HEALTHY for s in ds) == 5
    tail = generate_dataset(SPEC, 10, 0.5, seed=100, start=6)
    flags = healthy_schedule(10, 0.5)
    for i, s in zip(range(6, 10), tail):
        ref = generate_sample(SPEC, 100 + i, 0 if flags[i] else 1)
        assert encode_sample(s) == encode_sample(ref) == encode_sample(ds[i])


@pytest.mark.parametrize("n,f", [(7, 0.3), (2000, 0.5), (3, 1.0), (5, 0.0), (9, 0.5)])
def test_healthy_schedule_total(n, f):
    assert sum(healthy_schedule(n, f)) == int(np.floor(n * f + 0.5))


def test_default_corpus_hash():
    ds = generate_dataset(SPEC, 2000, 0.5, seed=0)
    h = hashlib.sha256()
    for s in ds:
        h.update(encode_sample(s))
    assert h.hexdigest() == CORPUS_SHA256


def test_encoding_layout():
    s = generate_sample(SPEC, 0)
    raw = encode_sample(s)
    assert len(raw) == 16 + 4 * 32 * 32 * 4 + 2 * 32 * 32
    assert raw[:4] == b"CFDS" and raw[4:6] == b"\x01\x00" and raw[6] == 3
    assert raw[7] == 4 and raw[8:10] == b"\x20\x00" and raw[10:12] == b"\x20\x00"
    assert raw[12] == int(s.label) and raw[13:16] == b"\0\0\0"
    assert np.frombuffer(raw, "<f4", 1, 16)[0] == s.image[0, 0, 0]


def test_round_trip_many():
    for seed in range(100):
        raw = encode_sample(generate_sample(SPEC, seed))
        assert encode_sample(decode_sample(raw)) == raw


def test_round_trip_without_masks():
    s = generate_sample(SPEC, 1)
    bare = PhantomSample(s.image, None, None, s.label)
    back = decode_sample(encode_sample(bare))
    assert back.tumor_mask is None and back.brain_mask is None
    assert np.array_equal(back.image, s.image)


def test_decode_errors():
    raw = bytearray(encode_sample(generate_sample(SPEC, 0)))
    bad = bytearray(raw)
    bad[0] ^= 0xFF
    with pytest.raises(BadMagicError):
        decode_sample(bytes(bad))
    bad = bytearray(raw)
    bad[4] = 2
    with pytest.raises(VersionError):
        decode_sample(bytes(bad))
    with pytest.raises(TruncatedError):
        decode_sample(bytes(raw[:-5]))
    bad = bytearray(raw)
    bad[-1] = 7
    with pytest.raises(MaskValueError):
        decode_sample(bytes(bad))


def test_invalid_spec():
    with pytest.raises(ConfigError):
        PhantomSpec(C=3)
    with pytest.raises(ConfigError):
        PhantomSpec(radius_frac=(0.3, 0.1))
