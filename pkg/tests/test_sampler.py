import math

import numpy as np
import pytest
import torch
from scipy import stats

from cfdiff import rng, sampler
from cfdiff.denoiser import ConditionLabel, DenoiserConfig, init_params, predict_noise
from cfdiff.errors import ContractError, EmptyMaskError, RangeError, ShapeError
from cfdiff.phantom import PhantomSpec, generate_sample
from cfdiff.sampler import (GuidanceSpec, SamplerOptions, counterfactual_sample, draw_site,
                            guided_eps, guided_step, known_step, promptable_sample,
                            random_site_mask, tumor_transfer)
from cfdiff.schedule import build_schedule, posterior_params

CFG = DenoiserConfig(backend="transformer", patch_size=2, hidden_dim=16, n_blocks=1, n_heads=2,
                     embed_dim=8)
HEAL = GuidanceSpec(ConditionLabel.HEALTHY, 1.0)


@pytest.fixture(scope="module")
def params():
    p = init_params(CFG, 0)
    gen = torch.Generator().manual_seed(0)
    # move off the zero-initialised gates so every label matters
    return type(p)((k, v + 0.05 * torch.randn(v.shape, generator=gen)) for k, v in p.items())


@pytest.fixture(scope="module")
def sched():
    return build_schedule(20, 1e-3, 0.3)


@pytest.fixture
def image():
    return torch.tensor(np.random.default_rng(3).uniform(-1, 1, (4, 8, 8)), dtype=torch.float32)


def test_guidance_spec_validation():
    with pytest.raises(ContractError):
        GuidanceSpec(ConditionLabel.NULL, 1.0)
    with pytest.raises(ContractError):
        GuidanceSpec(ConditionLabel.HEALTHY, -0.1)
    with pytest.raises(ContractError):
        SamplerOptions(known_region_mode="jump")


def test_guided_eps_scale_zero_is_conditional(params, image):
    g = GuidanceSpec(ConditionLabel.UNHEALTHY, 0.0)
    assert torch.equal(guided_eps(params, CFG, image, 4, g),
                       predict_noise(params, CFG, image, 4, ConditionLabel.UNHEALTHY))


def _stub(pt, pn):
    def fake(params, cfg, xt, t, y):
        y = torch.as_tensor(y).reshape(-1)
        out = torch.stack([pn if int(v) == ConditionLabel.NULL else pt for v in y])
        return out if xt.dim() == 4 else out[0]
    return fake


def test_guided_eps_formula_with_stubs(monkeypatch, image):
    pt, pn = torch.full((4, 8, 8), 0.3), torch.full((4, 8, 8), -0.2)
    monkeypatch.setattr(sampler, "predict_noise", _stub(pt, pn))
    out = guided_eps(None, CFG, image, 3, GuidanceSpec(ConditionLabel.HEALTHY, 1.0))
    assert torch.allclose(out, 2 * pt - pn)
    monkeypatch.setattr(sampler, "predict_noise", _stub(pt, pt))
    for c in (0.5, 2.0, 7.0):
        assert torch.allclose(guided_eps(None, CFG, image, 3, GuidanceSpec(0, c)), pt, atol=1e-6)


def test_guided_step_t1_returns_denoised_estimate(params, sched, image):
    from cfdiff.schedule import estimate_x0
    eps = guided_eps(params, CFG, image, 1, HEAL)
    expected = estimate_x0(sched, image, eps, 1, clip=True)
    assert torch.equal(guided_step(params, CFG, sched, image, 1, HEAL), expected)


def test_guided_step_is_deterministic(params, sched, image):
    a = guided_step(params, CFG, sched, image, 9, HEAL, SamplerOptions(seed=4))
    b = guided_step(params, CFG, sched, image, 9, HEAL, SamplerOptions(seed=4))
    c = guided_step(params, CFG, sched, image, 9, HEAL, SamplerOptions(seed=5))
    assert torch.equal(a, b) and not torch.equal(a, c)


def test_oracle_noise_chain_reconstructs(monkeypatch):
    s = build_schedule(200, 5e-4, 0.1)
    gen = np.random.default_rng(0)
    x0 = torch.tensor(gen.uniform(-0.9, 0.9, (4, 16, 16)), dtype=torch.float32)

    def perfect(params, cfg, xt, t, y):
        ab = float(s.alpha_bar[int(t) - 1])
        return (xt - math.sqrt(ab) * x0) / math.sqrt(1 - ab)

    monkeypatch.setattr(sampler, "predict_noise", perfect)
    x = torch.tensor(gen.standard_normal((4, 16, 16)), dtype=torch.float32)
    g = GuidanceSpec(ConditionLabel.HEALTHY, 0.0)
    for t in range(s.T, 0, -1):
        x = guided_step(None, None, s, x, t, g, SamplerOptions(seed=1))
    assert float((x - x0).abs().max()) < 0.05


@pytest.mark.parametrize("mode", ["posterior", "marginal"])
def test_known_step_t1_is_exact(sched, image, mode):
    xt = torch.randn(4, 8, 8)
    assert torch.equal(known_step(sched, image, xt, 1, SamplerOptions(known_region_mode=mode)), image)


def test_known_step_posterior_uses_closed_form():
    toy = build_schedule(3, 0.1, 0.3)
    one = torch.ones(1, 1, 1)
    out = known_step(toy, one, one, 2, SamplerOptions(seed=9))
    z = rng.normal((1, 1, 1), 9, 0, 0, rng.KNOWN, 2)
    mean, var = posterior_params(toy, one, one, 2)
    assert float(mean) == pytest.approx(0.9970692096789082, rel=1e-6)
    assert torch.allclose(out, mean + math.sqrt(var) * torch.from_numpy(z))


def test_known_step_marginal(sched, image):
    out = known_step(sched, image, None, 5, SamplerOptions(seed=2, known_region_mode="marginal"))
    ab = float(sched.alpha_bar_prev[4])
    z = torch.from_numpy(rng.normal((4, 8, 8), 2, 0, 0, rng.KNOWN, 5))
    assert torch.allclose(out, math.sqrt(ab) * image + math.sqrt(1 - ab) * z)


def test_all_zero_mask_returns_input(params, sched, image):
    out = promptable_sample(params, CFG, sched, image, np.zeros((8, 8)), HEAL)
    assert torch.equal(out, image)


def test_all_ones_mask_ignores_input(params, sched, image):
    ones = np.ones((8, 8))
    a = promptable_sample(params, CFG, sched, image, ones, HEAL, SamplerOptions(seed=3))
    b = promptable_sample(params, CFG, sched, -image, ones, HEAL, SamplerOptions(seed=3))
    assert torch.equal(a, b)


@pytest.mark.parametrize("mode", ["posterior", "marginal"])
def test_preserved_pixels_are_exact(params, sched, image, mode):
    mask = np.random.default_rng(0).uniform(size=(8, 8)) < 0.4
    out = promptable_sample(params, CFG, sched, image, mask, HEAL,
                            SamplerOptions(seed=1, known_region_mode=mode))
    keep = torch.from_numpy(~mask).expand(4, 8, 8)
    assert torch.equal(out[keep], image[keep])
    assert not torch.equal(out[~keep], image[~keep])


def test_mask_combination_per_step(params, sched, image):
    mask = np.zeros((8, 8), bool)
    mask[2:6, 1:5] = True
    opts = SamplerOptions(seed=6, record_trajectory=True)
    out, states = promptable_sample(params, CFG, sched, image, mask, HEAL, opts)
    assert len(states) == sched.T + 1 and torch.equal(states[-1], out)
    regen = torch.from_numpy(mask).expand(4, 8, 8)
    for i, t in enumerate(range(sched.T, 0, -1)):
        known = known_step(sched, image, states[i], t, opts)
        guided = guided_step(params, CFG, sched, states[i], t, HEAL, opts)
        assert torch.equal(states[i + 1][~regen], known[~regen])
        assert torch.equal(states[i + 1][regen], guided[regen])


def test_batch_items_have_independent_streams(params, sched, image):
    batch = torch.stack([image, image])
    ones = np.ones((2, 8, 8))
    out = promptable_sample(params, CFG, sched, batch, ones, HEAL, SamplerOptions(seed=0))
    assert not torch.equal(out[0], out[1])
    single = promptable_sample(params, CFG, sched, image, ones[0], HEAL, SamplerOptions(seed=0),
                               items=[1])
    assert torch.allclose(single, out[1], atol=1e-5)


def test_role_streams_are_disjoint():
    a = rng.normal((16,), 0, 0, 0, rng.KNOWN, 5)
    b = rng.normal((16,), 0, 0, 0, rng.GUIDED, 5)
    assert not np.array_equal(a, b)


def test_mask_shape_and_value_errors(params, sched, image):
    with pytest.raises(ShapeError):
        promptable_sample(params, CFG, sched, image, np.zeros((4, 4)), HEAL)
    with pytest.raises(ContractError):
        promptable_sample(params, CFG, sched, image, np.full((8, 8), 0.5), HEAL)


def test_counterfactual_sample(params, sched, image):
    assert counterfactual_sample(params, CFG, sched, image, HEAL, depth=0) is image
    a = counterfactual_sample(params, CFG, sched, image, HEAL, SamplerOptions(seed=2))
    b = counterfactual_sample(params, CFG, sched, image, HEAL, SamplerOptions(seed=2))
    assert torch.equal(a, b) and a.shape == image.shape
    with pytest.raises(RangeError):
        counterfactual_sample(params, CFG, sched, image, HEAL, depth=sched.T + 1)


def test_transfer_with_empty_site(params, sched, image):
    tumor = np.zeros((8, 8))
    tumor[2:4, 2:4] = 1
    healed, regen = tumor_transfer(params, CFG, sched, image, tumor, np.zeros((8, 8)))
    assert torch.equal(healed, regen)
    keep = torch.from_numpy(tumor == 0).expand(4, 8, 8)
    assert torch.equal(healed[keep], image[keep])


def test_random_site_mask_contract():
    brain = generate_sample(PhantomSpec(), 0).brain_mask
    for seed in range(50):
        m = random_site_mask(np.random.default_rng(seed), 32, 32, brain)
        assert m.any() and not (m & ~brain).any()
    a = random_site_mask(np.random.default_rng(1), 32, 32, brain)
    assert np.array_equal(a, random_site_mask(np.random.default_rng(1), 32, 32, brain))
    with pytest.raises(EmptyMaskError):
        random_site_mask(np.random.default_rng(1), 32, 32, np.zeros((32, 32), bool))


def test_site_centres_uniform_over_brain():
    brain = generate_sample(PhantomSpec(), 0).brain_mask
    gen = np.random.default_rng(0)
    centres = np.array([draw_site(gen, 32, 32, brain)[1] for _ in range(1000)])
    cells = (np.floor(centres[:, 0] / 8) * 4 + np.floor(centres[:, 1] / 8)).astype(int)
    observed = np.bincount(cells, minlength=16)
    area = np.array([brain[i * 8:(i + 1) * 8, j * 8:(j + 1) * 8].sum()
                     for i in range(4) for j in range(4)])
    used = area > 0
    assert observed[~used].sum() == 0
    expected = area[used] / area.sum() * 1000
    assert stats.chisquare(observed[used], expected).pvalue > 0.01
