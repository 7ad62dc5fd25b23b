import numpy as np
import pytest

from cfdiff.config import SampleSection
from cfdiff.denoiser import ConditionLabel, DenoiserConfig, init_params
from cfdiff.errors import ContractError
from cfdiff.phantom import PhantomSpec, generate_dataset, generate_sample
from cfdiff.pipeline import Model, auto_prompt, bbox_mask, dilate, erode, evaluate, heal, transfer
from cfdiff.schedule import build_schedule

TINY = DenoiserConfig(backend="unet", base_width=8, depth=2, embed_dim=8)
SC = SampleSection(batch_size=3)


@pytest.fixture(scope="module")
def model():
    return Model(init_params(TINY, 0), TINY, build_schedule(6, 1e-3, 0.2))


@pytest.fixture(scope="module")
def sick():
    return [s for s in generate_dataset(PhantomSpec(), 10, 0.5, seed=40)
            if s.label == ConditionLabel.UNHEALTHY][:4]


def test_bbox_and_dilate():
    m = np.zeros((9, 9), bool)
    m[2, 3] = m[5, 6] = True
    box = bbox_mask(m)
    assert box.sum() == 4 * 4 and box[2:6, 3:7].all()
    assert dilate(m, 1).sum() == 18
    assert not dilate(np.zeros((4, 4), bool), 3).any()
    assert not bbox_mask(np.zeros((4, 4), bool)).any()
    assert np.array_equal(erode(dilate(m, 1), 1), m)


def test_auto_prompt_covers_lesion(sick):
    for s in sick:
        p = auto_prompt(s, 2)
        assert p[s.tumor_mask].all()
        assert p.sum() >= bbox_mask(s.tumor_mask).sum()


def test_auto_prompt_falls_back_to_brain_interior():
    s = generate_sample(PhantomSpec(), 7, force_label=ConditionLabel.HEALTHY)
    p = auto_prompt(s, 2)
    assert p.any() and not (p & ~s.brain_mask).any()
    assert np.array_equal(p, erode(s.brain_mask, 2))
    assert np.array_equal(auto_prompt(s, 0), s.brain_mask)


def test_heal_chunking_does_not_change_results(model, sick):
    images = np.stack([s.image for s in sick])
    masks = np.stack([auto_prompt(s) for s in sick])
    a = heal(model, images, masks, SC, np.arange(4))
    b = heal(model, images, masks, SampleSection(batch_size=1), np.arange(4))
    np.testing.assert_allclose(a, b, atol=1e-5)
    outside = ~masks[:, None].repeat(4, 1)
    np.testing.assert_allclose(a[outside], images[outside], atol=1e-5)


def test_evaluate_shapes_and_determinism(model, sick):
    a = evaluate(model, sick, SC, prompted=True)
    b = evaluate(model, sick, SC, prompted=True)
    assert a.dice.shape == a.iou.shape == (4,)
    assert np.array_equal(a.counterfactual, b.counterfactual)
    u = evaluate(model, sick, SC, prompted=False)
    assert u.prompts is None and np.all((u.dice >= 0) & (u.dice <= 1))


def test_transfer_contract(model, sick):
    r = transfer(model, sick[:2], SC)
    for s, site in zip(sick, r.site_masks):
        assert site.any() and not (site & ~s.brain_mask).any()
    assert r.healed.shape == r.regenerated.shape == (2, 4, 32, 32)
    healthy = generate_sample(PhantomSpec(), 7, force_label=ConditionLabel.HEALTHY)
    with pytest.raises(ContractError):
        transfer(model, [healthy], SC)


def test_model_rejects_mismatched_images():
    cfg = DenoiserConfig(backend="unet", channels_in=3, base_width=8, depth=2, embed_dim=8)
    m = Model(init_params(cfg, 0), cfg, build_schedule(4))
    with pytest.raises(ContractError):
        m.check([generate_sample(PhantomSpec(), 1)])
