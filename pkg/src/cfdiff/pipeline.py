"""Segmentation, evaluation and tumour-transfer workflows on phantom corpora.

These compose the sampler and the segmentation pipeline over batches of
phantoms and are shared by the CLI and the acceptance harness. Images enter
and leave in the phantom intensity range [0, 1]; conversion to the model's
[-1, 1] range happens here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from . import rng
from .checkpoint import Checkpoint
from .config import SampleSection
from .denoiser import ConditionLabel, DenoiserConfig, ParamStore
from .errors import ContractError, DataError
from .phantom import PhantomSample, decode_sample, from_model_range, to_model_range
from .sampler import (GuidanceSpec, SamplerOptions, counterfactual_sample, promptable_sample,
                      random_site_mask)
from .schedule import NoiseSchedule, build_schedule
from .segmentation import SegmentationResult, dice, iou, segment

# Table 1 of the source study, BRATS2021 at 128x128; context only
PAPER_TABLE1 = {
    "promptable+transformer": {"mean_iou": 0.653, "mean_dice": 0.785},
    "promptable+unet": {"mean_iou": 0.647, "mean_dice": 0.772},
    "counterfactual+transformer": {"mean_iou": 0.366, "mean_dice": 0.479},
    "counterfactual+unet": {"mean_iou": 0.344, "mean_dice": 0.475},
}


@dataclass
class Model:
    params: ParamStore
    cfg: DenoiserConfig
    schedule: NoiseSchedule

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Model":
        return cls(ckpt.params, ckpt.denoiser, build_schedule(**ckpt.schedule))

    def check(self, samples) -> None:
        try:
            self.cfg.check_image(samples[0].image.shape)
        except ContractError as exc:
            raise ContractError(f"checkpoint ({self.cfg.backend}) does not fit the data: {exc}")


def sampler_options(sc: SampleSection, stream: int = 0) -> SamplerOptions:
    return SamplerOptions(seed=sc.seed, clip_x0=sc.clip_x0, known_region_mode=sc.known_region_mode,
                          record_trajectory=False, stream=stream)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    mask = np.asarray(mask, bool)
    if radius <= 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool), iterations=radius)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    mask = np.asarray(mask, bool)
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool), iterations=radius)


def bbox_mask(mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(mask, dtype=bool)
    if mask.any():
        rows, cols = np.flatnonzero(mask.any(1)), np.flatnonzero(mask.any(0))
        out[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] = True
    return out


def auto_prompt(sample: PhantomSample, dilation: int = 2) -> np.ndarray:
    """Dilated bounding box of the ground-truth lesion.

    Without a lesion the prompt is the brain shrunk by the same margin: keeping
    the brain outline as known context stops the sampler from redrawing the
    brain boundary, which would otherwise show up as a rim-shaped "lesion".
    """
    if sample.tumor_mask is not None and sample.tumor_mask.any():
        return dilate(bbox_mask(sample.tumor_mask), dilation)
    if sample.brain_mask is not None:
        inner = erode(sample.brain_mask, dilation)
        return inner if inner.any() else sample.brain_mask.copy()
    return np.ones(sample.image.shape[1:], bool)


def _chunks(n: int, size: int):
    for start in range(0, n, max(1, size)):
        yield slice(start, min(n, start + size))


def _as_model(images01) -> torch.Tensor:
    return torch.as_tensor(to_model_range(np.asarray(images01, np.float32)))


def _as_unit(x: torch.Tensor) -> np.ndarray:
    return np.clip(from_model_range(x.numpy().astype(np.float64)), 0.0, 1.0)


def heal(model: Model, images01, masks, sc: SampleSection, items, stream: int = 0,
         target=ConditionLabel.HEALTHY, scale: float | None = None) -> np.ndarray:
    """Promptable counterfactuals for a batch; returns [0, 1] images."""
    g = GuidanceSpec(target, sc.guidance_scale if scale is None else scale)
    opts = sampler_options(sc, stream)
    images01, masks, items = np.asarray(images01), np.asarray(masks), np.asarray(items)
    out = np.empty(images01.shape)
    for sl in _chunks(len(images01), sc.batch_size):
        x = promptable_sample(model.params, model.cfg, model.schedule, _as_model(images01[sl]),
                              masks[sl].astype(np.float32), g, opts, items[sl])
        out[sl] = _as_unit(x)
    return out


def baseline(model: Model, images01, sc: SampleSection, items) -> np.ndarray:
    """Unprompted counterfactuals (partial noising then guided denoising)."""
    g = GuidanceSpec(ConditionLabel.HEALTHY, sc.guidance_scale)
    opts = sampler_options(sc)
    images01, items = np.asarray(images01), np.asarray(items)
    out = np.empty(images01.shape)
    for sl in _chunks(len(images01), sc.batch_size):
        x = counterfactual_sample(model.params, model.cfg, model.schedule, _as_model(images01[sl]),
                                  g, opts, sc.noising_depth, items[sl])
        out[sl] = _as_unit(torch.as_tensor(x))
    return out


def segment_pairs(factual01, counterfactual01, sc: SampleSection) -> list[SegmentationResult]:
    return [segment(f, c, min_contrast=sc.min_contrast)
            for f, c in zip(factual01, counterfactual01)]


@dataclass
class SliceEval:
    counterfactual: np.ndarray
    prompts: np.ndarray | None
    results: list
    dice: np.ndarray
    iou: np.ndarray


def evaluate(model: Model, samples, sc: SampleSection, prompted: bool, items=None) -> SliceEval:
    """Segment every sample and score it against its ground-truth lesion."""
    model.check(samples)
    items = np.arange(len(samples)) if items is None else np.asarray(items)
    images = np.stack([s.image for s in samples])
    if prompted:
        prompts = np.stack([auto_prompt(s, sc.prompt_dilation) for s in samples])
        cf = heal(model, images, prompts, sc, items)
    else:
        prompts = None
        cf = baseline(model, images, sc, items)
    results = segment_pairs(images, cf, sc)
    gts = [s.tumor_mask for s in samples]
    return SliceEval(
        counterfactual=cf, prompts=prompts, results=results,
        dice=np.array([dice(r.mask, m) for r, m in zip(results, gts)]),
        iou=np.array([iou(r.mask, m) for r, m in zip(results, gts)]),
    )


@dataclass
class TransferResult:
    removal_masks: np.ndarray
    site_masks: np.ndarray
    healed: np.ndarray
    regenerated: np.ndarray
    healed_residual_dice: np.ndarray
    new_site_iou: np.ndarray


def transfer(model: Model, samples, sc: SampleSection, items=None) -> TransferResult:
    """Remove each lesion, then grow a new one at a random site inside the brain.

    Residual tumour is scored by segmenting the healed image once more
    (prompted with the same removal mask) against the original lesion; the
    new lesion is scored by segmenting the regenerated image against the healed
    one and comparing with the site mask.
    """
    model.check(samples)
    if any(s.tumor_mask is None or not s.tumor_mask.any() for s in samples):
        raise ContractError("tumour transfer needs unhealthy inputs with a lesion mask")
    items = np.arange(len(samples)) if items is None else np.asarray(items)
    H, W = samples[0].image.shape[1:]
    images = np.stack([s.image for s in samples])
    removal = np.stack([dilate(s.tumor_mask, sc.prompt_dilation) for s in samples])
    sites = np.stack([
        random_site_mask(rng.stream(sc.seed, rng.SITE, int(i)), H, W,
                         s.brain_mask if s.brain_mask is not None else np.ones((H, W), bool))
        for s, i in zip(samples, items)
    ])
    healed = heal(model, images, removal, sc, items, stream=1)
    regenerated = heal(model, healed, sites, sc, items, stream=2,
                       target=ConditionLabel.UNHEALTHY, scale=sc.generation_scale)
    recheck = heal(model, healed, removal, sc, items, stream=3)
    residual = [segment(h, c, min_contrast=sc.min_contrast).mask
                for h, c in zip(healed, recheck)]
    grown = [segment(r, h, min_contrast=sc.min_contrast).mask
             for r, h in zip(regenerated, healed)]
    return TransferResult(
        removal_masks=removal, site_masks=sites, healed=healed, regenerated=regenerated,
        healed_residual_dice=np.array([dice(r, s.tumor_mask) for r, s in zip(residual, samples)]),
        new_site_iou=np.array([iou(g, m) for g, m in zip(grown, sites)]),
    )


def corpus_files(data_dir) -> list[Path]:
    files = sorted(Path(data_dir).glob("sample_*.cfds"))
    if not files:
        raise DataError(f"no sample_*.cfds files in {data_dir}")
    return files


def load_corpus(data_dir) -> list[PhantomSample]:
    return [decode_sample(f.read_bytes()) for f in corpus_files(data_dir)]


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"missing {path}")
    return json.loads(path.read_text())
