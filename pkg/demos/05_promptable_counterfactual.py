# Heal a lesion inside a mask prompt and segment the difference, compared with
# the unprompted baseline. Usage: python 05_promptable_counterfactual.py model.cfck
import sys

import numpy as np

from cfdiff.checkpoint import load_checkpoint
from cfdiff.config import SampleSection
from cfdiff.denoiser import ConditionLabel
from cfdiff.phantom import PhantomSpec, generate_dataset
from cfdiff.pipeline import Model, evaluate

model = Model.from_checkpoint(load_checkpoint(sys.argv[1] if len(sys.argv) > 1
                                              else "demo_model.cfck"))
samples = [s for s in generate_dataset(PhantomSpec(), 24, 0.5, seed=1_000_000)
           if s.label == ConditionLabel.UNHEALTHY]
sc = SampleSection(batch_size=12)

prompted = evaluate(model, samples, sc, prompted=True)
baseline = evaluate(model, samples, sc, prompted=False)
print(f"{len(samples)} unhealthy slices")
print(f"prompted   mean Dice {prompted.dice.mean():.3f}  IoU {prompted.iou.mean():.3f}")
print(f"unprompted mean Dice {baseline.dice.mean():.3f}  IoU {baseline.iou.mean():.3f}")

# pixels outside the prompt are returned untouched
keep = ~prompted.prompts[:, None].repeat(4, 1)
images = np.stack([s.image for s in samples])
print("max change outside prompt:", np.abs(prompted.counterfactual - images)[keep].max())
