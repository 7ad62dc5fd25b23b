# Remove a lesion, then grow a new one at a random site in the brain.
# Usage: python 06_tumor_transfer.py model.cfck [out_dir]
import sys
from pathlib import Path

from cfdiff.checkpoint import load_checkpoint
from cfdiff.config import SampleSection
from cfdiff.denoiser import ConditionLabel
from cfdiff.pgm import write_mask, write_pgm
from cfdiff.phantom import PhantomSpec, generate_sample
from cfdiff.pipeline import Model, transfer

model = Model.from_checkpoint(load_checkpoint(sys.argv[1] if len(sys.argv) > 1
                                              else "demo_model.cfck"))
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_transfer")
out.mkdir(exist_ok=True)

sick = generate_sample(PhantomSpec(), 1_000_001, force_label=ConditionLabel.UNHEALTHY)
r = transfer(model, [sick], SampleSection())
print("healed-residual Dice", r.healed_residual_dice[0], " new-site IoU", r.new_site_iou[0])

write_pgm(out / "a_original_flair.pgm", sick.image[3])
write_mask(out / "b_removal_mask.pgm", r.removal_masks[0])
write_pgm(out / "c_healed_flair.pgm", r.healed[0, 3])
write_mask(out / "d_site_mask.pgm", r.site_masks[0])
write_pgm(out / "e_regenerated_flair.pgm", r.regenerated[0, 3])
print("panels in", out)
