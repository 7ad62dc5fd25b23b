# Four-channel brain phantoms with and without a lesion, written as PGM files.
import sys
from pathlib import Path

from cfdiff.denoiser import ConditionLabel
from cfdiff.pgm import write_mask, write_pgm
from cfdiff.phantom import PhantomSpec, encode_sample, generate_sample

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_phantoms")
out.mkdir(exist_ok=True)
spec = PhantomSpec()

sick = generate_sample(spec, seed=3, force_label=ConditionLabel.UNHEALTHY)
twin = generate_sample(spec, seed=3, force_label=ConditionLabel.HEALTHY)   # same anatomy
print("lesion pixels:", sick.tumor_mask.sum(), " brain pixels:", sick.brain_mask.sum())

names = ["t1", "t1ce", "t2", "flair"]
for c, name in enumerate(names):
    write_pgm(out / f"sick_{name}.pgm", sick.image[c])
    write_pgm(out / f"healthy_{name}.pgm", twin.image[c])
    # mean lesion contrast per channel: T1 darkens, the others brighten
    print(f"{name:6s} lesion shift {(sick.image[c] - twin.image[c])[sick.tumor_mask].mean():+.3f}")
write_mask(out / "tumor_mask.pgm", sick.tumor_mask)
(out / "sick.cfds").write_bytes(encode_sample(sick))
print("wrote", sorted(p.name for p in out.iterdir()))
