# Train a small conditional denoiser for a few hundred steps and save it.
# Pass a step count and an output path; the defaults take about a minute.
import sys
import time

from cfdiff.checkpoint import save_checkpoint
from cfdiff.denoiser import DenoiserConfig
from cfdiff.phantom import PhantomSpec, generate_dataset
from cfdiff.schedule import build_schedule
from cfdiff.trainer import TrainConfig, dataset_arrays, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
path = sys.argv[2] if len(sys.argv) > 2 else "demo_model.cfck"

x, y = dataset_arrays(generate_dataset(PhantomSpec(), 400, healthy_fraction=0.5, seed=0))
cfg = DenoiserConfig(backend="unet", base_width=16)
tc = TrainConfig(learning_rate=1e-3, batch_size=32, steps=steps, log_every=50)
s = build_schedule(200, 5e-4, 0.1)

start = time.time()
ckpt = train(x, y, cfg, tc, s, log_path="demo_loss.log")
print(f"{steps} steps in {time.time() - start:.0f}s, {ckpt.params.num_params()} parameters")
for line in open("demo_loss.log").read().split("\n")[-4:-1]:
    print("  step/loss", line.split("\t"))
save_checkpoint(ckpt, path)
print("saved", path)
