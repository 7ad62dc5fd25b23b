"""``cfdiff`` command line: gen-data, train, segment, transfer, eval.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 contract violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config
from .errors import CfdiffError, ConfigError, ContractError, DataError
from .phantom import VERSION as CFDS_VERSION
from .phantom import decode_sample, encode_sample, generate_dataset
from .pgm import read_mask, write_mask, write_pgm
from .pipeline import (PAPER_TABLE1, Model, auto_prompt, baseline, corpus_files, evaluate, heal,
                       load_corpus, segment_pairs, transfer)
from .schedule import build_schedule
from .segmentation import dice, iou
from .trainer import dataset_arrays, train

log = logging.getLogger("cfdiff")


def _json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.resolved.json").write_text(dump_config(cfg))


def _model(args) -> Model:
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    return Model.from_checkpoint(load_checkpoint(args.checkpoint[0]))


def _input_sample(args):
    if not args.input:
        raise ConfigError("--input is required")
    return decode_sample(Path(args.input).read_bytes())


def cmd_gen_data(cfg: RunConfig, args) -> None:
    out = _out_dir(args)
    if any(out.iterdir()) and not args.force:
        raise DataError(f"{out} exists and is not empty (use --force)")
    if args.force:
        for stale in out.glob("sample_*.cfds"):
            stale.unlink()
    d = cfg.data
    for i, sample in enumerate(generate_dataset(d.phantom, d.n, d.healthy_fraction, d.seed)):
        (out / f"sample_{i:06d}.cfds").write_bytes(encode_sample(sample))
    _json(out / "manifest.json", {"spec": d.phantom.to_dict(), "n": d.n,
                                  "healthy_fraction": d.healthy_fraction, "seed": d.seed,
                                  "format_version": CFDS_VERSION})
    _echo_config(cfg, out)


def cmd_train(cfg: RunConfig, args) -> None:
    if not args.input:
        raise ConfigError("--input <data dir> is required")
    samples = load_corpus(args.input)
    out = _out_dir(args)
    s = build_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    x, y = dataset_arrays(samples)
    ckpt_path, log_path = out / "model.cfck", out / "loss.log"
    resume = None
    if args.resume and ckpt_path.exists():
        resume = load_checkpoint(ckpt_path)
        if resume.denoiser != cfg.model:
            raise ConfigError("checkpoint model config differs from the run config")
        kept = [ln for ln in log_path.read_text().splitlines(keepends=True)
                if int(ln.split("\t")[0]) <= resume.step] if log_path.exists() else []
        log_path.write_text("".join(kept))
    else:
        log_path.write_text("")
    _echo_config(cfg, out)
    ckpt = train(x, y, cfg.model, cfg.train, s, resume=resume, log_path=log_path,
                 checkpoint_path=ckpt_path)
    save_checkpoint(ckpt, ckpt_path)


def _write_channels(out: Path, stem: str, image) -> None:
    for c, ch in enumerate(image):
        write_pgm(out / f"{stem}_c{c}.pgm", ch)


def cmd_segment(cfg: RunConfig, args) -> None:
    model = _model(args)
    sample = _input_sample(args)
    model.check([sample])
    sc = cfg.sample
    prompt = args.prompt or "auto"
    image = sample.image[None].astype(np.float64)
    if prompt == "none":
        mask = None
        cf = baseline(model, image, sc, [0])
    else:
        if prompt == "auto":
            mask = auto_prompt(sample, sc.prompt_dilation)
        else:
            if not Path(prompt).exists():
                raise DataError(f"prompt mask {prompt} not found")
            mask = read_mask(prompt)
            if mask.shape != sample.image.shape[1:]:
                raise ContractError(f"prompt mask {mask.shape} does not match the image")
        cf = heal(model, image, mask[None], sc, [0])
    result = segment_pairs(image, cf, sc)[0]
    out = _out_dir(args)
    _echo_config(cfg, out)
    _write_channels(out, "factual", sample.image)
    _write_channels(out, "counterfactual", cf[0])
    _write_channels(out, "difference", np.abs(sample.image - cf[0]))
    write_mask(out / "mask.pgm", result.mask)
    if mask is not None:
        write_mask(out / "prompt.pgm", mask)
    metrics = {"method": ("counterfactual+" if prompt == "none" else "promptable+")
               + model.cfg.backend,
               "predicted_area": int(result.mask.sum())}
    if sample.brain_mask is not None:
        metrics["predicted_fraction_of_brain"] = float(result.mask.sum() / sample.brain_mask.sum())
    if sample.tumor_mask is not None:
        metrics["dice"] = dice(result.mask, sample.tumor_mask)
        metrics["iou"] = iou(result.mask, sample.tumor_mask)
    _json(out / "metrics.json", metrics)


def cmd_transfer(cfg: RunConfig, args) -> None:
    model = _model(args)
    sample = _input_sample(args)
    if sample.tumor_mask is None or not sample.tumor_mask.any():
        raise ContractError("transfer needs an unhealthy input with a lesion mask")
    r = transfer(model, [sample], cfg.sample)
    out = _out_dir(args)
    _echo_config(cfg, out)
    _write_channels(out, "a_original", sample.image)
    write_mask(out / "b_removal_mask.pgm", r.removal_masks[0])
    _write_channels(out, "c_healed", r.healed[0])
    write_mask(out / "d_site_mask.pgm", r.site_masks[0])
    _write_channels(out, "e_regenerated", r.regenerated[0])
    _json(out / "transfer_metrics.json", {
        "healed_residual_dice": float(r.healed_residual_dice[0]),
        "new_site_iou": float(r.new_site_iou[0]),
    })


def format_table(rows) -> str:
    width = max(len(r["method"]) for r in rows)
    lines = [f"{'method':<{width}}  mean_iou  mean_dice      n"]
    for r in rows:
        lines.append(f"{r['method']:<{width}}  {r['mean_iou']:8.4f}  {r['mean_dice']:9.4f}  "
                     f"{r['n']:5d}")
    return "\n".join(lines) + "\n"


def cmd_eval(cfg: RunConfig, args) -> None:
    if not args.checkpoint:
        raise ConfigError("at least one --checkpoint is required")
    if not args.input:
        raise ConfigError("--input <data dir> is required")
    files = corpus_files(args.input)
    samples, items = [], []
    for i, f in enumerate(files):
        s = decode_sample(f.read_bytes())
        if s.tumor_mask is not None and s.tumor_mask.any():
            samples.append(s)
            items.append(i)
        if len(samples) == cfg.eval.test_n:
            break
    if not samples:
        raise DataError("no slices with a ground-truth lesion to evaluate")
    models = [Model.from_checkpoint(load_checkpoint(p)) for p in args.checkpoint]
    backends = [m.cfg.backend for m in models]
    if len(set(backends)) != len(backends):
        raise ContractError(f"one checkpoint per backend expected, got {backends}")
    rows, per_slice = [], {}
    for model in sorted(models, key=lambda m: m.cfg.backend, reverse=True):
        for prompted in (True, False):
            name = ("promptable+" if prompted else "counterfactual+") + model.cfg.backend
            ev = evaluate(model, samples, cfg.sample, prompted, items)
            rows.append({"method": name, "mean_iou": float(ev.iou.mean()),
                         "mean_dice": float(ev.dice.mean()), "n": len(samples)})
            per_slice[name] = {"dice": ev.dice.tolist(), "iou": ev.iou.tolist()}
    out = _out_dir(args)
    _echo_config(cfg, out)
    _json(out / cfg.eval.metrics_path, {"rows": rows, "paper_reference": PAPER_TABLE1,
                                        "slices": items})
    _json(out / "per_slice.json", per_slice)
    (out / "table1.txt").write_text(format_table(rows))


COMMANDS = {
    "gen-data": (cmd_gen_data, ("data", "seed")),
    "train": (cmd_train, ("train", "seed")),
    "segment": (cmd_segment, ("sample", "seed")),
    "transfer": (cmd_transfer, ("sample", "seed")),
    "eval": (cmd_eval, ("sample", "seed")),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfdiff", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--checkpoint", action="append", help=".cfck file (repeat for eval)")
    p.add_argument("--input", help=".cfds sample, or a corpus directory for train/eval")
    p.add_argument("--prompt", help="binary PGM mask path, 'auto' or 'none' (segment)")
    p.add_argument("--seed", type=int, help="override the seed used by this command")
    p.add_argument("--force", action="store_true", help="overwrite an existing corpus")
    p.add_argument("--resume", action="store_true", help="continue training from <out>/model.cfck")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, (section, key) = COMMANDS[args.command]
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.replace(section, **{key: args.seed})
        func(cfg, args)
    except CfdiffError as exc:
        print(f"cfdiff: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cfdiff: I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
