"""Command-line surface: synth, train, deblur, eval, gradcheck, make-sharp.

Exit codes: 0 success, 1 usage error, 2 runtime/I-O error, 3 verification
failure. Every subcommand echoes its effective configuration as one JSON line
(and writes it to the output directory when there is one), so a run can be
reproduced byte-for-byte from its log.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .blursynth import SynthSpec, load_pairs, make_sharp_dir, synth_dataset
from .checkpoint import CheckpointError, load_checkpoint
from .codec import decode, encode
from .diffusion import sample
from .imageio import read_image, write_image
from .metrics import psnr, ssim
from .training import PairDataset, TrainConfig, model_from_checkpoint, train_loop
from .verify import run_gradcheck, threshold_for

USAGE_ERROR, RUNTIME_ERROR, VERIFY_ERROR = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        raise SystemExit(self.prog + ": error: " + message) from None


def _echo_config(cfg: dict, out_dir: Path | None) -> None:
    line = json.dumps(cfg, sort_keys=True)
    print(f"effective-config: {line}")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config.json", "w") as fh:
            fh.write(line + "\n")


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        support=args.support, max_len=args.max_len, kind=args.kind, seed=args.seed
    )
    out = Path(args.out)
    _echo_config(
        {"command": "synth", "sharp_dir": args.sharp_dir, "out": args.out,
         "count": args.count, **dataclasses.asdict(spec)},
        out,
    )
    manifest = synth_dataset(args.sharp_dir, out, args.count, spec)
    print(f"wrote {manifest['count']} pairs to {out}")
    return 0


def _cmd_make_sharp(args) -> int:
    _echo_config(
        {"command": "make-sharp", "out": args.out, "count": args.count,
         "size": args.size, "seed": args.seed},
        Path(args.out),
    )
    names = make_sharp_dir(args.out, args.count, size=args.size, seed=args.seed)
    print(f"wrote {len(names)} sharp images to {args.out}")
    return 0


def _cmd_train(args) -> int:
    fields = {}
    if args.config:
        with open(args.config) as fh:
            fields.update(json.load(fh))
    for name in ("steps", "seed", "lr", "batch", "T", "k"):
        v = getattr(args, name.lower())
        if v is not None:
            fields[name] = v
    if args.ablation is not None:
        fields["ablation"] = args.ablation
    cfg = TrainConfig.from_dict(fields)
    out = Path(args.out)
    _echo_config({"command": "train", "data": args.data, "out": args.out,
                  "resume": args.resume, **cfg.to_dict()}, out)
    dataset = PairDataset(load_pairs(args.data), dtype=cfg.np_dtype)
    train_loop(dataset, cfg, out_dir=str(out), resume_from=args.resume, log_every=args.log_every)
    print(f"trained {cfg.steps} steps; final checkpoint at {out / 'ckpt_final.bin'}")
    return 0


def _input_images(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in (".pgm", ".ppm"))
        if not files:
            raise FileNotFoundError(f"no .pgm/.ppm images in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(str(path))
    return [path]


def _cmd_deblur(args) -> int:
    ck = load_checkpoint(args.ckpt)
    model, cfg = model_from_checkpoint(ck)
    out = Path(args.out)
    _echo_config(
        {"command": "deblur", "ckpt": args.ckpt, "input": args.input, "out": args.out,
         "seed": args.seed, "trace": bool(args.trace), **cfg.to_dict()},
        out,
    )
    files = _input_images(Path(args.input))
    codec = cfg.codec()
    sched = cfg.schedule()
    imgs = [read_image(f).astype(cfg.np_dtype) for f in files]
    batch = Tensor._wrap(np.stack(imgs))
    z_lq = encode(batch, codec)
    z0_hat, trace = sample(z_lq, sched, model, args.seed, keep_trace=bool(args.trace))
    restored = np.clip(decode(z0_hat, codec).data, 0.0, 1.0)
    for i, f in enumerate(files):
        write_image(out / f.name, restored[i])
    if args.trace:
        for t, z_s in trace:
            frames = np.clip(decode(z_s, codec).data, 0.0, 1.0)
            for i, f in enumerate(files):
                tdir = out / "trace" / f.stem
                tdir.mkdir(parents=True, exist_ok=True)
                write_image(tdir / f"step_{t:04d}.pgm", frames[i])
    print(f"deblurred {len(files)} image(s) into {out}")
    return 0


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def _cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    preds = {p.name: p for p in pred_dir.iterdir() if p.suffix in (".pgm", ".ppm")}
    gts = {p.name: p for p in gt_dir.iterdir() if p.suffix in (".pgm", ".ppm")}
    if not preds or not gts or not (set(preds) & set(gts)):
        raise FileNotFoundError("no matching image filenames between pred and gt dirs")
    unmatched = set(preds) ^ set(gts)
    if unmatched:
        raise ValueError(f"unmatched filenames: {sorted(unmatched)[:5]}")
    out = Path(args.out)
    _echo_config({"command": "eval", "pred_dir": args.pred_dir, "gt_dir": args.gt_dir,
                  "out": args.out}, out.parent if out.suffix else out)
    rows = []
    for name in sorted(preds):
        a = read_image(preds[name])
        b = read_image(gts[name])
        rows.append((name, psnr(a, b), ssim(a, b)))
    csv_path = out if out.suffix else out / "quality.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    with open(csv_path, "w") as fh:
        fh.write("path,psnr_db,ssim\n")
        for name, p, s in rows:
            fh.write(f"{name},{_fmt(p)},{_fmt(s)}\n")
        fh.write(f"mean,{_fmt(mean_psnr)},{_fmt(mean_ssim)}\n")
    print(f"mean psnr_db={_fmt(mean_psnr)} ssim={_fmt(mean_ssim)} over {len(rows)} image(s)")
    return 0


def _cmd_gradcheck(args) -> int:
    names = None if args.ops == "all" else [s.strip() for s in args.ops.split(",") if s.strip()]
    _echo_config({"command": "gradcheck", "ops": args.ops, "seeds": args.seeds}, None)
    results = run_gradcheck(names, seeds=args.seeds)
    failed = False
    for name, err in results.items():
        thr = threshold_for(name)
        ok = err <= thr
        failed |= not ok
        print(f"{name:<14s} max_rel_err={err:.3e} threshold={thr:.0e} {'PASS' if ok else 'FAIL'}")
    return VERIFY_ERROR if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="blurkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[], help="synthesize a paired blur dataset")
    s.add_argument("--sharp-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--support", type=int, default=9)
    s.add_argument("--max-len", type=int, default=13)
    s.add_argument("--kind", choices=("uniform", "regional"), default="uniform")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=_cmd_synth)

    s = sub.add_parser("make-sharp", help="render synthetic sharp scenes")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=_cmd_make_sharp)

    s = sub.add_parser("train", help="jointly train kernel predictor and denoiser")
    s.add_argument("--data", required=True, help="dataset dir containing manifest.json")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON file of training-config fields")
    s.add_argument("--ablation", choices=("full", "no_eac", "no_sd"))
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--t", type=int, dest="t", help="diffusion steps T")
    s.add_argument("--k", type=int)
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--log-every", type=int, default=0)
    s.set_defaults(fn=_cmd_train)

    s = sub.add_parser("deblur", help="run guided sampling on blurry input")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True, help="image file or directory")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace", action="store_true", help="write per-step guidance images")
    s.set_defaults(fn=_cmd_deblur)

    s = sub.add_parser("eval", help="PSNR/SSIM against ground truth, paired by filename")
    s.add_argument("--pred-dir", required=True)
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--out", required=True, help="CSV path or directory")
    s.set_defaults(fn=_cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference verification of the op set")
    s.add_argument("--ops", default="all", help="'all' or comma-separated op names")
    s.add_argument("--seeds", type=int, default=3)
    s.set_defaults(fn=_cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if isinstance(e.code, str):
            print(e.code, file=sys.stderr)
            return USAGE_ERROR
        return USAGE_ERROR if e.code else 0
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError, CheckpointError, FloatingPointError) as e:
        print(f"blurkit: error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
