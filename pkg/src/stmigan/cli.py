"""``stmigan`` command line: data synthesis, masking, training, baselines, generation and evaluation.

Exit codes: 0 ok, 2 usage, 3 contract or format error, 4 numeric failure.
Failures print exactly one line to stderr, prefixed with the error code.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import baselines, training
from .data import (
    MotionDataset, get_topology, read_dataset, read_mask, read_sequence, write_dataset, write_mask, write_sequence,
)
from .errors import ContractError, FormatError, StmiError
from .masks import PATTERNS, make_mask
from .spectral import l2_coords, windowed_report, write_reports_csv
from .synth import ARCHETYPES, synth_dataset


def _threads() -> int:
    raw = os.environ.get("STMI_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ContractError(f"STMI_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ContractError("STMI_THREADS must be >= 1")
    return n


def parse_windows(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(","):
        try:
            a, b = (float(v) for v in part.strip().split("-"))
        except ValueError:
            raise ContractError(f"bad window {part!r}; expected start-end in seconds") from None
        if not 0 <= a < b:
            raise ContractError(f"window {part!r} must satisfy 0 <= start < end")
        out.append((a, b))
    return out


# ------------------------------------------------------------ subcommands


def cmd_synth(args) -> int:
    archetypes = tuple(a.strip() for a in args.archetypes.split(","))
    d = synth_dataset(args.sequences, args.frames, get_topology(args.topology), archetypes, args.seed, args.fps)
    root = write_dataset(d, args.out)
    print(f"wrote {len(d)} sequences to {root}")
    return 0


def cmd_mask(args) -> int:
    d = read_dataset(args.input, workers=_threads())
    out = Path(args.out or args.input)
    out.mkdir(parents=True, exist_ok=True)
    for i, (name, s) in enumerate(zip(d.names, d.sequences)):
        m = make_mask(args.pattern, s.n_frames, s.n_joints, args.rate, args.seed + i, d.topology)
        target = out / f"{name}.mmsk"
        target.parent.mkdir(parents=True, exist_ok=True)
        write_mask(m, target)
    print(f"wrote {len(d)} {args.pattern} masks to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = training.load_config(args.config) if args.config else training.ModelConfig()
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    data = read_dataset(args.data, workers=_threads())
    every = max(cfg.steps // 20, 1)

    def progress(step, r):
        if not args.quiet and (step % every == 0 or step == cfg.steps):
            print(f"step {step} rec={r.rec:.3f} disc={r.disc:.4f} gen={r.gen:.4f} total={r.total:.4f}", flush=True)

    model, log = training.train(cfg, data, progress=progress)
    out = training.save_checkpoint(model, cfg, args.out)
    log.write(out)
    print(f"checkpoint and logs written to {out}")
    return 0


def _read_set(path) -> MotionDataset:
    return read_dataset(path, workers=_threads())


def cmd_eval_metrics(args) -> int:
    gt, gen = _read_set(args.gt), _read_set(args.gen)
    if sorted(gt.names) != sorted(gen.names):
        raise ContractError("gt and gen directories hold different sequence names")
    if gt.topology.name != gen.topology.name or gt.fps != gen.fps:
        raise ContractError("gt and gen differ in topology or fps")
    order = sorted(gt.names)
    a = np.stack([gt.sequences[gt.names.index(n)].coords for n in order])
    b = np.stack([gen.sequences[gen.names.index(n)].coords for n in order])
    reports = windowed_report(a, b, gt.fps, parse_windows(args.windows), args.eps)
    write_reports_csv(args.out, reports)
    print(training.render_table(["window_s", "psent", "pskl_gt_gen", "pskl_gen_gt", "l2_mm"], [
        [f"{r.window_s[0]:g}-{r.window_s[1]:g}", r.psent, r.pskl_gt_gen, r.pskl_gen_gt, r.l2_mm] for r in reports
    ]), end="")
    return 0


def _checkpoint_map(text: str | None) -> dict[str, str]:
    out = {}
    for part in (text or "").split(","):
        if part.strip():
            if "=" not in part:
                raise ContractError(f"--checkpoints entries look like method=PATH, got {part!r}")
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def cmd_eval_occlusion(args) -> int:
    data = _read_set(args.data)
    methods = tuple(m.strip() for m in args.methods.split(","))
    cfg = training.load_config(args.config) if args.config else training.ModelConfig()
    ckpts = _checkpoint_map(args.checkpoints)
    models = {}
    for method in methods:
        if method in ckpts:
            models[method], ckpt_cfg = training.load_checkpoint(ckpts[method])
            cfg = replace(cfg, crop_frames=ckpt_cfg.crop_frames)
        elif method != "linint" and not args.config:
            raise ContractError(f"method {method} needs a checkpoint (or --config to train one)")
    patterns = tuple(p.strip() for p in args.patterns.split(","))
    table = training.occlusion_experiment(data, cfg, patterns, args.rate, models, methods)
    lines = ["pattern," + ",".join(methods)]
    lines += [p + "," + ",".join(repr(row[m]) for m in methods) for p, row in table.items()]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    print(training.render_table(["pattern", *methods], [[p, *[row[m] for m in methods]] for p, row in table.items()]),
          end="")
    return 0


def cmd_baseline(args) -> int:
    data = _read_set(args.data)
    fn = {"zerovel": baselines.zero_velocity, "linint": baselines.linear_interpolate}[args.method]
    out_seqs, dists = [], []
    for name, s in zip(data.names, data.sequences):
        m = read_mask(Path(args.mask) / f"{name}.mmsk")
        done = fn(s, m)
        out_seqs.append(done)
        hidden = ~m.joint_visible()
        if hidden.any():
            dists.append(l2_coords(s.coords, done.coords, cell_mask=hidden))
    write_dataset(MotionDataset(data.topology, out_seqs, list(data.splits), list(data.names)), args.out)
    mean = float(np.mean(dists)) if dists else 0.0
    print(f"{args.method}: mean L2 on occluded joints {mean:.6f} mm over {len(dists)} sequences")
    return 0


def cmd_generate(args) -> int:
    model, cfg = training.load_checkpoint(args.checkpoint)
    seed_seq = read_sequence(args.seed_seq, get_topology(cfg.topology))
    if args.mask and args.predict_seconds is not None:
        raise ContractError("--mask and --predict-seconds cannot be combined")
    seconds = 2.0 if args.predict_seconds is None else args.predict_seconds
    n_pred = int(np.floor(seconds * seed_seq.fps + 0.5))
    if args.mask:
        m = read_mask(args.mask)
        if m.shape != seed_seq.coords.shape:
            raise FormatError(f"mask {m.shape} does not match sequence {seed_seq.coords.shape}")
        seq = seed_seq
    else:
        seq, m = training.extend_for_prediction(seed_seq, n_pred)
    out = training.generate(model, seq, m, args.noise_seed)
    write_sequence(out, args.out)
    print(f"wrote {out.n_frames} frames to {args.out}")
    return 0


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stmigan", description="Motion inpainting toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic motion dataset")
    s.add_argument("--sequences", type=int, default=200)
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--fps", type=float, default=12.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--topology", default="h36m17")
    s.add_argument("--archetypes", default="walk,turn,stop_and_go", help=f"comma list from {ARCHETYPES}")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("mask", help="write one occlusion mask per sequence")
    s.add_argument("--pattern", choices=PATTERNS, required=True)
    s.add_argument("--rate", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", default=None, help="defaults to the input directory")
    s.set_defaults(fn=cmd_mask)

    s = sub.add_parser("train", help="train a model from a key=value config")
    s.add_argument("--config", default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=None, help="override the config's step count")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval-metrics", help="windowed PSEnt / PSKL / L2 report")
    s.add_argument("--gt", required=True)
    s.add_argument("--gen", required=True)
    s.add_argument("--windows", default="0-1,1-2,2-3,3-4,0-4")
    s.add_argument("--eps", type=float, default=1e-8)
    s.add_argument("--out", default="metrics.csv")
    s.set_defaults(fn=cmd_eval_metrics)

    s = sub.add_parser("eval-occlusion", help="L2 on occluded joints per pattern and method")
    s.add_argument("--data", required=True)
    s.add_argument("--rate", type=float, default=0.8)
    s.add_argument("--methods", default="linint,nogan,stmi")
    s.add_argument("--checkpoints", default=None, help="method=PATH pairs, comma separated")
    s.add_argument("--patterns", default=",".join(training.OCCLUSION_PATTERNS))
    s.add_argument("--config", default=None, help="train missing learned methods with this config")
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_eval_occlusion)

    s = sub.add_parser("baseline", help="complete masked sequences with a fixed rule")
    s.add_argument("--method", choices=("zerovel", "linint"), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_baseline)

    s = sub.add_parser("generate", help="predict or inpaint one sequence from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--seed-seq", required=True)
    s.add_argument("--predict-seconds", type=float, default=None, help="default 2")
    s.add_argument("--noise-seed", type=int, default=0)
    s.add_argument("--mask", default=None, help="inpaint with this mask instead of predicting")
    s.add_argument("--out", default="generated.mseq")
    s.set_defaults(fn=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(_threads()):
            return args.fn(args)
    except StmiError as e:
        print(f"{e.code}: {' '.join(str(e).split())}", file=sys.stderr)
        return e.exit_code
    except (OSError, UnicodeDecodeError) as e:
        print(f"{FormatError.code}: {' '.join(str(e).split())}", file=sys.stderr)
        return FormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
