"""Command-line interface.

Subcommands: synth, register, train, infer, eval, gradcheck, export-pgm.
Exit codes: 0 success, 2 usage error, 3 data/shape error, 4 numerical
failure. Every failure prints one line: ``error: <category>: <reason>``.
Every run that produces outputs also writes ``run.cfg`` with the fully
resolved configuration.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import crn
from . import diffeo
from . import engine
from . import formats
from . import gradcheck
from . import metrics
from . import pyramid
from . import synth
from .errors import DataError, LapregError, NumericalError, UsageError
from .fields import as_field, check_displacement
from .kernels import BACKEND

MODES = {"diffeo": diffeo.DIFFEO, "disp": diffeo.DISPLACEMENT}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_size(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"bad size {text!r}, expected HxW or HxWxD")
    if len(dims) not in (2, 3) or any(d < 1 for d in dims):
        raise UsageError(f"bad size {text!r}, expected 2 or 3 positive extents")
    return dims


def _parse_steps(text: str) -> int | tuple[int, ...]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"bad step count {text!r}")
    if any(p < 0 for p in parts):
        raise UsageError(f"step counts must be >= 0: {text!r}")
    return parts[0] if len(parts) == 1 else parts


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_field(path: str) -> np.ndarray:
    arr = formats.read_tensor(path)
    if arr.dtype != np.float32:
        raise DataError(f"{path}: expected a float32 field, found labels")
    return as_field(arr, name=str(path))


def _load_labels(path: str, channel: int) -> np.ndarray:
    arr = formats.read_tensor(path)
    if arr.dtype != np.uint16:
        raise DataError(f"{path}: expected a uint16 label field")
    if channel >= arr.shape[0]:
        raise DataError(f"{path}: label channel {channel} out of range for shape {arr.shape}")
    return arr[channel : channel + 1]


def _write_cfg(out: Path, args: dict) -> None:
    cfg = dict(args)
    cfg["backend"] = BACKEND
    formats.write_run_cfg(out / "run.cfg", cfg)


def _train_config(ns, mode: str) -> engine.TrainConfig:
    lam = ns.lam if ns.lam is not None else engine.default_lambda(mode)
    return engine.TrainConfig(
        lr=ns.lr,
        freeze_steps=getattr(ns, "freeze_steps", engine.DESK_FREEZE_STEPS),
        steps_per_level=getattr(ns, "iters", None) or getattr(ns, "steps_per_level", 300),
        seed=ns.seed,
        mode=mode,
        levels=ns.levels,
        lam=lam,
        channels=getattr(ns, "channels", 16),
        blocks=getattr(ns, "resblocks", crn.DEFAULT_BLOCKS),
        timesteps=ns.timesteps,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(ns) -> int:
    out = _out_dir(ns.out)
    pair = synth.synth_pair(ns.seed, _parse_size(ns.size), ns.scale)
    formats.write_tensor(out / "F.lpt", pair.fixed)
    formats.write_tensor(out / "M.lpt", pair.moving)
    # channel 0: fixed segmentation, channel 1: moving segmentation
    formats.write_tensor(out / "seg.lpt", np.concatenate([pair.seg_fixed, pair.seg_moving]))
    formats.write_tensor(out / "vtrue.lpt", pair.velocity)
    _write_cfg(out, {"command": "synth", "seed": ns.seed, "size": ns.size, "scale": ns.scale})
    return 0


def _cmd_register(ns) -> int:
    out = _out_dir(ns.out)
    fixed = _load_field(ns.fixed)
    moving = _load_field(ns.moving)
    mode = MODES[ns.mode]
    cfg = _train_config(ns, mode)
    seg_f = _load_labels(ns.fixed_seg, 0) if ns.fixed_seg else None
    seg_m = _load_labels(ns.moving_seg, 1 if ns.moving_seg == ns.fixed_seg else 0) if ns.moving_seg else None
    transform, report = engine.register_direct(
        fixed, moving, cfg, seg_fixed=seg_f, seg_moving=seg_m
    )
    formats.write_tensor(out / "disp.lpt", transform.disp_array)
    formats.write_tensor(out / "warped.lpt", pyramid.warp(moving, transform.disp_array))
    metrics.write_metrics_csv(out / "metrics.csv", [report])
    _write_cfg(out, {"command": "register", "fixed": ns.fixed, "moving": ns.moving,
                     "mode": ns.mode, **cfg.to_dict()})
    return 0


def _cmd_train(ns) -> int:
    out = _out_dir(ns.out)
    data = Path(ns.data)
    pair_dirs = sorted(d for d in data.iterdir() if d.is_dir() and (d / "F.lpt").exists())
    if not pair_dirs:
        raise DataError(f"{ns.data}: no pair directories with F.lpt/M.lpt found")
    pairs = [(_load_field(d / "F.lpt"), _load_field(d / "M.lpt")) for d in pair_dirs]
    mode = MODES[ns.mode]
    cfg = _train_config(ns, mode)
    params, rows = engine.train_coarse_to_fine(pairs, cfg)
    formats.write_checkpoint(out / "checkpoint.lpc", params,
                             extra={"timesteps": cfg.timesteps, "seed": cfg.seed})
    engine.write_train_log(out / "train_log.csv", rows)
    _write_cfg(out, {"command": "train", "data": ns.data, "pairs": len(pairs), **cfg.to_dict()})
    return 0


def _cmd_infer(ns) -> int:
    out = _out_dir(ns.out)
    params, config = formats.read_checkpoint(ns.ckpt)
    fixed = _load_field(ns.fixed)
    moving = _load_field(ns.moving)
    timesteps = int(config.get("timesteps", diffeo.DEFAULT_TIMESTEPS))
    t0 = time.perf_counter()
    results = crn.lapirn_forward(params, fixed, moving, timesteps)
    seconds = time.perf_counter() - t0
    final = results[-1]
    transform = diffeo.Transform(
        disp=final.transform.disp.value, kind=final.transform.kind
    )
    report = metrics.evaluate_transform(transform, seconds)
    formats.write_tensor(out / "disp.lpt", transform.disp_array)
    formats.write_tensor(out / "warped.lpt", final.warped.value)
    metrics.write_metrics_csv(out / "metrics.csv", [report])
    _write_cfg(out, {"command": "infer", "ckpt": ns.ckpt, "fixed": ns.fixed,
                     "moving": ns.moving, "timesteps": timesteps})
    return 0


def _cmd_eval(ns) -> int:
    disp = _load_field(ns.disp)
    seg_fixed = _load_labels(ns.fixed_seg, 0)
    moving_channel = 1 if ns.moving_seg == ns.fixed_seg else 0
    seg_moving = _load_labels(ns.moving_seg, moving_channel)
    check_displacement(disp, seg_fixed, what=str(ns.disp))
    transform = diffeo.Transform(disp=disp, kind=diffeo.DISPLACEMENT)
    report = metrics.evaluate_transform(
        transform, seconds=0.0, seg_fixed=seg_fixed, seg_moving=seg_moving
    )
    out_path = Path(ns.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_metrics_csv(out_path, [report])
    _write_cfg(out_path.parent, {"command": "eval", "disp": ns.disp,
                                 "fixed_seg": ns.fixed_seg, "moving_seg": ns.moving_seg,
                                 "out": ns.out})
    return 0


def _cmd_gradcheck(ns) -> int:
    results = gradcheck.run(op=ns.op)
    failed = False
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{status} {r.op} seed={r.seed} scaled_err={r.max_err:.4f}")
        failed |= not r.passed
    if failed:
        raise NumericalError("gradient check failed")
    return 0


def _cmd_export_pgm(ns) -> int:
    arr = formats.read_tensor(ns.input)
    planes = arr.reshape((-1,) + arr.shape[-2:])
    if not 0 <= ns.slice < planes.shape[0]:
        raise DataError(f"slice {ns.slice} out of range [0, {planes.shape[0]})")
    formats.write_pgm(ns.out, planes[ns.slice])
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="lapreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic pair with ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", required=True, help="HxW or HxWxD")
    p.add_argument("--scale", type=float, default=3.0, help="max displacement in voxels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("register", help="direct per-pair registration (no network)")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--mode", choices=sorted(MODES), default="diffeo")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="smoothness weight (default 4 diffeo / 1 disp)")
    p.add_argument("--timesteps", type=int, default=diffeo.DEFAULT_TIMESTEPS)
    p.add_argument("--iters", type=_parse_steps, default=(2000, 800, 300),
                   help="steps per level, single int or comma list")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixed-seg", default=None)
    p.add_argument("--moving-seg", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("train", help="coarse-to-fine network training")
    p.add_argument("--data", required=True, help="directory of pair subdirectories")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--resblocks", type=int, default=crn.DEFAULT_BLOCKS)
    p.add_argument("--freeze-steps", type=int, default=engine.DESK_FREEZE_STEPS)
    p.add_argument("--steps-per-level", type=_parse_steps, default=300)
    p.add_argument("--mode", choices=sorted(MODES), default="diffeo")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--timesteps", type=int, default=diffeo.DEFAULT_TIMESTEPS)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="one forward pass of a trained network")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="metrics from a displacement and two segmentations")
    p.add_argument("--disp", required=True)
    p.add_argument("--fixed-seg", required=True)
    p.add_argument("--moving-seg", required=True)
    p.add_argument("--out", required=True, help="metrics.csv path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--op", default=None, choices=gradcheck.OP_NAMES)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("export-pgm", help="write a 2-D slice as binary PGM")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--slice", type=int, default=0,
                   help="index into the stacked (channel x depth) 2-D planes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_pgm)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        return ns.func(ns)
    except LapregError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return DataError.exit_code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
