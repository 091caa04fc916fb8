"""Command-line entry point: ``gdsr <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

from . import __version__
from .autograd import GeometryError, NumericError, deterministic, is_deterministic, make_rng
from .config import ConfigError, RunConfig
from .degradation import (
    SYNTH_KINDS,
    DegradationConfig,
    ImageFormatError,
    crop_to_multiple,
    degrade,
    load_dataset,
    load_ppm,
    save_pgm,
    save_ppm,
    write_synthetic_dataset,
)
from .metrics import MetricReport
from .model import GdsrModel, compute_erf, param_breakdown, param_count
from .trainer import (
    Adam,
    CheckpointError,
    load_checkpoint,
    make_pairs,
    save_checkpoint,
    super_resolve,
    train_loop,
)
from .wavelet import dual_group_views, dump_planes, get_filter, rgb_to_y

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageExit(message)


def _echo_config(cfg: RunConfig) -> None:
    for key, value in cfg.items():
        print(f"  {key} = {value}")


def _load_run_config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
        cfg.degrade.seed = args.seed
    print("configuration:")
    _echo_config(cfg)
    r = cfg.model.scale
    images = [crop_to_multiple(img, r) for _, img in load_dataset(args.data)]
    pairs = make_pairs(images, cfg.degrade)
    val_pairs = None
    if args.val_data:
        val_images = [crop_to_multiple(img, r) for _, img in load_dataset(args.val_data)]
        val_pairs = make_pairs(val_images, cfg.degrade, offset=len(images))
    start_step = 0
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.model.cfg != cfg.model:
            raise ConfigError("resume checkpoint was trained with a different model configuration")
        model = ckpt.model
        opt = Adam(model.parameters(), cfg.train)
        ckpt.restore_optimizer(opt)
        start_step = ckpt.step
        print(f"resuming from {args.resume} at step {start_step}")
    else:
        model = GdsrModel(cfg.model, seed=cfg.train.seed)
        opt = Adam(model.parameters(), cfg.train)
    history = train_loop(model, pairs, cfg.train, val_pairs=val_pairs, optimizer=opt,
                         start_step=start_step, log=print)
    out = Path(args.out)
    steps = history.rows[-1]["step"] if history.rows else start_step
    save_checkpoint(out, model, opt, step=steps)
    hist_path = out.with_name(out.name + ".history.csv")
    hist_path.write_text(history.to_csv())
    print(f"wrote {out} and {hist_path} ({len(history.rows)} steps)")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.model
    r = model.cfg.scale
    deg = DegradationConfig(mode=args.mode, scale=r, seed=args.seed)
    report = MetricReport(border_crop=r if args.border is None else args.border)
    for i, (rel, hr) in enumerate(load_dataset(args.data)):
        hr = crop_to_multiple(hr, r)
        report.add(rel, super_resolve(model, degrade(hr, deg, i)), hr)
    print(report.table())
    report_path = Path(args.report) if args.report else Path(args.ckpt).with_suffix(".report.csv")
    report_path.write_text(report.to_csv())
    print(f"wrote {report_path}")
    return EXIT_OK


def cmd_sr(args) -> int:
    model = load_checkpoint(args.ckpt).model
    save_ppm(args.output, super_resolve(model, load_ppm(args.input)))
    return EXIT_OK


def cmd_degrade(args) -> int:
    deg = DegradationConfig(mode=args.mode, scale=args.scale, seed=args.seed)
    save_ppm(args.output, degrade(load_ppm(args.input), deg, args.index))
    return EXIT_OK


def cmd_wavelet(args) -> int:
    filt = get_filter(args.wavelet)
    y = rgb_to_y(load_ppm(args.input)).data
    for line in dump_planes(dual_group_views(y, filt, args.levels), args.outdir):
        print(line)
    return EXIT_OK


def cmd_erf(args) -> int:
    model = load_checkpoint(args.ckpt).model
    erf = compute_erf(model, args.size, args.samples, make_rng(args.seed))
    save_pgm(args.output, erf, bits=16)
    print(f"wrote {args.output}; mass outside centre pixel = {float(erf.sum() - erf.max()):.6g}")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = _load_run_config(args.config).model
    breakdown = param_breakdown(cfg)
    width = max(len(k) for k in breakdown)
    for name, n in breakdown.items():
        print(f"{name:<{width}}  {n:>12,d}")
    total = param_count(cfg)
    built = GdsrModel(cfg).num_parameters() if args.verify else None
    print(f"{'total':<{width}}  {total:>12,d}")
    if built is not None:
        print(f"{'built':<{width}}  {built:>12,d}")
        if built != total:
            return EXIT_NUMERIC
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(print) else EXIT_NUMERIC


def cmd_synth(args) -> int:
    names = write_synthetic_dataset(args.outdir, args.n, args.size, args.seed)
    print(f"wrote {len(names)} images and manifest.txt to {args.outdir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gdsr", description="Global/detail RWKV super-resolution toolkit.")
    p.add_argument("--version", action="version", version=f"gdsr {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on a manifest directory")
    t.add_argument("--config", help="key = value run configuration")
    t.add_argument("--data", required=True, help="directory with manifest.txt of HR images")
    t.add_argument("--val-data", help="held-out directory evaluated after each validation epoch")
    t.add_argument("--out", required=True, help="checkpoint path; history goes to <out>.history.csv")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--mode", choices=("bicubic", "cdm"), default="bicubic")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--border", type=int, help="pixels cropped per side (default: scale)")
    e.add_argument("--report", help="CSV path (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sr", help="super-resolve one P6 image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_sr)

    d = sub.add_parser("degrade", help="synthesize an LR image")
    d.add_argument("--mode", choices=("bicubic", "cdm"), required=True)
    d.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--index", type=int, default=0, help="image index mixed into the seed")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.set_defaults(func=cmd_degrade)

    w = sub.add_parser("wavelet", help="dump dual-group subbands of the luma at each loss scale")
    w.add_argument("--input", required=True)
    w.add_argument("--levels", type=int, default=2)
    w.add_argument("--wavelet", default="sym19", help="haar, a bundled name, or a coefficient file")
    w.add_argument("--outdir", required=True)
    w.set_defaults(func=cmd_wavelet)

    r = sub.add_parser("erf", help="effective receptive field map as a 16-bit graymap")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--size", type=int, default=32)
    r.add_argument("--samples", type=int, default=4)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--output", required=True)
    r.set_defaults(func=cmd_erf)

    c = sub.add_parser("params", help="closed-form parameter count with per-module breakdown")
    c.add_argument("--config")
    c.add_argument("--verify", action="store_true", help="also build the model and count its tensors")
    c.set_defaults(func=cmd_params)

    st = sub.add_parser("selftest", help="gradient, WKV and wavelet self checks")
    st.set_defaults(func=cmd_selftest)

    sy = sub.add_parser("synth", help=f"write procedural HR images ({', '.join(SYNTH_KINDS)})")
    sy.add_argument("--outdir", required=True)
    sy.add_argument("--n", type=int, default=4)
    sy.add_argument("--size", type=int, default=48)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageExit:
        return EXIT_USAGE
    try:
        ctx = deterministic() if is_deterministic() else contextlib.nullcontext()
        with ctx:
            return args.func(args)
    except ConfigError as exc:
        print(f"gdsr: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"gdsr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ImageFormatError, CheckpointError, GeometryError, ValueError, KeyError) as exc:
        print(f"gdsr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
