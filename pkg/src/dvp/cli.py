"""Command-line interface: ``dvp <command> ...``.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error,
3 verification failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import imageio, plotting, trainer
from .checkpoint import CheckpointError
from .config import PROFILES, ConfigError, format_config, parse_config
from .eval import metrics, verify
from .network import DnCNN
from .noise import VarianceModel, eval_f
from .synthetic import synthetic_set

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
TILE = 8
logger = logging.getLogger("dvp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(lines, out=None) -> None:
    out = sys.stdout if out is None else out
    for line in lines:
        out.write(line + "\n")


def load_training_data(cfg) -> trainer.Dataset:
    """``dataset`` is a directory of PGM/PNG files or ``synthetic:count:size:seed``."""
    if not cfg.dataset:
        raise UsageError("no dataset configured (set 'dataset = <dir>' in the config)")
    if cfg.dataset.startswith("synthetic:"):
        try:
            count, size, seed = (int(v) for v in cfg.dataset.split(":")[1:])
        except ValueError:
            raise UsageError("synthetic dataset must be 'synthetic:count:size:seed'") from None
        names = [f"synthetic{i:03d}" for i in range(count)]
        clean = synthetic_set(count, size, seed)
    else:
        manifest, clean = imageio.load_dataset(cfg.dataset)
        names = [str(manifest.root / f) for f in manifest.files]
    return trainer.prepare_dataset(names, clean, cfg, trainer.make_streams(cfg.seed)["noise"])


def cmd_train(args) -> int:
    cfg = PROFILES[args.profile]()
    if args.config:
        cfg = parse_config(Path(args.config).read_text(), cfg)
    if os.environ.get("DVP_SEED"):
        try:
            cfg = dataclasses.replace(cfg, seed=int(os.environ["DVP_SEED"]))
        except ValueError:
            raise UsageError("DVP_SEED must be an integer") from None
    cfg.validate()
    out = Path(args.out)
    state = None
    if args.resume:
        state = trainer.load_state(out / "checkpoint.ckpt")
        if format_config(state.cfg) != format_config(cfg):
            raise UsageError("checkpoint was written with a different configuration")
        logger.info("resuming at step %d", state.step)
    dataset = load_training_data(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    state = trainer.train(cfg, dataset, out, state=state, deterministic=args.deterministic,
                          stop_at=args.stop_at)
    table = trainer.variance_table(state.vm)
    (out / "variance.tsv").write_text("\n".join(variance_report(state.vm)) + "\n")
    if args.figures:
        loss, betas = plotting.parse_metrics((out / "metrics.tsv").read_text().splitlines())
        plotting.plot_training_curves(loss, out / "figures" / "training.png")
        plotting.plot_beta_trajectory(betas, out / "figures" / "beta.png")
        plotting.plot_variance_curve(table[:, 0], table[:, 1], out / "figures" / "variance.png")
    _emit([f"step\t{state.step}", f"beta\t{','.join(repr(float(b)) for b in state.vm.beta)}"])
    return EXIT_OK


def _pad_to_tile(img: np.ndarray, tile: int = TILE) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = img.shape
    ph, pw = (-h) % tile, (-w) % tile
    if ph == 0 and pw == 0:
        return img, (h, w)
    mode = "reflect" if min(h, w) > max(ph, pw) else "symmetric"
    return np.pad(img, ((0, ph), (0, pw)), mode=mode), (h, w)


def denoise_image(model: DnCNN, img: np.ndarray) -> np.ndarray:
    """``R(y)`` with ``z = 0``; odd sizes are reflect-padded to the tile and cropped back."""
    padded, (h, w) = _pad_to_tile(np.asarray(img, np.float64))
    return np.asarray(model.denoise(padded), np.float64)[:h, :w]


def load_model(path) -> tuple[DnCNN, VarianceModel]:
    state = trainer.load_state(path)
    return state.model, state.vm


def _denoise_one(model: DnCNN, src: Path, out_dir: Path, ref) -> str:
    y = imageio.read_image(src)
    out = denoise_image(model, y)
    dst = out_dir / f"{src.stem}_denoised{src.suffix or '.pgm'}"
    imageio.write_image(dst, np.clip(out, 0.0, 1.0))
    if ref is None:
        return f"{src}\t{dst}"
    x = imageio.read_image(ref)
    return "\t".join([str(src), str(dst), repr(metrics.psnr(x, y)),
                      repr(metrics.psnr(x, out)), repr(metrics.ssim(x, out))])


def cmd_denoise(args) -> int:
    model, _ = load_model(args.checkpoint)
    if args.ref and len(args.ref) != len(args.inputs):
        raise UsageError("--ref needs one reference per input")
    if args.jobs < 1:
        raise UsageError("--jobs must be positive")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    srcs = [Path(s) for s in args.inputs]
    dsts = [f"{s.stem}_denoised{s.suffix or '.pgm'}" for s in srcs]
    if len(set(dsts)) != len(dsts):
        raise UsageError("inputs would map to the same output file")
    refs = args.ref or [None] * len(srcs)
    # inference is read-only on the model and every input owns its output path
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = list(pool.map(lambda a: _denoise_one(model, a[0], out_dir, a[1]), zip(srcs, refs)))
    header = "file\toutput\tpsnr_in\tpsnr_out\tssim_out" if args.ref else "file\toutput"
    _emit([header] + rows)
    return EXIT_OK


def variance_report(vm: VarianceModel) -> list[str]:
    levels = np.arange(256)
    v = eval_f(vm, levels / 255)
    lines = [f"# beta\t{','.join(repr(float(b)) for b in vm.beta)}",
             f"# sigma2_estimated\t{float(vm.beta[0])!r}",
             "level\tvariance"]
    lines += [f"{l}\t{float(x)!r}" for l, x in zip(levels, v)]
    return lines


def parse_variance_report(lines) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`variance_report`: (beta, per-level variances)."""
    beta, values = None, []
    for line in lines:
        if line.startswith("# beta\t"):
            beta = np.array([float(b) for b in line.split("\t")[1].split(",")])
        elif line and not line.startswith("#") and not line.startswith("level"):
            values.append(float(line.split("\t")[1]))
    if beta is None:
        raise ValueError("variance report has no beta line")
    return beta, np.array(values)


def cmd_estimate_variance(args) -> int:
    if args.checkpoint:
        _, vm = load_model(args.checkpoint)
    else:
        vm = trainer.load_state(Path(args.run) / "checkpoint.ckpt").vm
    lines = variance_report(vm)
    levels = np.arange(256) / 255
    v_est = eval_f(vm, levels)
    v_gt = None
    if args.gt_sigma is not None:
        v_gt = np.full(256, args.gt_sigma ** 2)
    elif args.gt_lambda is not None:
        v_gt = args.gt_lambda * levels
    if v_gt is not None:
        m = metrics.variance_metrics(v_est, v_gt)
        lines += [f"# relative_error\t{m.relative_error!r}", f"# mae\t{m.mae!r}", f"# rmae\t{m.rmae!r}"]
    _emit(lines)
    if args.figures:
        plotting.plot_variance_curve(levels, v_est, Path(args.figures) / "variance.png", v_gt)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.which == "theorem1":
        reports = verify.theorem1_grid(args.n, args.seed, args.c_form)
    elif args.which == "prop2":
        reports = [verify.verify_prop2(kind, args.n, args.seed) for kind in ("gaussian", "poisson")]
    else:
        reports = [verify.verify_appendix_a(M, a, args.n, args.seed)
                   for M in (0.5, 1.0, 1.5, 2.0) for a in (0.2, 1.0)]
    _emit([verify.REPORT_HEADER] + [r.row() for r in reports])
    return EXIT_OK if all(r.ok for r in reports) else EXIT_VERIFY


def cmd_metrics(args) -> int:
    x = imageio.read_image(args.ref)
    y = imageio.read_image(args.test)
    _emit(["psnr\tssim", f"{metrics.psnr(x, y)!r}\t{metrics.ssim(x, y)!r}"])
    return EXIT_OK


def cmd_dataset_scan(args) -> int:
    sys.stdout.write(imageio.scan_dataset(args.root).format())
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    root = Path(args.out)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed + 1)
    if args.sigma:
        (root / "noisy").mkdir(exist_ok=True)
    for i, img in enumerate(synthetic_set(args.count, args.size, args.seed)):
        imageio.write_pgm(root / "clean" / f"img{i:03d}.pgm", img)
        if args.sigma:
            noisy = img + args.sigma * rng.standard_normal(img.shape)
            imageio.write_pgm(root / "noisy" / f"img{i:03d}.pgm", np.clip(noisy, 0, 1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dvp", description="Unsupervised denoising with a deep variation prior.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a denoiser and estimate the noise variance")
    t.add_argument("--config", help="key = value file overriding the profile")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    t.add_argument("--deterministic", action="store_true", help="pin BLAS to one thread")
    t.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.ckpt")
    t.add_argument("--stop-at", type=int, default=None, help="stop after this many total steps")
    t.add_argument("--figures", action="store_true", help="write PNG figures under OUT/figures")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("denoise", help="apply a trained denoiser to images")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out-dir", required=True)
    d.add_argument("--ref", nargs="+", help="clean references, one per input")
    d.add_argument("--jobs", type=int, default=1, help="images denoised concurrently")
    d.add_argument("inputs", nargs="+")
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("estimate-variance", help="report the estimated variance function")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--run", help="run directory containing checkpoint.ckpt")
    gt = e.add_mutually_exclusive_group()
    gt.add_argument("--gt-sigma", type=float)
    gt.add_argument("--gt-lambda", type=float)
    e.add_argument("--figures", help="directory for variance.png")
    e.set_defaults(func=cmd_estimate_variance)

    v = sub.add_parser("verify", help="Monte Carlo verification suite")
    v.add_argument("which", choices=["theorem1", "prop2", "appendixA"])
    v.add_argument("--n", type=int, default=1_000_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--c-form", choices=["proof", "expanded"], default="proof")
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("metrics", help="PSNR and SSIM of a test image against a reference")
    m.add_argument("--ref", required=True)
    m.add_argument("--test", required=True)
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("dataset-scan", help="print a dataset manifest")
    s.add_argument("root")
    s.set_defaults(func=cmd_dataset_scan)

    g = sub.add_parser("make-synthetic", help="write synthetic clean (and noisy) PGM images")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=16)
    g.add_argument("--size", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sigma", type=float, default=0.0)
    g.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"dvp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (imageio.ImageFormatError, trainer.DataError, CheckpointError, OSError, ValueError) as exc:
        print(f"dvp: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
