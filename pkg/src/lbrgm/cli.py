"""Command-line entry point: ``lbrgm <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np


from . import bench as bench_mod
from . import generator as gen
from . import imageio
from . import measurement as meas
from . import metrics
from . import perceptual
from . import solver
from . import tensorcore as tc
from .config import ConfigError, RunConfig, dump_config, load_config

log = logging.getLogger("lbrgm")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


def _save_model(args):
    arch = gen.GeneratorArch(d_z=args.dz, d_w=args.dw, mapping_layers=args.map_layers,
                             mapping_width=args.map_width, num_layers=args.layers,
                             out_shape=(args.res, args.res, args.channels))
    gen.save_model(gen.init_weights(arch, args.seed), args.out)
    log.info("wrote %s (L=%d, d_w=%d, %dx%dx%d)", args.out, arch.num_layers, arch.d_w, *arch.out_shape)


def _sample(args):
    weights = gen.load_model(args.model)
    image, z = gen.sample_image(weights, args.seed)
    imageio.write_image(args.out, image)
    if args.save_z:
        imageio.write_vector(args.save_z, z)


def _degrade(args):
    x = imageio.read_image(args.input)
    op = meas.parse_op_spec(args.op, x.shape)
    y = meas.degrade(meas.DegradeConfig(op, args.sigma, args.seed), x)
    imageio.write_image(args.out, y)
    if op.kind == "mask":
        imageio.write_mask(args.out + ".mask.pbm", op.mask)


_OVERRIDES = ("method", "iters", "n_init", "seed", "eta", "beta1", "beta2", "lambda_pix", "lambda_vgg",
              "lambda_map", "lambda_lat", "op", "oracle_stopping", "trace_every", "feature_seed",
              "eval_feature_seed", "model", "obs", "gt")


def resolve_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(**{k: getattr(args, k, None) for k in _OVERRIDES})


def _write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write(solver.trace_to_csv(trace))


def _reconstruct(args):
    cfg = resolve_run_config(args)
    if not cfg.model or not cfg.obs:
        raise UsageError("reconstruct needs --model and --obs (or model=/obs= in --config)")
    if cfg.oracle_stopping and not cfg.gt:
        raise UsageError("oracle stopping requires --gt")
    if cfg.method in ("unreg", "zinv", "brgm") and (args.lambda_map is not None or args.lambda_lat is not None):
        log.warning("method %s has no mapping/latent prior; lambda_map and lambda_lat are ignored", cfg.method)
    weights = gen.load_model(cfg.model)
    shape = weights.arch.out_shape
    op = meas.parse_op_spec(cfg.op, shape)
    y = imageio.read_image(cfg.obs)
    gt = imageio.read_image(cfg.gt) if cfg.gt else None
    obj_ex = perceptual.build_extractor(cfg.feature_seed, "objective", op.out_shape(shape))
    eval_ex = perceptual.build_extractor(cfg.eval_feature_seed, "evaluation", shape)
    try:
        result = solver.reconstruct(weights, obj_ex, eval_ex, op, y, cfg.solver_config(), ground_truth=gt)
    except solver.DivergenceError as exc:
        # keep the partial trace for diagnosis
        if args.trace:
            _write_trace(args.trace, exc.result.trace)
        raise
    imageio.write_image(args.out, result.image)
    if args.trace:
        _write_trace(args.trace, result.trace)
    manifest = args.manifest or args.out + ".manifest"
    with open(manifest, "w") as fh:
        fh.write(dump_config(cfg))
    log.info("best iterate %d of %d; manifest %s", result.best_iter, cfg.iters, manifest)


def _evaluate(args):
    gt = imageio.read_image(args.gt)
    recon = imageio.read_image(args.recon)
    if gt.shape != recon.shape:
        raise tc.ShapeError(f"shape mismatch {gt.shape} vs {recon.shape}")
    mask = imageio.read_mask(args.mask) if args.mask else None
    ex = perceptual.build_extractor(args.features_seed, "evaluation", gt.shape)
    report = metrics.evaluate(gt, recon, ex, mask)
    lines = ["metric,value"] + [f"{k},{v!r}" for k, v in report.items()]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)


def _bench(args):
    cfg = load_config(args.config) if args.config else RunConfig(op="half")
    cfg = cfg.with_overrides(op=args.op, noise_sigma=args.sigma, seed=args.seed, iters=args.iters,
                             n_init=args.n_init, trace_every=args.trace_every, model=args.model)
    if not cfg.model:
        raise UsageError("bench needs --model (or model= in --config)")
    weights = gen.load_model(cfg.model)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    os.makedirs(args.out_dir, exist_ok=True)
    result = bench_mod.run_bench(weights, cfg, methods, args.n_images, args.out_dir, log=log.info)
    print(result.table.to_text(f"op={cfg.op} sigma={cfg.noise_sigma}"))


def _add_run_flags(p):
    p.add_argument("--config", help="key=value run config (flags override it)")
    p.add_argument("--method", choices=solver.METHODS)
    p.add_argument("--iters", type=int)
    p.add_argument("--n-init", dest="n_init", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    for name in ("pix", "vgg", "map", "lat"):
        p.add_argument(f"--lambda-{name}", dest=f"lambda_{name}", type=float)
    p.add_argument("--op")
    p.add_argument("--oracle-stopping", dest="oracle_stopping", action="store_true", default=None)
    p.add_argument("--no-oracle-stopping", dest="oracle_stopping", action="store_false")
    p.add_argument("--trace-every", dest="trace_every", type=int)
    p.add_argument("--feature-seed", dest="feature_seed", type=int)
    p.add_argument("--eval-feature-seed", dest="eval_feature_seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lbrgm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="write a seeded toy generator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--dz", type=int, default=16)
    p.add_argument("--dw", type=int, default=16)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--map-layers", dest="map_layers", type=int, default=8)
    p.add_argument("--map-width", dest="map_width", type=int, default=64)
    p.add_argument("--res", type=int, default=32)
    p.add_argument("--channels", type=int, default=1, choices=(1, 3))
    p.set_defaults(func=_save_model)

    p = sub.add_parser("sample", help="write G(M(z)) for a seeded z")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--save-z", dest="save_z")
    p.set_defaults(func=_sample)

    p = sub.add_parser("degrade", help="apply a measurement operator plus noise")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--op", required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_degrade)

    p = sub.add_parser("reconstruct", help="MAP reconstruction from an observation")
    p.add_argument("--model")
    p.add_argument("--obs")
    p.add_argument("--gt")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--manifest", help="defaults to <out>.manifest")
    _add_run_flags(p)
    p.set_defaults(func=_reconstruct)

    p = sub.add_parser("evaluate", help="compare a reconstruction with the ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--mask")
    p.add_argument("--features-seed", dest="features_seed", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=_evaluate)

    p = sub.add_parser("bench", help="paired multi-method benchmark with winner counts")
    p.add_argument("--model")
    p.add_argument("--n-images", dest="n_images", type=int, default=20)
    p.add_argument("--methods", default="lbrgm,brgm,unreg,zinv")
    p.add_argument("--op", help="defaults to half without --config")
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--n-init", dest="n_init", type=int)
    p.add_argument("--trace-every", dest="trace_every", type=int)
    p.add_argument("--config")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        # the engine reports non-finite values itself
        with np.errstate(over="ignore", invalid="ignore"):
            args.func(args)
    except (UsageError, ConfigError, meas.OpSpecError) as exc:
        print(f"lbrgm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except solver.DivergenceError as exc:
        print(f"lbrgm: diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (gen.ModelFormatError, imageio.ImageFormatError, tc.ShapeError, OSError, ValueError) as exc:
        print(f"lbrgm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"lbrgm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
