"""Command-line interface: fusion (guided / Poisson / network), training,
evaluation, sampling dumps, edge maps, and noise sweeps.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, fusenet, noise
from .errors import (
    DepthFuseError,
    InvalidConfig,
    NoConvergence,
    NonFiniteLoss,
)
from .gradops import edge_map, guided_fuse, sobel
from .metrics import full_report
from .noise import NoiseKind, NoiseSpec, VARIANCE_GRID
from .raster import DepthMap, Raster, read_pfm, write_pfm, write_pgm
from .sampling import PairSource, SampleConfig, sample_edge_pairs
from .synthetic import make_fixtures

log = logging.getLogger("depthfuse")

# every numeric default is the constant the algorithms were specified with
CONFIG_DEFAULTS = {
    "alpha": 0.15,       # edge threshold fraction
    "beta": 60.0,        # max pair offset (pixels, full scale)
    "tau": 0.001,        # ordinal ratio tolerance
    "sigma": 0.1,        # ranking-loss smoothing
    "radius": 0,         # guided-filter radius; 0 = width // 12
    "eps": 1e-12,        # guided-filter regularizer
    "lr": 1e-4,
    "batch": 2,
    "steps": 500,
    "weight_decay": 1e-4,
    "levels": 4,
    "base_channels": 8,
    "low_h": 64, "low_w": 64,
    "high_h": 192, "high_w": 192,
    "dilate": 0,         # Poisson mask dilation radius; 0 = width // 12
    "tol": 1e-8,         # Poisson CG tolerance
    "max_pairs": 10000,
}


def load_config(path) -> dict:
    """Parse a key=value config file (UTF-8, '#' comments, unknown keys error)."""
    cfg = dict(CONFIG_DEFAULTS)
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"{path}:{line_no}: expected key=value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in cfg:
                raise InvalidConfig(f"{path}:{line_no}: unknown key {key!r}")
            kind = type(CONFIG_DEFAULTS[key])
            try:
                cfg[key] = kind(raw)
            except ValueError as e:
                raise InvalidConfig(f"{path}:{line_no}: bad value for {key}: {e}")
    return cfg


def effective_config(args, file_cfg: dict | None = None) -> dict:
    """File config merged under any command-line flags that were given."""
    cfg = dict(file_cfg) if file_cfg else dict(CONFIG_DEFAULTS)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


@contextmanager
def atomic_output(path):
    """Write to a temp file in the target directory, rename on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."),
                               prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _radius_or_auto(cfg, width):
    return cfg["radius"] if cfg["radius"] > 0 else max(1, width // 12)


def _json_out(payload: dict, cfg: dict) -> str:
    return json.dumps({"version": __version__, "config": cfg, **payload},
                      indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Commands

def cmd_fuse_gf(args) -> int:
    cfg = effective_config(args)
    low = DepthMap(read_pfm(args.low))
    high = DepthMap(read_pfm(args.high))
    fused = guided_fuse(low, high, radius=_radius_or_auto(cfg, high.raster.width),
                        eps=cfg["eps"])
    with atomic_output(args.out) as tmp:
        write_pfm(fused.raster, tmp)
    log.info("guided fusion written to %s", args.out)
    return 0


def cmd_fuse_poisson(args) -> int:
    cfg = effective_config(args)
    low = DepthMap(read_pfm(args.low))
    high = DepthMap(read_pfm(args.high))
    fused = noise.naive_poisson_pipeline(
        low, high, alpha=cfg["alpha"],
        dilate=cfg["dilate"] if cfg["dilate"] > 0 else None)
    with atomic_output(args.out) as tmp:
        write_pfm(fused.raster, tmp)
    log.info("poisson fusion written to %s", args.out)
    return 0


def cmd_fuse_net(args) -> int:
    params = fusenet.load_params(args.params)
    low = DepthMap(read_pfm(args.low))
    high = DepthMap(read_pfm(args.high))
    fused = fusenet.fuse(params, low, high)
    with atomic_output(args.out) as tmp:
        write_pfm(fused.raster, tmp)
    log.info("network fusion written to %s", args.out)
    return 0


def _scan_training_dir(data_dir) -> list[tuple[DepthMap, DepthMap]]:
    root = Path(data_dir)
    pairs = []
    for low_path in sorted(root.glob("*_low.pfm")):
        high_path = low_path.with_name(
            low_path.name[:-len("_low.pfm")] + "_high.pfm")
        if high_path.exists():
            pairs.append((DepthMap(read_pfm(low_path)),
                          DepthMap(read_pfm(high_path))))
    if not pairs:
        raise InvalidConfig(f"no *_low.pfm / *_high.pfm pairs in {data_dir}")
    return pairs


def cmd_train(args) -> int:
    file_cfg = load_config(args.config) if args.config else None
    cfg = effective_config(args, file_cfg)
    dataset = _scan_training_dir(args.data_dir)
    net_cfg = fusenet.FusionNetConfig(
        levels=cfg["levels"], base_channels=cfg["base_channels"],
        input_low=(cfg["low_h"], cfg["low_w"]),
        input_high=(cfg["high_h"], cfg["high_w"]), seed=args.seed)
    params = fusenet.build(net_cfg)
    opt = fusenet.OptimizerState(base_lr=cfg["lr"], total_steps=cfg["steps"] * 20,
                                 weight_decay=cfg["weight_decay"])
    sample_cfg = SampleConfig(alpha=cfg["alpha"], beta=cfg["beta"],
                              tau=cfg["tau"], sigma=cfg["sigma"],
                              rng_seed=args.seed, max_pairs=cfg["max_pairs"])

    log_path = args.log or (Path(args.data_dir) / "train.csv")
    with atomic_output(log_path) as tmp_log:
        with open(tmp_log, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "lr", "milnr", "rank", "total"])

            def on_step(step, lr, bd):
                writer.writerow([step, f"{lr:.8e}", f"{bd.milnr:.8e}",
                                 f"{bd.rank:.8e}", f"{bd.total:.8e}"])
                if step % 50 == 0:
                    log.info("step %d lr %.3e total %.5f", step, lr, bd.total)

            fusenet.train(params, opt, dataset, steps=cfg["steps"],
                          sample_cfg=sample_cfg, batch_size=cfg["batch"],
                          seed=args.seed, sigma=cfg["sigma"],
                          use_augment=args.augment, log=on_step)

    with atomic_output(args.out_params) as tmp:
        fusenet.save_params(params, tmp)
    log.info("parameters written to %s, log to %s", args.out_params, log_path)
    return 0


def cmd_eval(args) -> int:
    cfg = effective_config(args)
    pred = DepthMap(read_pfm(args.pred))
    gt = DepthMap(read_pfm(args.gt))
    sample_cfg = SampleConfig(alpha=cfg["alpha"], beta=cfg["beta"],
                              tau=cfg["tau"], rng_seed=args.seed,
                              max_pairs=cfg["max_pairs"])
    report = full_report(pred, gt, align=args.align, cfg=sample_cfg,
                         rng=np.random.default_rng(args.seed))
    text = _json_out({"metrics": report.to_dict()}, cfg)
    if args.json:
        with atomic_output(args.json) as tmp:
            Path(tmp).write_text(text + "\n")
    print(text)
    return 0


def cmd_sample_pairs(args) -> int:
    cfg = effective_config(args)
    depth = Raster(read_pfm(args.depth).values)
    g = sobel(depth)
    e = edge_map(g, cfg["alpha"])
    sample_cfg = SampleConfig(alpha=cfg["alpha"], beta=cfg["beta"],
                              tau=cfg["tau"], rng_seed=args.seed,
                              max_pairs=cfg["max_pairs"])
    pairs = sample_edge_pairs(depth, g, e, sample_cfg,
                              np.random.default_rng(args.seed),
                              source=PairSource.FROM_GF)
    with atomic_output(args.out) as tmp:
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["i_y", "i_x", "j_y", "j_x", "source", "weight", "z"])
            for p in pairs:
                writer.writerow([p.i[0], p.i[1], p.j[0], p.j[1],
                                 p.source.value, p.weight, p.z])
    log.info("%d pairs written to %s", len(pairs), args.out)
    return 0


def cmd_edges(args) -> int:
    cfg = effective_config(args)
    img = read_pfm(args.img)
    e = edge_map(sobel(img), cfg["alpha"])
    with atomic_output(args.out) as tmp:
        write_pgm(Raster(e.mask.astype(np.float64)), tmp, maxval=255)
    log.info("%d edge pixels written to %s", e.count(), args.out)
    return 0


def cmd_noise_sweep(args) -> int:
    file_cfg = load_config(args.config) if args.config else None
    cfg = effective_config(args, file_cfg)
    fixtures = make_fixtures(size_low=(cfg["low_h"], cfg["low_w"]),
                             size_high=(cfg["high_h"], cfg["high_w"]))
    specs = [NoiseSpec(NoiseKind.GAUSSIAN, v, args.seed) if v > 0
             else NoiseSpec(NoiseKind.NONE, 0.0, args.seed)
             for v in VARIANCE_GRID]
    if args.pipeline == "guided":
        pipeline = noise.guided_pipeline
    else:
        def pipeline(dl, dh):
            return noise.naive_poisson_pipeline(
                dl, dh, alpha=cfg["alpha"],
                dilate=cfg["dilate"] if cfg["dilate"] > 0 else None)
    rows = noise.noise_sweep(pipeline, fixtures, specs)
    with atomic_output(args.out) as tmp:
        noise.write_sweep_csv(rows, tmp)
    log.info("%d sweep rows written to %s", len(rows), args.out)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="depthfuse",
                     description="Depth map fusion toolkit")
    parser.add_argument("--version", action="version",
                        version=f"depthfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("fuse-gf", help="guided-filter fusion")
    p.add_argument("low"), p.add_argument("high"), p.add_argument("out")
    p.add_argument("--radius", type=int), p.add_argument("--eps", type=float)
    common(p)
    p.set_defaults(fn=cmd_fuse_gf)

    p = sub.add_parser("fuse-poisson", help="edge mask + Poisson fusion")
    p.add_argument("low"), p.add_argument("high"), p.add_argument("out")
    p.add_argument("--alpha", type=float), p.add_argument("--dilate", type=int)
    p.add_argument("--tol", type=float)
    common(p)
    p.set_defaults(fn=cmd_fuse_poisson)

    p = sub.add_parser("fuse-net", help="network fusion")
    p.add_argument("low"), p.add_argument("high")
    p.add_argument("params"), p.add_argument("out")
    common(p)
    p.set_defaults(fn=cmd_fuse_net)

    p = sub.add_parser("train", help="self-supervised training")
    p.add_argument("data_dir"), p.add_argument("out_params")
    p.add_argument("--config"), p.add_argument("--log")
    p.add_argument("--steps", type=int), p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   default=True)
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metric report")
    p.add_argument("pred"), p.add_argument("gt")
    p.add_argument("--align", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--json", help="also write the report to this path")
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sample-pairs", help="dump edge-guided pairs as CSV")
    p.add_argument("depth"), p.add_argument("out")
    p.add_argument("--alpha", type=float), p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)
    common(p)
    p.set_defaults(fn=cmd_sample_pairs)

    p = sub.add_parser("edges", help="edge map as PGM")
    p.add_argument("img"), p.add_argument("out")
    p.add_argument("--alpha", type=float)
    common(p)
    p.set_defaults(fn=cmd_edges)

    p = sub.add_parser("noise-sweep", help="robustness sweep over variances")
    p.add_argument("out")
    p.add_argument("--pipeline", choices=("guided", "poisson"), default="guided")
    p.add_argument("--config")
    common(p)
    p.set_defaults(fn=cmd_noise_sweep)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("DEPTHFUSE_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (NoConvergence, NonFiniteLoss) as e:
        print(f"depthfuse: numerical failure: {e}", file=sys.stderr)
        return 3
    except InvalidConfig as e:
        print(f"depthfuse: {e}", file=sys.stderr)
        return 1
    except (DepthFuseError, OSError) as e:
        print(f"depthfuse: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
