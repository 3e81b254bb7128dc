"""Command-line surface: gen-data, train, eval, traverse, sweep-gamma, ablate.

Exit codes: 0 success, 2 usage/config error, 3 numerical divergence.
Primary outputs (CSV, CTF, PGM) are byte-identical across reruns with the
same inputs and seeds; run manifests additionally carry timestamps and are
therefore not part of that guarantee.
"""

import argparse
import datetime
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

import numpy as np

from . import __version__, ctf, data, metrics
from .errors import ConfigError, DivergenceError, ShapeError
from .model import load_checkpoint
from .tensor import Tensor, no_grad
from .training import (Trainer, TrainConfig, apply_overrides, config_to_text,
                       parse_config)
from .utils import atomic_write_bytes, atomic_write_text

GAMMA_TABLE_HEADER = "gamma,sap,kl,recon"
ABLATE_VARIANTS = (("c2vae_g", "copula_gaussian"), ("c2vae_i", "permute"),
                   ("c2vae_s", "copula_student"), ("c2vae_m", "copula_gmm"))


# ---------------------------------------------------------------------------
# small output helpers
# ---------------------------------------------------------------------------

def write_pgm(path, image):
    """8-bit binary PGM (P5, maxval 255) from an array scaled in [0, 1]."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    pixels = np.round(arr * 255.0).astype(np.uint8)
    h, w = pixels.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def tile_grid(images, rows, cols, sep=1, sep_value=0.5):
    """Tile (rows*cols, R, R) images into one canvas with 1px separators."""
    r = images[0].shape[0]
    canvas = np.full((rows * r + (rows - 1) * sep,
                      cols * r + (cols - 1) * sep), sep_value)
    for i in range(rows):
        for j in range(cols):
            y, x = i * (r + sep), j * (r + sep)
            canvas[y:y + r, x:x + r] = images[i * cols + j]
    return canvas


def write_manifest(out_dir, command, cfg_echo, seed, outputs, started):
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": cfg_echo,
        "started": started,
        "finished": _now(),
        "outputs": sorted(outputs),
    }
    missing = [p for p in outputs if not os.path.exists(os.path.join(out_dir, p))]
    if missing:
        raise ShapeError(f"manifest lists missing outputs: {missing}")
    atomic_write_text(os.path.join(out_dir, "run_manifest.json"),
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _load_config(args):
    cfg = TrainConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    return apply_overrides(cfg, args.set or [])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    started = _now()
    spec = data.default_spec(shapes=args.shapes, scales=args.scales,
                             positions=args.positions,
                             orientation=args.orientation)
    ds = data.generate(spec, resolution=args.resolution)
    os.makedirs(args.out, exist_ok=True)
    data.save_dataset(args.out, ds)
    write_manifest(args.out, "gen-data",
                   {"resolution": args.resolution, "shapes": args.shapes,
                    "scales": args.scales, "positions": args.positions,
                    "orientation": args.orientation},
                   seed=0, outputs=["images.ctf", "factors.ctf", "manifest.txt"],
                   started=started)
    print(f"wrote {len(ds)} images to {args.out}")
    return 0


def cmd_train(args):
    started = _now()
    cfg = _load_config(args)
    ds = data.load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    trainer = Trainer(cfg, ds)
    curves = os.path.join(args.out, "curves.csv")
    with open(curves, "w") as stream:
        trainer.run(out_dir=args.out, log_stream=stream)
    trainer.save(os.path.join(args.out, "checkpoint.ckpt"), cfg.steps)
    atomic_write_text(os.path.join(args.out, "config.txt"), config_to_text(cfg))
    outputs = ["curves.csv", "checkpoint.ckpt", "config.txt"]
    outputs += [f for f in os.listdir(args.out) if f.startswith("ckpt_")]
    write_manifest(args.out, "train",
                   {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)},
                   seed=cfg.seed, outputs=outputs, started=started)
    print(f"trained {cfg.steps} steps ({cfg.mode}); outputs in {args.out}")
    return 0


def _evaluate_checkpoint(ckpt_path, ds, metric_seed, bins, votes):
    bundle, _ = load_checkpoint(ckpt_path)
    train_votes, eval_votes = votes
    return metrics.evaluate(bundle, ds, bins=bins, metric_seed=metric_seed,
                            train_votes=train_votes, eval_votes=eval_votes)


def cmd_eval(args):
    ds = data.load_dataset(args.data)
    votes = (args.fac_train_votes, args.fac_eval_votes)
    rows = []
    for s in range(args.seeds):
        report = _evaluate_checkpoint(args.checkpoint, ds,
                                      args.metric_seed + s, args.bins, votes)
        rows.append([s, *(getattr(report, f.name) for f in fields(type(report)))])
    header = "seed," + metrics.MetricReport.csv_header()
    lines = [header]
    lines += [",".join(repr(v) if isinstance(v, float) else str(v) for v in row)
              for row in rows]
    if args.seeds > 1:
        table = np.array([row[1:] for row in rows], dtype=np.float64)
        lines.append("mean," + ",".join(repr(v) for v in table.mean(axis=0)))
        lines.append("std," + ",".join(repr(v) for v in table.std(axis=0)))
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_traverse(args):
    started = _now()
    ds = data.load_dataset(args.data)
    bundle, manifest = load_checkpoint(args.checkpoint)
    if not 0 <= args.anchor < len(ds):
        raise ConfigError(f"anchor {args.anchor} outside dataset of {len(ds)}")
    d = bundle.cfg.latent_dim
    dims = list(range(d)) if args.dims == "all" else \
        [int(t) for t in args.dims.split(",")]
    for dim in dims:
        if not 0 <= dim < d:
            raise ConfigError(f"latent dim {dim} out of range (d={d})")
    offsets = np.zeros(1) if args.steps == 1 else \
        np.linspace(-args.range, args.range, args.steps)

    os.makedirs(args.out, exist_ok=True)
    r = ds.resolution
    with no_grad():
        mu = bundle.encode(Tensor(ds.flat_images()[args.anchor:args.anchor + 1])).mu.data[0]
        cells = []
        for dim in dims:
            for off in offsets:
                z = mu.copy()
                z[dim] = mu[dim] + off
                logits = bundle.decode(Tensor(z[None, :])).data[0]
                cells.append((1.0 / (1.0 + np.exp(-logits))).reshape(r, r))
    written = []
    for i, dim in enumerate(dims):
        for k in range(len(offsets)):
            name = f"traverse_dim{dim}_step{k}.pgm"
            write_pgm(os.path.join(args.out, name), cells[i * len(offsets) + k])
            written.append(name)
    grid = tile_grid(cells, rows=len(dims), cols=len(offsets))
    write_pgm(os.path.join(args.out, "grid.pgm"), grid)
    written.append("grid.pgm")
    write_manifest(args.out, "traverse",
                   {"checkpoint": args.checkpoint, "anchor": args.anchor,
                    "dims": dims, "steps": args.steps, "range": args.range},
                   seed=manifest["config"].get("seed", 0),
                   outputs=written, started=started)
    print(f"wrote {len(dims)}x{len(offsets)} traversal grid to {args.out}")
    return 0


def _run_cell(payload):
    """Train + evaluate one sweep/ablation cell; returns (tag, sap, kl, recon)."""
    tag, cfg, data_dir, out_dir, metric_seed = payload
    ds = data.load_dataset(data_dir)
    os.makedirs(out_dir, exist_ok=True)
    trainer = Trainer(cfg, ds)
    with open(os.path.join(out_dir, "curves.csv"), "w") as stream:
        trainer.run(out_dir=out_dir, log_stream=stream)
    trainer.save(os.path.join(out_dir, "checkpoint.ckpt"), cfg.steps)
    report = metrics.evaluate(trainer.bundle, ds, metric_seed=metric_seed)
    return tag, report.sap, report.kl, report.recon


def _run_cells(payloads, parallel):
    """Failed cells become None (an NA row) instead of aborting the table."""
    results = {}
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = {pool.submit(_run_cell, p): p[0] for p in payloads}
            for fut, tag in futures.items():
                try:
                    results[tag] = fut.result()[1:]
                except Exception as exc:  # noqa: BLE001 - NA row, keep sweeping
                    print(f"cell {tag} failed: {exc}", file=sys.stderr)
                    results[tag] = None
    else:
        for payload in payloads:
            try:
                results[payload[0]] = _run_cell(payload)[1:]
            except Exception as exc:  # noqa: BLE001 - NA row, keep sweeping
                print(f"cell {payload[0]} failed: {exc}", file=sys.stderr)
                results[payload[0]] = None
    return results


def cmd_sweep_gamma(args):
    started = _now()
    base = _load_config(args)
    gammas = [float(g) for g in args.gammas.split(",")]
    os.makedirs(args.out, exist_ok=True)
    payloads = []
    for g in gammas:
        cfg = apply_overrides(base, [f"gamma={g}"])
        payloads.append((f"{g:g}", cfg, args.data,
                         os.path.join(args.out, f"gamma_{g:g}"), args.metric_seed))
    results = _run_cells(payloads, args.parallel)
    lines = [GAMMA_TABLE_HEADER]
    for g in gammas:
        cell = results[f"{g:g}"]
        lines.append(f"{g:g},NA,NA,NA" if cell is None else
                     f"{g:g},{cell[0]!r},{cell[1]!r},{cell[2]!r}")
    atomic_write_text(os.path.join(args.out, "table.csv"), "\n".join(lines) + "\n")
    write_manifest(args.out, "sweep-gamma",
                   {f.name: getattr(base, f.name) for f in fields(TrainConfig)},
                   seed=base.seed, outputs=["table.csv"], started=started)
    print("\n".join(lines))
    return 0


def cmd_ablate(args):
    started = _now()
    base = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    payloads = []
    for column, source in ABLATE_VARIANTS:
        cfg = apply_overrides(base, [f"negative_source={source}", "mode=c2vae"])
        payloads.append((column, cfg, args.data,
                         os.path.join(args.out, column), args.metric_seed))
    results = _run_cells(payloads, args.parallel)
    columns = [c for c, _ in ABLATE_VARIANTS]
    lines = ["metric," + ",".join(columns)]
    for i, name in enumerate(("sap", "kl", "recon")):
        row = [name]
        for c in columns:
            cell = results[c]
            row.append("NA" if cell is None else repr(cell[i]))
        lines.append(",".join(row))
    atomic_write_text(os.path.join(args.out, "table.csv"), "\n".join(lines) + "\n")
    write_manifest(args.out, "ablate",
                   {f.name: getattr(base, f.name) for f in fields(TrainConfig)},
                   seed=base.seed, outputs=["table.csv"], started=started)
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="c2vae",
                                description="copula-contrastive VAE laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the procedural factor dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--resolution", type=int, default=16)
    g.add_argument("--shapes", type=int, default=3)
    g.add_argument("--scales", type=int, default=4)
    g.add_argument("--positions", type=int, default=8)
    g.add_argument("--orientation", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    def add_train_args(sp):
        sp.add_argument("--config", default=None, help="key=value config file")
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE")
        sp.add_argument("--metric-seed", type=int, default=0)

    t = sub.add_parser("train", help="run one training configuration")
    add_train_args(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--seeds", type=int, default=1)
    e.add_argument("--metric-seed", type=int, default=0)
    e.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    e.add_argument("--fac-train-votes", type=int, default=metrics.FAC_TRAIN_VOTES)
    e.add_argument("--fac-eval-votes", type=int, default=metrics.FAC_EVAL_VOTES)
    e.set_defaults(func=cmd_eval)

    tr = sub.add_parser("traverse", help="latent traversal image grids")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--anchor", type=int, default=0)
    tr.add_argument("--dims", default="all")
    tr.add_argument("--steps", type=int, default=7)
    tr.add_argument("--range", type=float, default=2.0)
    tr.set_defaults(func=cmd_traverse)

    s = sub.add_parser("sweep-gamma", help="train/eval across a gamma list")
    add_train_args(s)
    s.add_argument("--gammas", default="1,2,4,6,8,10")
    s.add_argument("--parallel", type=int, default=1)
    s.set_defaults(func=cmd_sweep_gamma)

    a = sub.add_parser("ablate", help="run the four negative-source variants")
    add_train_args(a)
    a.add_argument("--parallel", type=int, default=1)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ShapeError, ctf.CtfError, FileNotFoundError,
            NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
