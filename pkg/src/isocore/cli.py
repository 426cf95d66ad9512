"""Command-line entry point: ``isocore {train,eval,export,gradcheck,gen-data}``.

Exit codes: 0 success, 1 runtime failure (bad checkpoint, numerical abort,
failed gradient check), 2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from .autodiff import Tensor, inject_fault
from .checkpoint import atomic_write
from .config import CONFIG_SCHEMA, TrainConfig, load_config
from .errors import ConfigError, IsoError
from .solver import FUZZY, eigenvalue_mask, estimate_map
from .spectral import project, realize

log = logging.getLogger("isocore")

REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "equivariance_error_pct",
        "commutator_residual",
        "orthogonality_residual",
        "distinct_eigenvalues",
        "tolerance",
        "offdiag_fraction",
        "off_block_fraction",
        "pairs",
        "k",
        "n",
        "step",
        "checkpoint",
    ],
    "properties": {
        "equivariance_error_pct": {"type": "number", "minimum": 0},
        "commutator_residual": {"type": "number", "minimum": 0},
        "orthogonality_residual": {"type": "number", "minimum": 0},
        "distinct_eigenvalues": {"type": "integer", "minimum": 0},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "offdiag_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "off_block_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "pairs": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 1},
        "step": {"type": "integer", "minimum": 0},
        "checkpoint": {"type": ["string", "null"]},
    },
}


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _thread_limit():
    raw = os.environ.get("ISO_CORE_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"ISO_CORE_THREADS: expected a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _config_from_args(args) -> TrainConfig:
    if not args.config:
        raise ConfigError("--config: required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _load_model(args):
    """Parameters, config and step from ``--ckpt``, or a fresh init from ``--config``."""
    from .train import config_from_checkpoint, init_params, params_from_checkpoint

    if args.ckpt:
        ck = ckpt_io.load(args.ckpt)
        cfg = config_from_checkpoint(ck) if not args.config else load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return params_from_checkpoint(ck), cfg.validate(), ck.step
    cfg = _config_from_args(args)
    return init_params(cfg), cfg, 0


def cmd_train(args) -> int:
    from .train import train

    cfg = _config_from_args(args)
    resume = ckpt_io.load(args.ckpt) if args.ckpt else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "version": __version__,
        "seed": cfg.seed,
        "started": _now(),
        "resumed_from": args.ckpt,
        "outputs": {"metrics": str(out / "metrics.csv"), "checkpoints": str(out / "ckpt-*.bin"), "summary": str(out / "summary.json")},
    }
    if resume is None or not (out / "manifest.json").exists():
        atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    result = train(cfg, out, resume=resume, max_steps=args.max_steps)
    last = result.metrics[-1] if result.metrics else {}
    summary = {"finished": _now(), "steps_completed": result.step, "last": last}
    atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, sort_keys=True))
    return 0


def evaluation_report(args) -> dict:
    from .train import PairSource, evaluate

    params, cfg, step = _load_model(args)
    pairs = PairSource(cfg).eval_samples(args.pairs)
    report = evaluate(params, pairs, tol=args.tol)
    report.update(step=step, checkpoint=args.ckpt)
    return report


def cmd_eval(args) -> int:
    report = evaluation_report(args)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        atomic_write(Path(args.out) / "eval.json", text)
    print(text)
    return 0


def cmd_export(args) -> int:
    from .train import PairSource, frozen
    from .viz import export_all

    params, cfg, _ = _load_model(args)
    op = realize(frozen(params))
    za, zb = (Tensor(o.flat()) for o in PairSource(cfg).eval_samples(1)[0][:2])
    tau = estimate_map(project(za, op), project(zb, op), eigenvalue_mask(op.eigvals, FUZZY)).tau_basis.data
    order = np.argsort(op.eigvals.data, kind="stable")
    written = export_all(op, tau[np.ix_(order, order)], cfg.height, cfg.width, args.out)
    print(json.dumps(written, indent=2, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite, worst

    ctx = inject_fault(args.inject_fault) if args.inject_fault else contextlib.nullcontext()
    with ctx:
        results = run_suite(seed=0 if args.seed is None else args.seed)
    for r in results:
        print(f"{r.name:26s} {r.rel_error:.3e}  {'ok' if r.ok else 'FAIL'}")
    bad = worst(results)
    if not all(r.ok for r in results):
        print(f"gradcheck failed: worst offender {bad.name} (relative error {bad.rel_error:.3e} > {TOLERANCE:g})")
        return 1
    print(f"gradcheck passed: {len(results)} primitives, max relative error {bad.rel_error:.3e}")
    return 0


def cmd_gen_data(args) -> int:
    """Write synthetic observation channels as P6 images (three channels per file)."""
    from .train import PairSource, _rng

    cfg = _config_from_args(args)
    if cfg.data.source != "synthetic":
        raise ConfigError("data.source: gen-data needs a synthetic source")
    src = PairSource(cfg)
    out = Path(args.out)
    index = []
    for i in range(args.count):
        obs = src.observation(_rng(cfg.seed, 4, i)).values
        rgb = np.resize(np.moveaxis(obs, 2, 0), (3, *obs.shape[:2]))
        rgb = np.moveaxis(rgb, 0, 2)
        lo, hi = float(rgb.min()), float(rgb.max())
        pix = np.rint(255.0 * (rgb - lo) / (hi - lo)) if hi > lo else np.zeros_like(rgb)
        h, w = pix.shape[:2]
        name = f"sample-{i:05d}.ppm"
        atomic_write(out / name, f"P6\n{w} {h}\n255\n".encode() + pix.astype(np.uint8).tobytes())
        index.append({"file": name, "normalization": "minmax", "lo": lo, "hi": hi})
    atomic_write(out / "index.json", json.dumps({"config": cfg.to_dict(), "images": index}, indent=2, sort_keys=True))
    print(f"wrote {len(index)} images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isocore", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"isocore {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--ckpt", help="checkpoint file")

    p = sub.add_parser("train", help="optimize an operator")
    common(p, out_required=True)
    p.add_argument("--max-steps", type=int, help="stop after this many steps (schedule unchanged)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out equivariance report")
    common(p)
    p.add_argument("--pairs", type=int, help="held-out pair count (default: data.eval_pairs)")
    p.add_argument("--tol", type=float, default=1e-2, help="eigenvalue grouping tolerance")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write heatmaps of a checkpoint")
    common(p, out_required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    common(p)
    p.add_argument("--inject-fault", metavar="PRIMITIVE", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="write synthetic samples as images")
    common(p, out_required=True)
    p.add_argument("--count", type=int, default=8)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.set_defaults(func=lambda args: print(json.dumps(CONFIG_SCHEMA, indent=2)) or 0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except IsoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
