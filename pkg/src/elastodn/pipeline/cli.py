"""Command line entry point.

Exit codes: 0 when every chain completed, 2 when some subdomain is
UNDETERMINED, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ..errors import ElastoDNError
from ..tensor import cubic, isotropic, random_tensor, transversely_isotropic

log = logging.getLogger("elastodn")

EXIT_OK, EXIT_ERROR, EXIT_UNDETERMINED = 0, 1, 2


def _cfg(args):
    from .config import load_config

    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg.output_dir = str(Path(args.out).resolve())
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_validate(args) -> int:
    from .config import load_inputs

    inp = load_inputs(_cfg(args))
    print(f"ok: {len(inp.mesh.vertices)} vertices, {len(inp.mesh.tets)} tets, labels {inp.smap.labels}, "
          f"sigma {len(inp.sigma.faces)} faces")
    return EXIT_OK


def cmd_plan(args) -> int:
    from .config import load_inputs
    from .plan import plan_chains

    cfg = _cfg(args)
    inp = load_inputs(cfg)
    plan = plan_chains(inp.mesh, inp.smap, inp.sigma, cfg.curved_tol)
    out = cfg.out_path
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(json.dumps(plan.to_json(), indent=1, sort_keys=True))
    for c in plan.chains:
        print("chain " + " -> ".join(map(str, c.labels)))
    for u in plan.undetermined:
        print(f"UNDETERMINED {u.label}: {u.reason} {' '.join(u.patches)}".rstrip())
    return EXIT_UNDETERMINED if plan.undetermined else EXIT_OK


def cmd_simulate(args) -> int:
    from .config import load_inputs
    from .run import simulate

    cfg = _cfg(args)
    inp = load_inputs(cfg)
    lam = simulate(inp)
    (cfg.out_path / "operators").mkdir(parents=True, exist_ok=True)
    side = lam.save(cfg.out_path / "operators" / "lambda_sigma")
    print(f"wrote {side} ({lam.ndof} dofs)")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from .report import emit_report
    from .run import run_reconstruction

    cfg = _cfg(args)
    timings: dict = {}
    report = run_reconstruction(cfg, timings=timings)
    emit_report(report, cfg.out_path, figures=not args.no_figures)
    run_info = {"seed": cfg.seed, "workers": cfg.workers, "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
                **timings}
    (cfg.out_path / "run.json").write_text(json.dumps(run_info, indent=1))
    for b in report.blocks:
        err = "" if b.error is None else f" error {b.error:.3e}"
        print(f"block {b.label} depth {b.depth} {b.method or '-'} {b.status}{err} {b.message}".rstrip())
    for s in report.steps:
        if s.message:
            print(f"strip {s.label} {s.status} {s.message}")
    for u in report.plan.get("undetermined", []):
        print(f"UNDETERMINED {u['label']}: {u['reason']} {' '.join(u['patches'])}".rstrip())
    print(f"status {report.status}; report in {cfg.out_path}")
    return report.exit_code


def cmd_report(args) -> int:
    from .report import emit_report, load_report

    cfg = _cfg(args)
    report = load_report(cfg.out_path)
    for p in emit_report(report, cfg.out_path, figures=not args.no_figures):
        print(p)
    return EXIT_OK


def cmd_phantom(args) -> int:
    from .phantom import write_phantom

    path = write_phantom(args.dir, args.preset, args.n, args.random, args.seed or 0)
    print(path)
    return EXIT_OK


def cmd_tensor(args) -> int:
    p = args.params
    if args.kind == "isotropic":
        C = isotropic(*p)
    elif args.kind == "cubic":
        C = cubic(*p)
    elif args.kind == "ti":
        C = transversely_isotropic(*p[:5], axis=tuple(args.axis))
    else:
        import numpy as np

        C = random_tensor(np.random.default_rng(args.seed or 0))
    C.save(args.output)
    print(args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="elastodn", description="Layer-stripping reconstruction of piecewise "
                                 "constant anisotropic elasticity from localized DN maps.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    for name, fn, text in (("validate", cmd_validate, "check config, mesh and materials"),
                           ("plan", cmd_plan, "plan chains from the measured block"),
                           ("simulate", cmd_simulate, "write the phantom's DN matrix on Sigma"),
                           ("reconstruct", cmd_reconstruct, "run all chains and write the report"),
                           ("report", cmd_report, "re-render CSV tables and figures from report.json")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("--out", help="override output_dir")
        p.add_argument("--seed", type=int, help="override seed (recorded only)")
        if name in ("reconstruct", "report"):
            p.add_argument("--no-figures", action="store_true")
        p.set_defaults(func=fn)
    p = sub.add_parser("phantom", help="write a synthetic phantom (mesh, materials, config)")
    p.add_argument("dir")
    from .phantom import PRESETS

    p.add_argument("--preset", choices=PRESETS, default="two-block")
    p.add_argument("--n", type=int, help="grid parameter")
    p.add_argument("--random", action="store_true", help="draw random convex tensors")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_phantom)
    p = sub.add_parser("tensor", help="write a tensor JSON file from a generator")
    p.add_argument("kind", choices=("isotropic", "cubic", "ti", "random"))
    p.add_argument("params", type=float, nargs="*")
    p.add_argument("--axis", type=float, nargs=3, default=(0.0, 0.0, 1.0))
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="tensor.json")
    p.set_defaults(func=cmd_tensor)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ElastoDNError, OSError, TypeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
