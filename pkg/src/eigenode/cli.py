"""Command line interface.

Subcommands:

  run <config.toml>            run the configured experiment sweep
  generate-data <config.toml>  write the ground-truth samples only
  gradcheck                    run the finite-difference oracle suites
  eigen <matrix-file>          spectrum report for a matrix in a text file

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .eigen import eigen
from .experiments import ConfigError, ExperimentConfig, generate_data, run_experiment
from .gradcheck import run_gradcheck
from .losses import _damping, _frequency

__all__ = ["main"]

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eigenode",
        description="Eigenvalue-informed NeuralODE training toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment sweep from a config file")
    run_p.add_argument("config", type=Path)
    run_p.add_argument("--seed", type=int, default=None,
                       help="replace the configured seed list with this one seed")
    run_p.add_argument("--steps", type=int, default=None)
    run_p.add_argument("--out-dir", type=Path, default=None)
    run_p.add_argument("--threads", type=int, default=None,
                       help="parallel training runs (process pool)")
    run_p.add_argument("--format", choices=("csv", "json"), default="csv")

    gen_p = sub.add_parser("generate-data", help="write ground-truth samples only")
    gen_p.add_argument("config", type=Path)
    gen_p.add_argument("--out-dir", type=Path, default=None)
    gen_p.add_argument("--format", choices=("csv", "json"), default="csv")

    gc_p = sub.add_parser("gradcheck", help="finite-difference oracle suites")
    gc_p.add_argument("--seed", type=int, default=2024)

    eig_p = sub.add_parser("eigen", help="print the spectrum of a matrix file")
    eig_p.add_argument("matrix", type=Path)
    eig_p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_toml(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = (args.seed,)
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "out_dir", None) is not None:
        overrides["out_dir"] = str(args.out_dir)
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    return dataclasses.replace(config, **overrides) if overrides else config


def _cmd_run(args) -> int:
    config = _load_config(args)
    summaries = run_experiment(config)
    if args.format == "json":
        payload = [
            {
                "configuration": s.configuration,
                "seed": s.seed,
                "final_loss_sol": s.final_loss_sol,
                "validation_mae": s.validation_mae,
                "final_lambda_w": s.final_lambda_w,
                "aborted": s.aborted,
                "run_dir": s.run_dir,
            }
            for s in summaries
        ]
        print(json.dumps(payload, indent=1))
    else:
        print("configuration,seed,final_loss_sol,validation_mae,final_lambda_w,aborted")
        for s in summaries:
            print(
                f"{s.configuration},{s.seed},{s.final_loss_sol!r},"
                f"{s.validation_mae!r},{s.final_lambda_w!r},{int(s.aborted)}"
            )
    failures = [s for s in summaries if s.aborted]
    if failures:
        log.error("%d of %d runs aborted", len(failures), len(summaries))
        return 1
    return 0


def _cmd_generate_data(args) -> int:
    config = _load_config(args)
    data = generate_data(config)
    out_dir = Path(config.out_dir) / config.scenario
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        path = out_dir / "data.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "t": data.times.tolist(),
                    "x1": data.x1.tolist(),
                    "x2": data.x2.tolist(),
                },
                fh,
            )
    else:
        path = out_dir / "data.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,x1,x2\n")
            for t, a, b in zip(data.times, data.x1, data.x2):
                fh.write(f"{float(t)!r},{float(a)!r},{float(b)!r}\n")
    print(f"wrote {data.times.size} samples to {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradcheck(seed=args.seed)
    for result in results:
        print(result.line())
    return 0 if all(r.passed for r in results) else 1


def _read_matrix(path: Path) -> np.ndarray:
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        body = line.split("#", 1)[0].replace(",", " ").strip()
        if not body:
            continue
        rows.append([float(tok) for tok in body.split()])
    if not rows:
        raise ValueError(f"{path}: no matrix rows found")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or len(rows) != widths.pop():
        raise ValueError(f"{path}: matrix must be square")
    return np.array(rows, dtype=np.float64)


def _cmd_eigen(args) -> int:
    matrix = _read_matrix(args.matrix)
    result = eigen(matrix)
    freq, _ = _frequency(result.values)
    damp, _, _ = _damping(result.values)
    re_abs = np.abs(result.values.real)
    if np.max(re_abs) < 1e-6:
        stiffness = 1.0
    else:
        stiffness = float(np.max(re_abs) / max(np.min(re_abs), 1e-6))
    if args.format == "json":
        print(
            json.dumps(
                {
                    "eigenvalues": [
                        {"re": float(v.real), "im": float(v.imag),
                         "frequency_hz": float(f), "damping": float(dl)}
                        for v, f, dl in zip(result.values, freq, damp)
                    ],
                    "stiffness_ratio": stiffness,
                    "degenerate": result.degenerate,
                    "iterations": result.iterations,
                },
                indent=1,
            )
        )
    else:
        print("re,im,frequency_hz,damping")
        for v, f, dl in zip(result.values, freq, damp):
            print(f"{float(v.real)!r},{float(v.imag)!r},{float(f)!r},{float(dl)!r}")
        print(f"stiffness_ratio,{stiffness!r}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "generate-data":
            return _cmd_generate_data(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        return _cmd_eigen(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # noqa: BLE001 - CLI boundary
        log.exception("runtime failure")
        return 1


if __name__ == "__main__":
    sys.exit(main())
