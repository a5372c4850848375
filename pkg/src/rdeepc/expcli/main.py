"""``rdeepc`` command line.

    rdeepc run <config.json> [--seed N] [--runs N] [--out DIR] [--parallel N]
    rdeepc validate <config.json>

Exit codes: 0 success, 2 configuration error (nothing written), 3 runtime failure.
Log level comes from ``RDEEPC_LOG`` (error, info or debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from rdeepc.errors import RdeepcError
from rdeepc.expcli.config import ConfigError, ExperimentConfig, load_config
from rdeepc.expcli.reporting import write_json
from rdeepc.expcli.suites import SUITES, ExperimentFailure

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("rdeepc")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from rdeepc import __version__
        return __version__


def _setup_logging():
    name = os.environ.get("RDEEPC_LOG", "error").lower()
    level = LOG_LEVELS.get(name, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if name not in LOG_LEVELS:
        log.error("RDEEPC_LOG=%r not recognized; using 'error'", name)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdeepc", description="Recursive DeePC experiments")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a JSON config")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--runs", type=int, dest="monte_carlo_runs")
    run.add_argument("--out", dest="output_dir")
    run.add_argument("--parallel", type=int)
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    return p


def _manifest(cfg: ExperimentConfig, artifacts, elapsed: float, status: str) -> dict:
    return {"experiment": cfg.experiment, "config_sha256": cfg.digest(), "seed": cfg.seed,
            "config": cfg.as_dict(), "library_version": _version(), "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "artifacts": sorted(artifacts),
            "elapsed_s": elapsed, "status": status}


def run_experiment(cfg: ExperimentConfig) -> int:
    out = Path(cfg.output_dir)
    if not out.is_absolute():
        out = Path.cwd() / out
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status, code = "ok", EXIT_OK
    try:
        summary = SUITES[cfg.experiment](cfg, out)
        if summary.get("failures"):
            status, code = "failed", EXIT_RUNTIME
            for f in summary["failures"]:
                print(f"run {f['run']} ({f['algorithm']}) failed at step {f['step']}: {f['error']}", file=sys.stderr)
    except (RdeepcError, ExperimentFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        summary = {"experiment": cfg.experiment, "error": f"{type(exc).__name__}: {exc}"}
        status, code = "failed", EXIT_RUNTIME
        print(f"runtime failure: {summary['error']}", file=sys.stderr)
    except OSError as exc:
        summary = {"experiment": cfg.experiment, "error": str(exc)}
        status, code = "failed", EXIT_RUNTIME
        print(f"i/o failure: {exc}", file=sys.stderr)
    write_json(summary, out / "summary.json")
    artifacts = [p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json"]
    write_json(_manifest(cfg, artifacts, time.perf_counter() - t0, status), out / "manifest.json")
    log.info("wrote %d artifacts to %s", len(artifacts) + 1, out)
    return code


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    overrides = {}
    if args.command == "run":
        overrides = {k: getattr(args, k) for k in ("seed", "monte_carlo_runs", "output_dir", "parallel")}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.experiment})")
        return EXIT_OK
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
