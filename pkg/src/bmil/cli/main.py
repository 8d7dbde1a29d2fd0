"""Command line entry point.

Usage:
    bmil <kind> --config FILE [--seed N] [--workers N] [--out DIR]
    bmil predict --d D --M M --N N [--out DIR]

Environment: BMIL_WORKERS overrides the worker count.
Exit codes: 0 ok, 2 config error, 3 extinction, 4 infeasible, 5 internal.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from ..errors import ConfigError
from .config import KINDS, validate_config
from .runner import run_experiment

_EXIT = {"ok": 0, "config": 2, "extinct": 3, "infeasible": 4, "internal": 5}


def _build_parser():
    ap = argparse.ArgumentParser(prog="bmil", description=__doc__)
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, help="override master_seed")
    ap.add_argument("--workers", type=int, help="override worker count")
    ap.add_argument("--out", help="override output directory")
    ap.add_argument("--d", type=int, help="dimension (predict shortcut)")
    ap.add_argument("--M", type=int, help="packet size M (predict shortcut)")
    ap.add_argument("--N", type=int, help="packet size N (predict shortcut)")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.config:
        try:
            doc = json.loads(open(args.config).read())
        except (OSError, json.JSONDecodeError) as e:
            print(f"config: {e}", file=sys.stderr)
            return _EXIT["config"]
    else:
        if args.kind != "predict":
            print("a --config file is required for this kind", file=sys.stderr)
            return _EXIT["config"]
        doc = {
            "kind": "predict",
            "d": args.d if args.d is not None else 2,
            "packet": {"M": args.M or 1, "N": args.N or 1},
        }
    doc["kind"] = args.kind
    if args.seed is not None:
        doc["master_seed"] = args.seed
    if args.out is not None:
        doc["out"] = args.out
    env_workers = os.environ.get("BMIL_WORKERS")
    if args.workers is not None:
        doc["workers"] = args.workers
    elif env_workers:
        try:
            doc["workers"] = int(env_workers)
        except ValueError:
            print("BMIL_WORKERS must be an integer", file=sys.stderr)
            return _EXIT["config"]

    cfg, issues = validate_config(doc)
    if cfg is None:
        for issue in issues:
            print(f"config error at {issue}", file=sys.stderr)
        return _EXIT["config"]
    try:
        manifest, payload, status = run_experiment(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return _EXIT["config"]
    except Exception as e:  # noqa: BLE001 - boundary
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return _EXIT["internal"]
    print(json.dumps({"status": status, "out": cfg.out_dir, "config_hash": manifest.config_hash}))
    return _EXIT.get(status, 5)


if __name__ == "__main__":
    sys.exit(main())
