"""Command-line harness: ``lab run|suites|grid``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import config as cfgmod
from .errors import ConfigError
from .grid import verify_grid
from .suites import ExperimentContext, jsonable, list_suites, resolve_suites, run_suite, write_reports

log = logging.getLogger("dyadiclab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--jobs", type=int, default=1, help="suites run concurrently")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="lab", description="Dyadic-tree verification lab")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run the suites selected by a config")
    run.add_argument("config")
    run.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    sub.add_parser("suites", help="list the registered suites")
    grid = sub.add_parser("grid", parents=[common], help="build or verify the cached grid family")
    grid.add_argument("action", choices=["build", "verify"])
    grid.add_argument("config")
    return ap


def _load(args):
    cfg = cfgmod.load(args.config)
    return cfg.with_overrides(seed=args.seed, out=args.out)


def cmd_run(args) -> int:
    cfg = _load(args)
    names = resolve_suites(args.suite or cfg.suites)
    ctx = ExperimentContext(cfg, cache_dir=cfg.out, log=log.info)
    ctx.family  # build or load once before any suite starts

    def one(name):
        log.info("running %s", name)
        return run_suite(name, ctx)

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(one, names))
    failed = []
    for res in results:  # report writing is serialized, in registry order
        path = write_reports(res, cfg, cfg.out)
        print(f"{'PASS' if res.passed else 'FAIL'}  {res.name:<20} {path}")
        for a in res.failures():
            print(f"      failed: {a.name}: {a.detail}")
        if not res.passed:
            failed.append(path)
    for path in failed:
        print(f"failing report: {path}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_grid(args) -> int:
    cfg = _load(args)
    ctx = ExperimentContext(cfg, cache_dir=cfg.out, log=log.info)
    fam = ctx.family
    path = os.path.join(cfg.out, "grid.bin")
    if args.action == "build":
        print(f"grid family: {fam.K0} grids, depth {fam.depth}, mesh {fam.mesh.size} -> {path}")
        return EXIT_OK
    checks = [verify_grid(g) for g in fam.grids]
    doc = {
        "grid": path,
        "passed": all(v.passed for v in checks),
        "grids": [
            {"id": g.grid_id, "passed": v.passed, "epsilon": v.epsilon, "frakC": v.frak_c, "violations": v.violations}
            for g, v in zip(fam.grids, checks)
        ],
    }
    print(json.dumps(jsonable(doc), sort_keys=True, indent=2))
    return EXIT_OK if doc["passed"] else EXIT_FAIL


def main(argv=None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    if args.command == "suites":
        sys.stdout.write(list_suites())
        return EXIT_OK
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_grid(args)
    except ConfigError as exc:
        print(f"lab: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        print(f"lab: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"lab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
