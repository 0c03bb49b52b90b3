"""Command-line front end.

    sosdensity bench      [--r 20] [--R 1..10] ...
    sosdensity portfolio  [--r 0..12] [--R 1..4]
    sosdensity risk-agg   [--reference exponential] [--modes moment1,l1:0.05]
    sosdensity wc         --config problem.json
    sosdensity cache      list | build | purge

Tables go to stdout; ``--out`` writes CSV plus a JSON metadata sidecar.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import ExperimentConfig, run
from .moments import (CACHE_ENV, build_table, cache_dir, list_cache, purge_cache, table_key, write_table)
from .experiments import parse_domain, parse_measure
from .wcsdp import BACKENDS

log = logging.getLogger("sosdensity")


def parse_range(text: str) -> list[int]:
    """``"3"`` -> [3], ``"0..4"`` -> [0..4], ``"1,3,5"`` -> [1, 3, 5]."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            a, b = int(a), int(b)
            if b < a:
                raise argparse.ArgumentTypeError(f"empty range {part!r}")
            out += list(range(a, b + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty range")
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    p.add_argument("--out", help="CSV output path (a .json metadata sidecar is written next to it)")
    p.add_argument("--r", type=parse_range, help="orders, e.g. 0..12 or 2,4")
    p.add_argument("--R", type=parse_range, help="heuristic iteration counts, e.g. 1..4")
    p.add_argument("--tol", type=float, help="solver tolerance (default 1e-9)")
    p.add_argument("--backend", choices=BACKENDS)
    p.add_argument("--threads", type=int, help="worker processes for independent cells")
    p.add_argument("--seed", type=int, help="seed recorded with the results")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sosdensity", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="upper bounds for the Matyas and Motzkin test functions")
    _common(p)
    p.add_argument("--functions", help="comma list (matyas,motzkin)")
    p.add_argument("--method", choices=("quadrature", "monomial"))

    p = sub.add_parser("portfolio", help="worst-case shortfall probability of a fixed portfolio")
    _common(p)

    p = sub.add_parser("risk-agg", help="worst-case probability that aggregated losses exceed a threshold")
    _common(p)
    p.add_argument("--reference", choices=("lognormal", "exponential", "uniform"))
    p.add_argument("--modes", help="comma list: moment0, moment1, moment2, histogram, distribution, l1:<tol>")

    p = sub.add_parser("wc", help="custom worst-case problem from a JSON config")
    _common(p)

    p = sub.add_parser("cache", help="manage the moment cache "
                                     f"(directory from --dir, ${CACHE_ENV} or ~/.cache/sosdensity)")
    p.add_argument("action", choices=("list", "build", "purge"))
    p.add_argument("--dir", help="cache directory")
    p.add_argument("--domain", help='JSON, e.g. \'{"kind": "box", "lower": [-1, -1], "upper": [1, 1]}\'')
    p.add_argument("--measure", default='{"kind": "lebesgue"}', help="JSON measure, e.g. {\"kind\": \"uniform\"}")
    p.add_argument("--degree", type=int, help="maximal total degree")
    return parser


KIND_OF = {"bench": "polyopt-bench", "portfolio": "portfolio", "risk-agg": "risk-aggregation", "wc": "custom-wc"}


def config_from_args(args) -> ExperimentConfig:
    kind = KIND_OF[args.command]
    if args.config:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_json(fh.read())
        if cfg.kind != kind:
            raise SystemExit(f"config {args.config} is for {cfg.kind!r}, not {kind!r}")
    else:
        if kind == "custom-wc":
            raise SystemExit("wc needs --config")
        cfg = ExperimentConfig.default(kind)
    for name in ("r", "R", "tol", "backend", "threads", "seed", "out"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if kind == "polyopt-bench":
        if args.r is not None or args.R is not None:
            rs = args.r or [20]
            Rs = args.R or [1]
            cfg.params["pairs"] = [[r, R] for r in rs for R in Rs]
        if args.functions:
            cfg.params["functions"] = args.functions.split(",")
        if args.method:
            cfg.params["method"] = args.method
    if kind == "risk-aggregation":
        if args.reference:
            cfg.params["reference"] = args.reference
            if not args.modes and args.reference != "lognormal":
                cfg.params["modes"] = ["moment0", "moment1", "moment2", "l1:0.1", "l1:0.05", "l1:0.02"]
        if args.modes:
            cfg.params["modes"] = args.modes.split(",")
    return cfg


def cache_command(args) -> int:
    if args.action == "list":
        entries = list_cache(args.dir)
        for e in entries:
            print(f"{e['path']}  n={e['n']}  degree={e['max_degree']}  entries={e['entries']}  bytes={e['bytes']}")
        if not entries:
            print(f"(empty: {cache_dir(args.dir)})")
        return 0
    if args.action == "purge":
        k = purge_cache(args.dir)
        print(f"removed {k} file(s) from {cache_dir(args.dir)}")
        return 0
    if not args.domain or args.degree is None:
        raise SystemExit("cache build needs --domain and --degree")
    dom = parse_domain(json.loads(args.domain))
    mu = parse_measure(json.loads(args.measure))
    table = build_table(dom, mu, args.degree)
    path = cache_dir(args.dir) / f"{table_key(dom, mu, args.degree)}.mom"
    try:
        write_table(table, path)
    except OSError as exc:
        raise SystemExit(f"cannot write {path}: {exc}")
    print(f"{path}  entries={len(table.values)}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "cache":
        return cache_command(args)
    cfg = config_from_args(args)
    try:
        cfg.validate()
    except (ValueError, KeyError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    table = run(cfg)
    print(table.render())
    if cfg.out:
        csv, side = table.write(cfg.out)
        print(f"wrote {csv} and {side}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
