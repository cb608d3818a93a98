"""Command line entry point: run, verify, audit, report.

Exit codes: 0 ok, 2 configuration error, 3 verification failure.
Flags may also be set through ``SPECTRUMCHAIN_<FLAG>`` environment
variables (for example ``SPECTRUMCHAIN_SEED=7``); explicit flags win.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .ledger import Chain, LedgerError, verify_bytes
from .scenario import ConfigError, load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
ENV_PREFIX = "SPECTRUMCHAIN_"


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper(), default)


def _int_env(name: str):
    v = _env(name)
    if v is None:
        return None
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{ENV_PREFIX}{name.upper()} must be an integer, got {v!r}") from None


def parse_seed_range(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    try:
        a, b = int(lo), int(hi if sep else lo)
    except ValueError:
        raise ConfigError(f"--seeds expects a..b, got {text!r}") from None
    if b < a:
        raise ConfigError(f"empty seed range {text!r}")
    return list(range(a, b + 1))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectrumchain",
                                description="Spectrum-sharing ledger simulator and auditor.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write ledger, trace and metrics")
    r.add_argument("scenario", help="scenario YAML file")
    r.add_argument("--out", default=None, help="output directory (default: out)")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--mode", choices=("zone", "flood"), default=None)
    r.add_argument("--chains", type=int, default=None, help="number of regional chains")
    r.add_argument("--seeds", default=None, metavar="A..B",
                   help="run every seed in A..B concurrently into OUT/seed-N")
    r.add_argument("--jobs", type=int, default=None, help="worker processes for --seeds")

    v = sub.add_parser("verify", help="check a ledger file's hash chain")
    v.add_argument("ledger")

    a = sub.add_parser("audit", help="replay a ledger and check interference safety")
    a.add_argument("ledger")
    a.add_argument("scenario", help="scenario the ledger was produced from")

    m = sub.add_parser("report", help="summarise a run directory and cross-check its trace")
    m.add_argument("out_dir")
    return p


def _run_one(args: tuple) -> dict:
    from .runner import run
    scenario_path, out, mode, seed, chains = args
    sc = load_scenario(scenario_path).with_overrides(chains=chains)
    return run(sc, out, mode, seed)


def cmd_run(ns) -> int:
    out = Path(ns.out or _env("out", "out"))
    mode = ns.mode or _env("mode", "zone")
    if mode not in ("zone", "flood"):
        raise ConfigError(f"mode must be zone or flood, got {mode!r}")
    seed = ns.seed if ns.seed is not None else _int_env("seed")
    chains = ns.chains if ns.chains is not None else _int_env("chains")
    seeds_arg = ns.seeds or _env("seeds")
    # validate the scenario up front so config errors surface before any run
    sc = load_scenario(ns.scenario).with_overrides(seed=seed, chains=chains)
    if not seeds_arg:
        from .runner import run
        metrics = run(sc, out, mode)
        print(f"{sc.name}: seed {metrics['seed']}, {metrics['workload']} workload items, "
              f"{metrics['committed']} committed -> {out}")
        return EXIT_OK
    seeds = parse_seed_range(seeds_arg)
    jobs = ns.jobs or _int_env("jobs") or min(len(seeds), os.cpu_count() or 1)
    tasks = [(ns.scenario, out / f"seed-{s}", mode, s, chains) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_run_one, tasks))
    else:
        for t in tasks:
            _run_one(t)
    _merge(out, seeds, "metrics.csv")
    _merge(out, seeds, "run_metrics.csv")
    print(f"{sc.name}: seeds {seeds[0]}..{seeds[-1]} -> {out}")
    return EXIT_OK


def _merge(out: Path, seeds: list[int], name: str) -> None:
    """Concatenate per-seed CSVs in seed order, prefixing a seed column when
    the file does not already carry one."""
    header = None
    rows = []
    for s in seeds:
        with open(out / f"seed-{s}" / name, newline="", encoding="utf-8") as fh:
            rd = csv.reader(fh)
            h = next(rd)
            prefix = "seed" not in h
            h = (["seed"] + h) if prefix else h
            if header is None:
                header = h
            rows += [([str(s)] + r) if prefix else r for r in rd]
    with open(out / name, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_verify(ns) -> int:
    data = Path(ns.ledger).read_bytes()
    bad = verify_bytes(data)
    if bad is None:
        print("ok")
        return EXIT_OK
    print(f"first bad height: {bad}")
    return EXIT_VERIFY


def cmd_audit(ns) -> int:
    from .runner import audit_chain
    sc = load_scenario(ns.scenario)
    try:
        chain = Chain.load(ns.ledger)
    except LedgerError as exc:
        print(f"audit: {exc}")
        return EXIT_VERIFY
    rep = audit_chain(chain, sc.model)
    if rep.error:
        print(f"audit: replay failed at {rep.error}")
        return EXIT_VERIFY
    print(f"blocks {rep.blocks}, max margin {rep.max_margin_db:.6f} dB, "
          f"violations {len(rep.violations)}")
    for height, pid, margin in rep.violations:
        print(f"  block {height} {pid}: {margin:+.6f} dB over threshold")
    return EXIT_OK if rep.ok else EXIT_VERIFY


def cmd_report(ns) -> int:
    from .runner import RUN_COLUMNS, TX_COLUMNS, check_rows_against_trace
    from .simnet import read_trace
    out = Path(ns.out_dir)
    with open(out / "metrics.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    with open(out / "run_metrics.csv", newline="", encoding="utf-8") as fh:
        run_rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0]) != TX_COLUMNS:
        print("metrics.csv: unexpected columns")
        return EXIT_VERIFY
    problems = check_rows_against_trace(rows, read_trace(out / "trace.tsv"))
    print("per-transaction columns: " + ", ".join(TX_COLUMNS))
    print(f"rows: {len(rows)}")
    for r in run_rows:
        for col in RUN_COLUMNS:
            print(f"{col}: {r.get(col, '')}")
    if problems:
        print(f"trace cross-check: {len(problems)} mismatches")
        for p in problems[:20]:
            print("  " + p)
        return EXIT_VERIFY
    print("trace cross-check: ok")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "audit": cmd_audit, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return COMMANDS[ns.command](ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
