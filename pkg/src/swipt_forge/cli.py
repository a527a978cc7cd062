"""``swipt-forge`` command-line driver.

Usage: ``swipt-forge <subcommand> --config <file> --seed <n> --out <dir> [--quick]``.
Exit codes: 0 success, 1 configuration error, 2 infeasible optimisation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from . import experiments
from .allocation import InfeasibleAllocation
from .config import ConfigError, ExperimentConfig, config_hash, dump_config, load_config
from .pa import InfeasibleOperatingPoint

__all__ = ["main", "SUBCOMMANDS", "write_csv"]

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2

SUBCOMMANDS = {
    "run_papr_ccdf": (experiments.papr_ccdf, "papr_ccdf.csv"),
    "run_tr_convergence": (experiments.tr_convergence, "tr_convergence.csv"),
    "run_rectifier_sweep": (experiments.rectifier_sweep, "rectifier_sweep.csv"),
    "run_e2e": (experiments.end_to_end, "e2e.csv"),
    "run_re_region": (experiments.re_regions, "re_region.csv"),
    "run_allocate": (experiments.allocation, "allocation.csv"),
}


def write_csv(path: Path, table, cfg: ExperimentConfig, command: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# swipt-forge {command} config_sha256={config_hash(cfg)} seed={cfg.master_seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _write_report(path: Path, report: dict) -> None:
    lines = [f"{k} = {v}" for k, v in report.items() if isinstance(v, (int, float, str, bool, list, type(None)))]
    path.write_text("\n".join(lines) + "\n")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swipt-forge", description="PAPR-aware MIMO-OFDM SWIPT experiments.")
    p.add_argument("subcommand", choices=sorted(SUBCOMMANDS))
    p.add_argument("--config", type=Path, help="JSON configuration (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--out", type=Path, help="output directory, overrides the config")
    p.add_argument("--quick", action="store_true", help="K=256, oversampling 2")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, master_seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, output_dir=str(args.out))
        if args.quick:
            cfg = cfg.quick()
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    func, filename = SUBCOMMANDS[args.subcommand]
    stem = Path(filename).stem
    try:
        table = func(cfg, out) if args.subcommand == "run_allocate" else func(cfg)
    except (InfeasibleAllocation, InfeasibleOperatingPoint) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        _write_report(out / f"{stem}_report.txt", {"feasible": False, "reason": str(exc)})
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    write_csv(out / filename, table, cfg, args.subcommand)
    dump_config(cfg, out / f"{stem}_config.json")
    _write_report(out / f"{stem}_report.txt", table.report)
    for k, v in table.report.items():
        if isinstance(v, (int, float, str, bool, list, type(None))):
            print(f"{k}: {v}")
    if args.subcommand == "run_allocate" and not table.report.get("feasible", True):
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
