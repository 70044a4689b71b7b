"""Command line entry point: ``mimefl run|sweep|oracle <config>``.

``<config>`` is a path to an INI file or the name of a bundled scenario.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..core import ContractViolation
from .config import SCENARIOS, ConfigError, format_config, load_config, parse_grid, with_overrides
from .experiment import run_experiment, run_oracles, sweep


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimefl", description="Deterministic federated optimization simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help=f"config file or bundled scenario ({', '.join(SCENARIOS)})")
        sp.add_argument("--seed", type=int, help="override experiment.seed")
        sp.add_argument("--out", help="override the output directory")
        sp.add_argument("--workers", type=int, help="threads simulating clients within a round")
        sp.add_argument("--print-config", action="store_true", help="print the normalized config and exit")

    run = sub.add_parser("run", help="run every algorithm in the config")
    common(run)
    run.add_argument("--no-plot", action="store_true", help="skip SVG plots")

    sw = sub.add_parser("sweep", help="grid search over algorithm fields")
    common(sw)
    sw.add_argument("--grid", help="grid file with a [grid] section (defaults to the config's own)")
    sw.add_argument("--no-plot", action="store_true", help="skip SVG plots")
    sw.add_argument("--cells", type=int, default=1, help="grid cells to run in parallel")

    orc = sub.add_parser("oracle", help="measure constants and check round identities")
    common(orc)
    return p


def _print_summary(table) -> None:
    for s in table.summaries:
        mark = " *" if s.best else ""
        hit = "-" if s.rounds_to_eps is None else str(s.rounds_to_eps)
        print(f"{s.algo:<32} {s.status:<9} f-f*={s.final_f_gap:.6g} |grad|^2={s.final_grad_norm_sq:.6g} "
              f"rounds_to_eps={hit}{mark}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, seed=args.seed, out=args.out, workers=args.workers)
        if getattr(args, "no_plot", False):
            cfg = with_overrides(cfg, plot=False)
        if args.print_config:
            sys.stdout.write(format_config(cfg))
            return 0
        out = Path(cfg.out)
        if args.command == "oracle":
            rows = run_oracles(cfg, out)
            failed = [r for r in rows if r.holds is False]
            checked = [r for r in rows if r.holds is not None]
            print(f"{len(checked)} checks, {len(failed)} failed; wrote {out / 'oracle.csv'}")
            return 1 if failed else 0
        if args.command == "sweep":
            grid = parse_grid(Path(args.grid).read_text()) if args.grid else cfg.grid
            table = sweep(cfg, grid, out, workers=args.cells)
        else:
            table = run_experiment(cfg, out)
        if cfg.plot:
            from .plotting import emit_plot

            emit_plot(table, out)
        _print_summary(table)
        return 0
    except (ConfigError, ContractViolation, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
