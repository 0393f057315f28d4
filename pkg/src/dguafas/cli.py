"""Command-line entry point.

Exit codes: 0 success, 1 one or more sweep cells failed, 2 invalid config,
3 training diverged, 4 I/O or corrupt input file.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from . import config as config_mod
from . import experiment
from .errors import (
    ArchitectureError,
    ChecksumError,
    DivergenceError,
    ParseError,
    ProtocolError,
    SchemaError,
)

EXIT_OK, EXIT_CELLS_FAILED, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("dguafas")


def _load(args):
    cfg = config_mod.load(args.config, output_dir=args.output_dir)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_run(args) -> int:
    res = experiment.run_experiment(_load(args), plots=not args.no_plots)
    r = res.report
    print(f"AUC {r.auc:.4f}  HTER {r.hter:.4f}  threshold {r.threshold:.4f} ({r.threshold_source})  -> {res.output_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    axes = set(args.axis or [])
    if args.seeds is not None:
        axes.add("seed")
    if not axes:
        raise SchemaError("sweep needs at least one --axis")
    res = experiment.run_sweep(_load(args), axes, seeds=args.seeds, jobs=args.jobs, plots=not args.no_plots)
    for s in res.summary:
        print(f"{s['protocol']:>10} {s['ablation']:>9}  AUC mean {s['auc_mean']:.4f} median {s['auc_median']:.4f}"
              f"  HTER median {s['hter_median']:.4f}  (n={s['n']}, failed={s['n_failed']})")
    if res.n_failed:
        print(f"{res.n_failed} of {len(res.rows)} cells failed; see cells.csv", file=sys.stderr)
        return EXIT_CELLS_FAILED
    return EXIT_OK


def cmd_eval(args) -> int:
    r = experiment.evaluate_checkpoint(args.checkpoint, _load(args), plots=not args.no_plots)
    print(f"AUC {r.auc:.4f}  HTER {r.hter:.4f}  threshold {r.threshold:.4f} ({r.threshold_source})")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    path = experiment.generate_data(_load(args))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_schema(args) -> int:
    if args.out:
        config_mod.write_schema(args.out)
    else:
        import json

        print(json.dumps(config_mod.CONFIG_SCHEMA, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--output-dir", help=f"override output_dir (also ${config_mod.OUTPUT_DIR_ENV})")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="dguafas", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", parents=[common], help="train and evaluate one experiment")
    s.add_argument("config")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="run a grid of experiments and summarise")
    s.add_argument("config")
    s.add_argument("--axis", action="append", choices=("protocol", "ablation", "seed"),
                   help="sweep axis; repeat to combine")
    s.add_argument("--seeds", type=int, nargs="+", help="explicit seed list (implies --axis seed)")
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the config's test split")
    s.add_argument("checkpoint")
    s.add_argument("config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gen-data", parents=[common], help="write the configured dataset as CSV")
    s.add_argument("config")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("schema", help="print or write the config JSON schema")
    s.add_argument("--out")
    s.set_defaults(func=cmd_schema, verbose=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SchemaError, ProtocolError, ArchitectureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ParseError, ChecksumError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
