"""Command-line entry point: ``vqsense <stage> --config run.yaml``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from vqsense import config as config_mod
from vqsense import pipeline
from vqsense.circuits import CircuitError
from vqsense.config import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

log = logging.getLogger("vqsense")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqsense", description="Variational quantum sensing pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in pipeline.STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", help="YAML run configuration (defaults apply when omitted)")
        p.add_argument("--out", help="artifact directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides seed)")
        p.add_argument("--stage-seed", type=int, help="use this seed for the stage instead of the derived one")
        p.add_argument("--force", action="store_true", help="accept artifacts written under another config hash")
    p = sub.add_parser("summary", help="summarise the artifacts of a run")
    p.add_argument("--config", help="YAML run configuration (used for out_dir)")
    p.add_argument("--out", help="artifact directory")
    p = sub.add_parser("template", help="print a commented default configuration")
    p.add_argument("--out", help="write the template to this file instead of stdout")
    return parser


def _load_config(args) -> config_mod.RunConfig:
    if args.config and not os.path.isfile(args.config):
        raise ConfigError("--config", f"file {args.config} does not exist")
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    return cfg.with_overrides(seed=getattr(args, "seed", None), out_dir=args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "template":
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(config_mod.TEMPLATE)
            else:
                sys.stdout.write(config_mod.TEMPLATE)
            return EXIT_OK
        cfg = _load_config(args)
        if args.command == "summary":
            sys.stdout.write(pipeline.report_summary(cfg.out_dir))
            return EXIT_OK
        log.info("%s: config hash %s, output %s", args.command, cfg.hash(), cfg.out_dir)
        pipeline.run_stage(args.command, cfg, args.stage_seed, args.force)
        log.info("%s: done", args.command)
        return EXIT_OK
    except (ConfigError, CircuitError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("missing artifact: %s", exc)
        return EXIT_MISSING
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
