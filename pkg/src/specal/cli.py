"""``specal`` command line.

Exit codes: 0 success, 2 usage or state error (bad flags, missing or stale
predecessor stage), 3 artifact integrity error, 1 any other failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .core import IntegrityError, SpecalError, StateError, DomainError
from .pipeline import STAGE_FUNCTIONS, STAGES, PipelineConfig, run_all
from .store import ArtifactStore

log = logging.getLogger("specal")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_INTEGRITY = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON pipeline configuration")
    p.add_argument("--out", metavar="DIR", help="artifact directory (overrides the config)")
    p.add_argument("--force", action="store_true", help="run even if predecessor artifacts are stale")
    for name in ("design-train", "design-test", "noise", "mcmc", "mle"):
        p.add_argument(f"--seed-{name}", type=int, metavar="INT")
    p.add_argument("--q", type=int, metavar="INT", help="number of principal components")
    p.add_argument("--lambda-y", type=float, metavar="FLOAT", help="observation precision")
    p.add_argument("--samples", type=int, metavar="INT", help="post-burn-in MCMC samples per chain")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specal", description="Emulate and calibrate a two-element emission-spectrum model."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("run-all",):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "run-all" else "run every stage")
        _common(p)
        if name == "design":
            p.add_argument(
                "--kind",
                choices=("training", "test"),
                help="which design --m and --seed apply to (both designs are always written)",
            )
            p.add_argument("--m", type=int, metavar="INT", help="number of design points")
            p.add_argument("--seed", type=int, metavar="INT", help="design seed")
        if name == "calibrate":
            p.add_argument("--case", default="all", help="'all' or comma-separated test-case indices")
    return parser


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    over = {
        "out": args.out,
        "q": args.q,
        "lambda_y": args.lambda_y,
        "n_samples": args.samples,
        "seed_design_train": args.seed_design_train,
        "seed_design_test": args.seed_design_test,
        "seed_noise": args.seed_noise,
        "seed_mcmc": args.seed_mcmc,
        "seed_mle": args.seed_mle,
    }
    if getattr(args, "m", None) is not None or getattr(args, "seed", None) is not None:
        if args.kind is None:
            raise DomainError("--m and --seed need --kind training or --kind test")
        suffix = "train" if args.kind == "training" else "test"
        over[f"m_{suffix}"] = args.m
        over[f"seed_design_{suffix}"] = args.seed
    return cfg.with_overrides(**over)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="specal: %(message)s"
    )
    try:
        cfg = config_from_args(args)
        if args.command == "run-all":
            run_all(cfg, force=args.force)
        else:
            store = ArtifactStore(cfg.out)
            kw = {"case": args.case} if args.command == "calibrate" else {}
            STAGE_FUNCTIONS[args.command](store, cfg, force=args.force, **kw)
    except IntegrityError as exc:
        print(f"specal: integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (StateError, DomainError) as exc:
        print(f"specal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpecalError as exc:
        print(f"specal: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    log.info("%s finished; artifacts in %s", args.command, cfg.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
