"""Command-line entry point: `wakerom <stage> --config case1 --out runs/case1`."""
import argparse
import logging
import sys
from pathlib import Path

from wakerom.config import ALL_VARIANTS, BUNDLED_CASES, get_settings, load_pipeline_config
from wakerom.errors import ConfigError, WakeRomError
from wakerom.pipeline import STAGES, RunLayout, cmd_pipeline, run_stage

logger = logging.getLogger("wakerom")

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_COMPUTE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wakerom",
        description="Non-intrusive reduced order modelling of inlet-to-wake maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline"):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline" else "run every stage")
        p.add_argument(
            "--config", default="quick",
            help=f"pipeline JSON path or bundled case ({', '.join(BUNDLED_CASES)})",
        )
        p.add_argument("--out", type=Path, default=None, help="run directory (default: WAKEROM_OUT_DIR/<case>)")
        p.add_argument("--seed", type=int, default=None, help="override the config rng_seed")
        p.add_argument("--variant", choices=ALL_VARIANTS, default=None, help="ROM variant to use")
    return parser


def _configure_logging(level: str, log_path: Path) -> logging.Handler:
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT)
    # basicConfig is a no-op once the root logger has handlers
    logging.getLogger().setLevel(level)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(log_path, encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
        cfg = load_pipeline_config(args.config)
    except ConfigError as e:
        print(f"wakerom: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = cfg.model_copy(update={"rng_seed": args.seed})

    out_dir = args.out or settings.out_dir / Path(args.config).stem
    handler = _configure_logging(settings.log_level.upper(), RunLayout(out_dir).log)
    try:
        if args.command == "pipeline":
            results = cmd_pipeline(cfg, out_dir, args.variant, settings)
        else:
            results = [run_stage(args.command, cfg, out_dir, args.variant, settings)]
    except ConfigError as e:
        logger.error(str(e))
        print(f"wakerom: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except WakeRomError as e:
        logger.error(str(e))
        print(f"wakerom: {e}", file=sys.stderr)
        return EXIT_COMPUTE
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()

    for result in results:
        print(result.summary)
        print()
    return EXIT_OK
