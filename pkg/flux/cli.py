"""
Command-line entry point.

Every experiment subcommand resolves a JSON config plus ``--set key=value`` overrides,
validates it, and writes its artifacts under a run directory. Exit codes: 0 on
success, 1 for invalid input or configuration, 2 for failures at run time.
"""

import argparse
import json
import sys
from typing import List, Optional, Sequence

from .config import AppConfig, ExperimentConfig, check
from .services.experiment import ExperimentService, flops_model
from .services.tokenopt import flops
from .utils import ConfigurationError, FluxError, ValidationError, get_logger, setup_logging

logger = get_logger(__name__)

EXPERIMENT_COMMANDS = ("gen-data", "pretrain", "finetune", "eval", "tokenopt", "grad-check")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _int_list(raw: str) -> List[int]:
    try:
        return [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{raw}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flux", description="Flexible video transformer experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. train.steps=200 (repeatable)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="run directory (default: FLUX_RUNS_DIR/<stamp>-<hash>)")
    common.add_argument("--log-level", help="overrides LOG_LEVEL")

    for name in EXPERIMENT_COMMANDS:
        cmd = sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
        if name == "eval":
            cmd.add_argument("--counts", type=_int_list, help="token counts, e.g. 8,16,32")
            cmd.add_argument("--to", action="store_true", help="also write the token-optimization sweep")

    fl = sub.add_parser("flops", help="print the cost model as JSON")
    fl.add_argument("--d-model", type=int, default=384)
    fl.add_argument("--depth", type=int, default=12)
    fl.add_argument("--heads", type=int, default=6)
    fl.add_argument("--mlp-ratio", type=float, default=4.0)
    fl.add_argument("--num-classes", type=int, default=400)
    fl.add_argument("--tokens", type=_int_list, default=[2048], help="one or more token counts")
    fl.add_argument("--out", help="also write flops.json, the resolved config and a manifest here")
    fl.add_argument("--log-level", help="overrides LOG_LEVEL")

    serve = sub.add_parser("serve", help="start the JSON inspection API")
    serve.add_argument("--port", type=int)
    serve.add_argument("--log-level", help="overrides LOG_LEVEL")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then --set overrides, then the dedicated flags (as overrides)."""
    overrides = [f"mode={json.dumps(args.command)}", *args.overrides]
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out:
        overrides.append(f"out_dir={json.dumps(args.out)}")
    if getattr(args, "counts", None):
        overrides.append(f"eval.counts={json.dumps(args.counts)}")
    if getattr(args, "to", False):
        overrides.append("eval.token_opt=true")
    return check(ExperimentConfig.load(args.config, overrides))


def _flops(args: argparse.Namespace, app_cfg: AppConfig) -> int:
    cfg = flops_model(args.d_model, args.depth, args.heads, args.mlp_ratio, args.num_classes)
    if args.out:
        exp = ExperimentConfig(mode="flops", model=cfg, teacher=None, out_dir=args.out)
        reports = ExperimentService(exp, app_cfg).flops_report(args.tokens)
    else:
        reports = [flops(cfg, n).to_dict() for n in args.tokens]
    print(json.dumps(reports[0] if len(reports) == 1 else reports, indent=2))
    return EXIT_OK


def _serve(args: argparse.Namespace, app_cfg: AppConfig) -> int:
    from . import create_app

    app = create_app(app_cfg)
    app.run(host="0.0.0.0", port=args.port or app_cfg.port)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        app_cfg = AppConfig()
        if args.log_level:
            app_cfg.log_level = args.log_level
        setup_logging(app_cfg.log_level)

        if args.command == "flops":
            return _flops(args, app_cfg)
        if args.command == "serve":
            return _serve(args, app_cfg)

        cfg = resolve_config(args)
        service = ExperimentService(cfg, app_cfg)
        summary = service.run()
        print(json.dumps({"run_dir": str(service.run_dir), **summary}, indent=2, default=str))
        return EXIT_OK
    except (ValidationError, ConfigurationError) as exc:
        logger.error("Invalid input", error=exc.message, details=exc.details)
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_INVALID
    except FluxError as exc:
        logger.error("Run failed", error=exc.message, details=exc.details)
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception("Unexpected failure", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
