"""Command-line driver.

    jumpgen <command> --config path [--lambda x] [--seed n] [--out dir]

Exit status: 0 when every verdict passes, 1 on a failed verdict or numerical
error, 2 on an invalid invocation or configuration.
"""

import argparse
import json
import os
import sys
import uuid
from typing import List, Optional

from loguru import logger

from app.config import config
from app.models import const
from app.models.exception import ConfigError, JumpgenException
from app.models.schema import ExperimentConfig
from app.services import task as tm
from app.utils import utils


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jumpgen", description=config.project_description)
    p.add_argument("command", choices=const.COMMANDS, help="pipeline to run")
    p.add_argument("--config", required=True, metavar="JSON", help="experiment configuration file")
    p.add_argument(
        "--lambda",
        dest="lambdas",
        type=float,
        action="append",
        default=None,
        metavar="X",
        help="spectral parameter; repeatable, replaces 'lambdas' from the config",
    )
    p.add_argument("--seed", type=int, default=None, help="random seed for mc-oracle")
    p.add_argument("--out", default=None, metavar="DIR", help="output directory")
    p.add_argument("--version", action="version", version=f"%(prog)s {config.project_version}")
    return p


def _line_of(text: str, error) -> int:
    """Best-effort line number of the key a schema error points at."""
    keys = [p for p in error.absolute_path if isinstance(p, str)]
    if not keys:
        return 1
    needle = json.dumps(keys[-1])
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return 1


def _resolve_paths(raw: dict, base_dir: str):
    for key in ("kernel", "potential", "source"):
        section = raw.get(key)
        if isinstance(section, dict) and section.get("path") and not os.path.isabs(section["path"]):
            section["path"] = os.path.join(base_dir, section["path"])


def load_experiment(path: str, command: str, lambdas=None, seed=None, out=None) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"{path}: config file not found")
    with open(path, "r", encoding="utf-8") as fp:
        text = fp.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be an object")

    raw["command"] = command
    errors = utils.schema_errors(raw, "experiment.json")
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.absolute_path) or "<root>"
        raise ConfigError(f"{path}:{_line_of(text, first)}: {where}: {first.message}")

    if lambdas:
        raw["lambdas"] = list(lambdas)
    if seed is not None:
        raw.setdefault("mc", {})["seed"] = seed
    if out:
        raw["output_dir"] = out
    raw.setdefault("output_dir", os.path.join(utils.storage_dir("runs"), os.path.splitext(os.path.basename(path))[0]))
    if raw.get("window") == "auto":
        raw.pop("window")
    # kernel dim defaults to the grid dim
    grid_dim = raw.get("grid", {}).get("dim", 1)
    raw["kernel"].setdefault("dim", grid_dim)
    _resolve_paths(raw, os.path.dirname(os.path.abspath(path)))

    try:
        return ExperimentConfig(**raw)
    except ValueError as e:
        raise ConfigError(f"{path}:1: {e}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return const.EXIT_OK if e.code == 0 else const.EXIT_USAGE

    try:
        cfg = load_experiment(args.config, args.command, args.lambdas, args.seed, args.out)
    except ConfigError as e:
        print(e.message, file=sys.stderr)
        return e.status_code

    run_id = str(uuid.uuid4())
    try:
        report = tm.start(run_id, cfg)
    except ConfigError as e:
        return e.status_code
    except JumpgenException as e:
        logger.error(f"run failed: {e.message}")
        return e.status_code

    if not report.passed:
        print("failed checks: " + ", ".join(report.failed_checks()), file=sys.stderr)
        return const.EXIT_VERDICT_FAILED
    return const.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
