# app/cli.py
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from app.config import STRATEGY_NAMES, load_config, parse_overrides
from app.pipeline import run_pipeline, run_stage
from core.errors import ConfigError, DataError, StageError, UndefinedSimilarityError, UnknownIdError
from core.idgen import IdAssignment
from core.ingest import (
    DatasetIndex,
    InteractionFormat,
    build_index,
    compute_stats,
    format_stats,
    generate_synthetic,
    parse_interactions,
    write_interactions,
)
from core.promptgen import build_id_trie, valid_continuations
from core.utils_io import is_jsonl_file, partial_output, read_json, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

# subcommand -> pipeline stage it runs
STAGE_COMMANDS = {
    "ingest": "ingest",
    "walk": "walk",
    "embed": "embed",
    "cluster": "cluster",
    "assign-ids": "idgen",
    "metrics": "metrics",
    "prompts": "promptgen",
}

# argparse dest -> config key
FLAG_KEYS = {
    "input": "paths.input",
    "workdir": "paths.workdir",
    "templates": "paths.templates",
    "seed": "pipeline.seed",
    "workers": "pipeline.workers",
    "walk_length": "walk.walk_length",
    "rounds": "walk.rounds_per_node",
    "dim": "skipgram.dim",
    "epochs": "skipgram.epochs",
    "learning_rate": "skipgram.learning_rate",
    "window": "skipgram.window",
    "negatives": "skipgram.negatives",
    "groups": "cluster.groups",
    "strategy": "ids.strategy",
    "alpha": "ids.alpha",
    "pair_samples": "metrics.pair_samples",
    "item_samples": "metrics.item_samples",
    "trials": "metrics.trials",
    "tasks": "prompts.tasks",
}


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="INI config file")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    parser.add_argument("--workdir", help="artifact directory")
    parser.add_argument("--seed", type=int, help="global seed")
    parser.add_argument("--workers", type=int, help="parallel workers for walks and embedding")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="metaid", description="META ID: identifiers for LLM-based recommendation")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("pipeline", help="run every stage")
    _common(p)
    p.add_argument("--input", help="raw interaction file")
    p.add_argument("--templates", help="prompt template file")
    p.add_argument("--strategy", choices=STRATEGY_NAMES)
    p.add_argument("--groups", type=int)
    p.add_argument("--force", action="store_true", help="rerun stages that are up to date")

    p = sub.add_parser("ingest", help="parse, index and split the raw file")
    _common(p)
    p.add_argument("--input", help="raw interaction file")

    p = sub.add_parser("stats", help="print dataset statistics")
    p.add_argument("--input", type=Path, help="raw interaction file (default: <workdir>/index.json)")
    p.add_argument("--workdir", default="work")
    p.add_argument("--jsonl", action="store_true", help="input is JSON lines (implied by a .jsonl or .ndjson suffix)")

    p = sub.add_parser("walk", help="sample meta-path walks")
    _common(p)
    p.add_argument("--walk-length", type=int)
    p.add_argument("--rounds", type=int)

    p = sub.add_parser("embed", help="train skip-gram embeddings")
    _common(p)
    p.add_argument("--dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--negatives", type=int)

    p = sub.add_parser("cluster", help="cosine K-Means over the embeddings")
    _common(p)
    p.add_argument("--groups", type=int)

    p = sub.add_parser("assign-ids", help="build META, RID or SID identifiers")
    _common(p)
    p.add_argument("--strategy", choices=STRATEGY_NAMES)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("metrics", help="Diversity and Memorization scores")
    _common(p)
    p.add_argument("--strategy", choices=STRATEGY_NAMES)
    p.add_argument("--pair-samples", type=int)
    p.add_argument("--item-samples", type=int)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("prompts", help="emit the instruction corpus and ID trie")
    _common(p)
    p.add_argument("--templates", help="prompt template file")
    p.add_argument("--tasks", help="comma-separated task list")

    p = sub.add_parser("trie", help="query valid continuations of an item ID prefix")
    p.add_argument("--workdir", default="work")
    p.add_argument("prefix", nargs="*", help="ID tokens typed so far")

    p = sub.add_parser("synth", help="write a block-structured synthetic dataset")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--users-per-block", type=int, default=50)
    p.add_argument("--items-per-block", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    values = {
        key: str(getattr(args, dest))
        for dest, key in FLAG_KEYS.items()
        if getattr(args, dest, None) is not None
    }
    values.update(parse_overrides(args.set))
    return values


# ========================
# Commands
# ========================

def _cmd_pipeline(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    result = run_pipeline(config, force=args.force)
    logger.info("pipeline finished: %d stages run, %d up to date", len(result.ran), len(result.skipped))
    return EXIT_OK


def _cmd_stage(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    files = run_stage(config, STAGE_COMMANDS[args.command])
    for name in files:
        print(Path(config.workdir) / name)
    return EXIT_OK


def _cmd_stats(args: argparse.Namespace) -> int:
    if args.input is not None:
        fmt = InteractionFormat(kind="jsonl") if args.jsonl or is_jsonl_file(args.input) else InteractionFormat()
        with open(args.input, "rb") as fh:
            index = build_index(parse_interactions(fh, fmt))
    else:
        index = DatasetIndex.from_dict(read_json(Path(args.workdir) / "index.json"))
    sys.stdout.write(format_stats(compute_stats(index)))
    return EXIT_OK


def _cmd_trie(args: argparse.Namespace) -> int:
    workdir = Path(args.workdir)
    index = DatasetIndex.from_dict(read_json(workdir / "index.json"))
    assignment = IdAssignment.from_id_map(read_json(workdir / "id_map.json"), index)
    trie = build_id_trie(assignment)
    with partial_output(workdir / "trie.json") as tmp:
        write_json(tmp, trie.to_dict(index.item_names))
    if args.prefix:
        for tok in sorted(valid_continuations(trie, args.prefix)):
            print(tok)
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    records = generate_synthetic(args.blocks, args.users_per_block, args.items_per_block, args.noise, args.seed)
    with partial_output(args.output) as tmp:
        write_interactions(records, tmp)
    logger.info("wrote %d synthetic interactions to %s", len(records), args.output)
    return EXIT_OK


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, StageError) and error.__cause__ is not None:
        error = error.__cause__
    if isinstance(error, ConfigError):
        return EXIT_USAGE
    if isinstance(error, (DataError, UnknownIdError, UndefinedSimilarityError, OSError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    commands = {"pipeline": _cmd_pipeline, "stats": _cmd_stats, "trie": _cmd_trie, "synth": _cmd_synth}
    handler = commands.get(args.command, _cmd_stage)
    try:
        return handler(args)
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_INTERNAL:
            logger.exception("internal error")
        else:
            logger.error("%s", e)
        return code
