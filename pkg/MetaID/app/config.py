# app/config.py
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Mapping, Optional, Tuple, Union

from core.cluster import ClusterConfig
from core.embed import SgConfig
from core.errors import ConfigError
from core.idgen import DEFAULT_ALPHA
from core.ingest import InteractionFormat
from core.metrics import MetricConfig
from core.promptgen import MAX_HISTORY, TASKS
from core.utils_io import derive_seed, text_digest
from core.walker import WalkConfig

PathLike = Union[str, Path]

STRATEGY_NAMES = ("meta", "rid", "sid")


def _bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _list(raw: str) -> Tuple[str, ...]:
    return tuple(p.strip() for p in raw.split(",") if p.strip())


def _ints(raw: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in _list(raw))


def _floats(raw: str) -> Tuple[float, ...]:
    return tuple(float(p) for p in _list(raw))


def _delimiter(raw: str) -> str:
    return {"tab": "\t", "\\t": "\t", "comma": ",", "space": " "}.get(raw, raw)


def _columns(raw: str) -> Tuple[Optional[str], ...]:
    # "-" marks a column to ignore
    return tuple(None if c == "-" else c for c in _list(raw))


# "section.key" -> (parser, default as written in a config file)
SCHEMA: Dict[str, Tuple[Callable[[str], Any], str]] = {
    "paths.input": (str, ""),
    "paths.workdir": (str, "work"),
    "paths.templates": (str, ""),
    "ingest.kind": (str, "delimited"),
    "ingest.delimiter": (_delimiter, "tab"),
    "ingest.columns": (_columns, "user,item,rating,timestamp"),
    "ingest.skip_header": (_bool, "false"),
    "split.ratios": (_floats, "0.8,0.1,0.1"),
    "walk.walk_length": (int, "64"),
    "walk.rounds_per_node": (int, "32"),
    "walk.ratings": (_ints, "1,2,3,4,5"),
    "skipgram.dim": (int, "64"),
    "skipgram.window": (int, "5"),
    "skipgram.negatives": (int, "5"),
    "skipgram.learning_rate": (float, "0.001"),
    "skipgram.epochs": (int, "10"),
    "skipgram.batch_size": (int, "256"),
    "skipgram.deterministic": (_bool, "true"),
    "cluster.groups": (int, "100"),
    "cluster.max_iters": (int, "100"),
    "cluster.tol": (float, "1e-6"),
    "ids.strategy": (str, "meta"),
    "ids.alpha": (float, str(DEFAULT_ALPHA)),
    "metrics.pair_samples": (int, "10000"),
    "metrics.item_samples": (int, "100"),
    "metrics.trials": (int, "5"),
    "metrics.softmax_temperature": (float, "1.0"),
    "metrics.exact": (_bool, "false"),
    "prompts.tasks": (_list, ",".join(TASKS)),
    "prompts.max_history": (int, str(MAX_HISTORY)),
    "pipeline.seed": (int, "0"),
    "pipeline.workers": (int, "1"),
}


@dataclass(frozen=True)
class PipelineConfig:
    """
    Everything a pipeline run depends on. Stage seeds inside the nested
    configs are ignored by the pipeline; it derives them from `seed`.
    """
    input: Optional[Path]
    workdir: Path
    templates: Optional[Path] = None
    fmt: InteractionFormat = InteractionFormat()
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    walk: WalkConfig = WalkConfig()
    skipgram: SgConfig = SgConfig()
    cluster: ClusterConfig = ClusterConfig()
    strategy: str = "meta"
    alpha: float = DEFAULT_ALPHA
    metrics: MetricConfig = MetricConfig()
    tasks: Tuple[str, ...] = TASKS
    max_history: int = MAX_HISTORY
    seed: int = 0
    workers: int = 1
    values: Mapping[str, str] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGY_NAMES:
            raise ConfigError(f"ids.strategy must be one of {', '.join(STRATEGY_NAMES)}, got '{self.strategy}'.")
        if self.alpha < 0:
            raise ConfigError("ids.alpha must be >= 0.")
        unknown = [t for t in self.tasks if t not in TASKS]
        if unknown:
            raise ConfigError(f"Unknown prompt tasks: {unknown}.")
        if self.seed < 0:
            raise ConfigError("pipeline.seed must be non-negative.")
        if self.workers < 1:
            raise ConfigError("pipeline.workers must be >= 1.")
        if self.max_history < 1:
            raise ConfigError("prompts.max_history must be >= 1.")

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)

    def seeded(self) -> "PipelineConfig":
        """Copy whose stage configs carry the seeds derived from `seed`."""
        return replace(
            self,
            walk=replace(self.walk, seed=self.stage_seed("walk")),
            skipgram=replace(self.skipgram, seed=self.stage_seed("embed"), workers=self.workers),
            cluster=replace(self.cluster, seed=self.stage_seed("cluster")),
            metrics=replace(self.metrics, seed=self.stage_seed("metrics")),
        )

    def digest(self) -> str:
        """Digest of every setting that influences artifact content."""
        payload = {k: v for k, v in sorted(self.values.items()) if k not in ("paths.workdir", "pipeline.workers")}
        return text_digest(repr(payload))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input": str(self.input) if self.input else None,
            "workdir": str(self.workdir),
            "templates": str(self.templates) if self.templates else None,
            "fmt": asdict(self.fmt),
            "split_ratios": list(self.split_ratios),
            "walk": asdict(self.walk),
            "skipgram": asdict(self.skipgram),
            "cluster": asdict(self.cluster),
            "strategy": self.strategy,
            "alpha": self.alpha,
            "metrics": asdict(self.metrics),
            "tasks": list(self.tasks),
            "max_history": self.max_history,
            "seed": self.seed,
            "workers": self.workers,
        }


def read_config_file(path: PathLike) -> Dict[str, str]:
    """Flatten an INI file into {"section.key": raw value}."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}") from None
    values: Dict[str, str] = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            values[f"{section}.{key}"] = raw
    return values


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    """["walk.walk_length=20", ...] -> {"walk.walk_length": "20"}"""
    values: Dict[str, str] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"Override {pair!r} must look like section.key=value.")
        values[key.strip()] = raw.strip()
    return values


def build_config(*layers: Mapping[str, str]) -> PipelineConfig:
    """
    Merge raw layers (later wins: defaults, file, command line) and build
    the typed config.
    """
    raw = {key: default for key, (_, default) in SCHEMA.items()}
    for layer in layers:
        unknown = sorted(set(layer) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}.")
        raw.update({k: str(v) for k, v in layer.items() if v is not None})

    typed: Dict[str, Any] = {}
    for key, (parse, _) in SCHEMA.items():
        try:
            typed[key] = parse(raw[key])
        except ValueError as e:
            raise ConfigError(f"Bad value for {key}: {e}") from None

    ratios = typed["split.ratios"]
    if len(ratios) != 3:
        raise ConfigError("split.ratios needs three values.")

    return PipelineConfig(
        input=Path(typed["paths.input"]) if typed["paths.input"] else None,
        workdir=Path(typed["paths.workdir"]),
        templates=Path(typed["paths.templates"]) if typed["paths.templates"] else None,
        fmt=InteractionFormat(
            kind=typed["ingest.kind"],
            delimiter=typed["ingest.delimiter"],
            columns=typed["ingest.columns"],
            skip_header=typed["ingest.skip_header"],
        ),
        split_ratios=ratios,
        walk=WalkConfig(
            walk_length=typed["walk.walk_length"],
            rounds_per_node=typed["walk.rounds_per_node"],
            ratings=typed["walk.ratings"],
        ),
        skipgram=SgConfig(
            dim=typed["skipgram.dim"],
            window=typed["skipgram.window"],
            negatives=typed["skipgram.negatives"],
            learning_rate=typed["skipgram.learning_rate"],
            epochs=typed["skipgram.epochs"],
            batch_size=typed["skipgram.batch_size"],
            deterministic=typed["skipgram.deterministic"],
        ),
        cluster=ClusterConfig(
            groups=typed["cluster.groups"],
            max_iters=typed["cluster.max_iters"],
            tol=typed["cluster.tol"],
        ),
        strategy=typed["ids.strategy"].lower(),
        alpha=typed["ids.alpha"],
        metrics=MetricConfig(
            pair_samples=typed["metrics.pair_samples"],
            item_samples=typed["metrics.item_samples"],
            trials=typed["metrics.trials"],
            softmax_temperature=typed["metrics.softmax_temperature"],
            exact=typed["metrics.exact"],
        ),
        tasks=typed["prompts.tasks"],
        max_history=typed["prompts.max_history"],
        seed=typed["pipeline.seed"],
        workers=typed["pipeline.workers"],
        values=raw,
    )


def load_config(path: Optional[PathLike] = None, overrides: Optional[Mapping[str, str]] = None) -> PipelineConfig:
    layers = []
    if path is not None:
        layers.append(read_config_file(path))
    if overrides:
        layers.append(overrides)
    return build_config(*layers)
