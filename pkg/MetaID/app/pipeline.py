# app/pipeline.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, MutableMapping, Optional, Tuple

from app.config import PipelineConfig
from core.cluster import ClusterModel, kmeans_cosine
from core.embed import load_embeddings, save_embeddings, train_skipgram
from core.errors import ConfigError, SplitError, StageError
from core.graph import build_graph
from core.idgen import (
    IdAssignment,
    Vocabulary,
    assign_meta_ids,
    assign_rid,
    assign_sid,
    build_f_init,
    vocabulary_size_report,
    write_f_init,
    write_id_map,
    write_vocabulary,
)
from core.ingest import DatasetIndex, DatasetSplits, build_index, parse_interactions, split_leave_one_out, split_random
from core.metrics import (
    build_similarity_oracle,
    ds_convergence,
    evaluate_ids,
    item_representations,
    random_token_table,
    similarity_heatmap,
    similarity_mode,
    token_table_from_vocabulary,
    write_convergence_csv,
    write_matrix_csv,
)
from core.promptgen import DEFAULT_TEMPLATES, build_id_trie, emit_corpus, load_templates
from core.utils_io import ensure_dir, file_digest, partial_output, read_json, text_digest, write_json
from core.walker import read_walks, sample_walks, write_walks

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
STAGES = ("ingest", "graph", "walk", "embed", "cluster", "idgen", "metrics", "promptgen")
CONVERGENCE_NS = (100, 1000, 10000)
HEATMAP_SAMPLE = 50

# config keys (by prefix) each stage's output depends on
STAGE_KEYS: Dict[str, Tuple[str, ...]] = {
    "ingest": ("paths.input", "ingest.", "split.", "pipeline.seed"),
    "graph": (),
    "walk": ("walk.", "pipeline.seed"),
    "embed": ("skipgram.", "pipeline.seed"),
    "cluster": ("cluster.", "pipeline.seed"),
    "idgen": ("ids.", "pipeline.seed"),
    "metrics": ("metrics.", "ids.", "pipeline.seed"),
    "promptgen": ("prompts.", "paths.templates"),
}

# upstream artifacts read by each stage
STAGE_INPUTS: Dict[str, Tuple[str, ...]] = {
    "ingest": (),
    "graph": ("index.json",),
    "walk": ("index.json",),
    "embed": ("index.json", "walks.txt"),
    "cluster": ("embeddings.bin",),
    "idgen": ("index.json", "clusters.json"),
    "metrics": ("index.json", "clusters.json"),
    "promptgen": ("index.json", "splits.json", "id_map.json"),
}


class StageLogger(logging.LoggerAdapter):
    def process(self, msg: Any, kwargs: MutableMapping[str, Any]) -> Tuple[Any, MutableMapping[str, Any]]:
        return f"[{self.extra['stage']}] {msg}", kwargs


@dataclass
class PipelineResult:
    manifest: Dict[str, Any]
    ran: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)


@dataclass
class StageContext:
    config: PipelineConfig
    workdir: Path
    log: logging.LoggerAdapter

    def path(self, name: str) -> Path:
        return self.workdir / name

    def load_index(self) -> DatasetIndex:
        return DatasetIndex.from_dict(read_json(self.path("index.json")))

    def load_clusters(self) -> ClusterModel:
        return ClusterModel.from_dict(read_json(self.path("clusters.json")))


# ========================
# Stages
# ========================

def _stage_ingest(ctx: StageContext) -> List[str]:
    cfg = ctx.config
    with open(cfg.input, "rb") as fh:
        records = parse_interactions(fh, cfg.fmt)
    index = build_index(records)

    try:
        loo: Optional[DatasetSplits] = split_leave_one_out(index)
    except SplitError as e:
        ctx.log.warning("leave-one-out split unavailable (%s); sequential and direct prompts will be skipped", e)
        loo = None
    rnd = split_random(index, cfg.split_ratios, seed=cfg.stage_seed("split"))

    with partial_output(ctx.path("index.json")) as tmp:
        write_json(tmp, index.to_dict())
    with partial_output(ctx.path("splits.json")) as tmp:
        write_json(tmp, {
            "leave_one_out": loo.to_dict() if loo is not None else None,
            "random": rnd.to_dict(),
        })
    ctx.log.info("%d users, %d items, %d interactions", index.user_count, index.item_count, index.interaction_count)
    return ["index.json", "splits.json"]


def _stage_graph(ctx: StageContext) -> List[str]:
    graph = build_graph(ctx.load_index())
    with partial_output(ctx.path("graph.json")) as tmp:
        write_json(tmp, graph.to_dict())
    ctx.log.info("%d edges over %d nodes", graph.total_edges, graph.node_count())
    return ["graph.json"]


def _stage_walk(ctx: StageContext) -> List[str]:
    graph = build_graph(ctx.load_index())
    corpus = sample_walks(graph, ctx.config.walk, workers=ctx.config.workers)
    with partial_output(ctx.path("walks.txt")) as tmp:
        write_walks(corpus, tmp)
    return ["walks.txt"]


def _stage_embed(ctx: StageContext) -> List[str]:
    index = ctx.load_index()
    corpus = read_walks(ctx.path("walks.txt"), index.user_count, index.item_count)
    table, losses = train_skipgram(corpus, ctx.config.skipgram)
    ctx.log.info("final epoch loss %.6f", losses[-1])
    with partial_output(ctx.path("embeddings.bin")) as tmp:
        save_embeddings(table, tmp)
    return ["embeddings.bin"]


def _stage_cluster(ctx: StageContext) -> List[str]:
    table = load_embeddings(ctx.path("embeddings.bin"))
    model = kmeans_cosine(table, ctx.config.cluster)
    with partial_output(ctx.path("clusters.json")) as tmp:
        write_json(tmp, model.to_dict())
    ctx.log.info("%d clusters, largest has %d members", model.groups, int(model.cluster_sizes.max()))
    return ["clusters.json"]


def _meta_with_init(ctx: StageContext, index: DatasetIndex, model: ClusterModel) -> Tuple[IdAssignment, Vocabulary]:
    assignment, vocab = assign_meta_ids(model, index)
    vocab = build_f_init(model, vocab, ctx.config.alpha, seed=ctx.config.stage_seed("idgen"))
    return assignment, vocab


def _stage_idgen(ctx: StageContext) -> List[str]:
    index = ctx.load_index()
    strategy = ctx.config.strategy
    files = ["vocab.tsv"]
    if strategy == "meta":
        assignment, vocab = _meta_with_init(ctx, index, ctx.load_clusters())
        with partial_output(ctx.path("f_init.bin")) as tmp:
            write_f_init(vocab, tmp)
        files.append("f_init.bin")
    else:
        assignment = assign_rid(index, seed=ctx.config.stage_seed("idgen")) if strategy == "rid" else assign_sid(index)
        vocab = Vocabulary([])
    with partial_output(ctx.path("vocab.tsv")) as tmp:
        write_vocabulary(vocab, tmp)
    with partial_output(ctx.path("id_map.json")) as tmp:
        write_id_map(assignment, index, tmp)
    files.append("id_map.json")
    ctx.log.info("%s IDs assigned, %d OOV tokens", assignment.strategy, len(vocab))
    return files


def _stage_metrics(ctx: StageContext) -> List[str]:
    """Score every strategy; heatmaps and convergence use the configured one."""
    cfg = ctx.config
    index = ctx.load_index()
    model = ctx.load_clusters()
    oracle = build_similarity_oracle(index)

    meta, vocab = _meta_with_init(ctx, index, model)
    rid = assign_rid(index, seed=cfg.stage_seed("idgen"))
    sid = assign_sid(index)
    dim = int(model.centroids.shape[1])
    tables = {
        "meta": (meta, token_table_from_vocabulary(vocab)),
        "rid": (rid, random_token_table(rid.token_surfaces(), dim, seed=cfg.stage_seed("tokens:rid"))),
        "sid": (sid, random_token_table(sid.token_surfaces(), dim, seed=cfg.stage_seed("tokens:sid"))),
    }
    reports = {name: evaluate_ids(a, table, oracle, cfg.metrics) for name, (a, table) in tables.items()}

    chosen, table = tables[cfg.strategy]
    reps = item_representations(chosen, table)
    series = ds_convergence(
        reps, CONVERGENCE_NS, trials=max(2, cfg.metrics.trials),
        seed=cfg.stage_seed("convergence"), softmax_temperature=cfg.metrics.softmax_temperature,
    )
    heatmap = similarity_heatmap(
        reps, oracle, sample_size=min(HEATMAP_SAMPLE, index.item_count), seed=cfg.stage_seed("heatmap")
    )

    with partial_output(ctx.path("metrics.json")) as tmp:
        write_json(tmp, {
            "strategy": cfg.strategy,
            "similarity": similarity_mode(cfg.metrics),
            "reports": {name: r.to_dict() for name, r in reports.items()},
            "vocabulary": vocabulary_size_report(vocab if cfg.strategy == "meta" else None),
            "heatmap_items": [index.item_names[i] for i in heatmap.items],
        })
    with partial_output(ctx.path("ds_convergence.csv")) as tmp:
        write_convergence_csv(series, tmp)
    with partial_output(ctx.path("heatmap_cosine.csv")) as tmp:
        write_matrix_csv(heatmap.cosine, tmp)
    with partial_output(ctx.path("heatmap_truth.csv")) as tmp:
        write_matrix_csv(heatmap.truth, tmp)
    for name, r in reports.items():
        ctx.log.info("%s DS=%.6f MS=%.6f", name, r.ds, r.ms)
    return ["metrics.json", "ds_convergence.csv", "heatmap_cosine.csv", "heatmap_truth.csv"]


def _stage_promptgen(ctx: StageContext) -> List[str]:
    cfg = ctx.config
    index = ctx.load_index()
    raw = read_json(ctx.path("splits.json"))
    splits = {
        key: DatasetSplits.from_dict(payload) if payload is not None else None
        for key, payload in raw.items()
    }
    assignment = IdAssignment.from_id_map(read_json(ctx.path("id_map.json")), index)
    templates = load_templates(cfg.templates) if cfg.templates else DEFAULT_TEMPLATES

    with partial_output(ctx.path("corpus.jsonl")) as tmp:
        counts = emit_corpus(index, splits, assignment, cfg.tasks, tmp, templates, cfg.max_history)
    trie = build_id_trie(assignment)
    with partial_output(ctx.path("trie.json")) as tmp:
        write_json(tmp, trie.to_dict(index.item_names))
    ctx.log.info("%d prompts, trie holds %d item IDs", sum(counts.values()), trie.size)
    return ["corpus.jsonl", "trie.json"]


STAGE_FUNCS: Dict[str, Callable[[StageContext], List[str]]] = {
    "ingest": _stage_ingest,
    "graph": _stage_graph,
    "walk": _stage_walk,
    "embed": _stage_embed,
    "cluster": _stage_cluster,
    "idgen": _stage_idgen,
    "metrics": _stage_metrics,
    "promptgen": _stage_promptgen,
}


# ========================
# Orchestration
# ========================

def _inputs_digest(config: PipelineConfig, stage: str, workdir: Path) -> str:
    keys = STAGE_KEYS[stage]
    settings = {k: v for k, v in sorted(config.values.items()) if any(k.startswith(p) for p in keys)}
    if stage == "embed" and not config.skipgram.deterministic:
        # lock-free training depends on the thread count
        settings["pipeline.workers"] = str(config.workers)
    parts = [stage, repr(settings)]
    if stage == "ingest":
        if config.input is None:
            raise ConfigError("paths.input is required.")
        parts.append(file_digest(config.input))
    if stage == "promptgen" and config.templates:
        parts.append(file_digest(config.templates))
    for name in STAGE_INPUTS[stage]:
        parts.append(f"{name}:{file_digest(workdir / name)}")
    return text_digest("\n".join(parts))


def _up_to_date(entry: Optional[Dict[str, Any]], inputs_digest: str, workdir: Path) -> bool:
    if entry is None or entry.get("inputs_digest") != inputs_digest:
        return False
    for f in entry.get("files", []):
        path = workdir / f["file"]
        if not path.exists() or file_digest(path) != f["sha256"]:
            return False
    return True


def read_manifest(workdir: Path) -> Dict[str, Any]:
    path = workdir / MANIFEST
    if not path.exists():
        return {"stages": []}
    return read_json(path)


def run_pipeline(config: PipelineConfig, force: bool = False) -> PipelineResult:
    """
    Run every stage in order, skipping stages whose inputs and outputs are
    unchanged since the recorded manifest (unless `force`). Stages always
    read their inputs back from the work directory.
    """
    config = config.seeded()
    workdir = Path(config.workdir)
    ensure_dir(workdir)

    previous = {e["stage"]: e for e in read_manifest(workdir).get("stages", [])}
    manifest: Dict[str, Any] = {"config_digest": config.digest(), "stages": []}
    result = PipelineResult(manifest)
    stale = force

    for stage in STAGES:
        log = StageLogger(logger, {"stage": stage})
        try:
            digest = _inputs_digest(config, stage, workdir)
            if not stale and _up_to_date(previous.get(stage), digest, workdir):
                log.info("up to date, skipped")
                manifest["stages"].append(previous[stage])
                result.skipped.append(stage)
                continue
            stale = True
            files = STAGE_FUNCS[stage](StageContext(config, workdir, log))
        except Exception as e:
            log.error("failed: %s", e)
            raise StageError(stage, e) from e

        manifest["stages"].append({
            "stage": stage,
            "inputs_digest": digest,
            "files": [{"file": f, "sha256": file_digest(workdir / f)} for f in files],
        })
        result.ran.append(stage)
        write_json(workdir / MANIFEST, manifest)

    write_json(workdir / MANIFEST, manifest)
    return result


def run_stage(config: PipelineConfig, stage: str) -> List[str]:
    """
    Run one stage against an existing work directory and record it in the
    manifest. Upstream artifacts must already be there.
    """
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"Unknown stage '{stage}'.")
    config = config.seeded()
    workdir = Path(config.workdir)
    ensure_dir(workdir)
    log = StageLogger(logger, {"stage": stage})
    try:
        digest = _inputs_digest(config, stage, workdir)
        files = STAGE_FUNCS[stage](StageContext(config, workdir, log))
    except Exception as e:
        log.error("failed: %s", e)
        raise StageError(stage, e) from e

    manifest = read_manifest(workdir)
    entries = {e["stage"]: e for e in manifest.get("stages", [])}
    entries[stage] = {
        "stage": stage,
        "inputs_digest": digest,
        "files": [{"file": f, "sha256": file_digest(workdir / f)} for f in files],
    }
    manifest["config_digest"] = config.digest()
    manifest["stages"] = [entries[s] for s in STAGES if s in entries]
    write_json(workdir / MANIFEST, manifest)
    return files
