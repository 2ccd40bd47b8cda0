from __future__ import annotations

import json

import numpy as np
import pytest

from app.config import build_config
from app.pipeline import MANIFEST, STAGES, read_manifest, run_pipeline, run_stage
from core.embed import load_embeddings
from core.errors import ConfigError, StageError
from core.ingest import generate_synthetic, write_interactions
from core.utils_io import read_json

SMALL = {
    "cluster.groups": "2",
    "walk.walk_length": "8",
    "walk.rounds_per_node": "2",
    "skipgram.dim": "8",
    "skipgram.epochs": "2",
    "skipgram.learning_rate": "0.025",
    "metrics.trials": "2",
    "metrics.pair_samples": "50",
    "metrics.item_samples": "10",
}


def _config(input_path, workdir, **extra):
    values = dict(SMALL, **{"paths.input": str(input_path), "paths.workdir": str(workdir)})
    values.update(extra)
    return build_config(values)


def _digests(workdir):
    return {
        f["file"]: f["sha256"]
        for entry in read_manifest(workdir)["stages"]
        for f in entry["files"]
    }


@pytest.fixture
def synthetic_file(tmp_path):
    path = tmp_path / "synthetic.tsv"
    write_interactions(generate_synthetic(2, 10, 10, 0.05, seed=3), path)
    return path


def test_full_run_on_tiny(tmp_path, tiny_file):
    workdir = tmp_path / "work"
    result = run_pipeline(_config(tiny_file, workdir))
    assert result.ran == list(STAGES)
    manifest = read_json(workdir / MANIFEST)
    assert [e["stage"] for e in manifest["stages"]] == list(STAGES)
    for name in ("index.json", "splits.json", "graph.json", "walks.txt", "embeddings.bin", "clusters.json",
                 "vocab.tsv", "f_init.bin", "id_map.json", "metrics.json", "ds_convergence.csv",
                 "heatmap_cosine.csv", "heatmap_truth.csv", "corpus.jsonl", "trie.json"):
        assert (workdir / name).exists(), name
    assert not list(workdir.glob("*.partial"))

    # TINY has no user with 3 interactions
    assert read_json(workdir / "splits.json")["leave_one_out"] is None
    metrics = read_json(workdir / "metrics.json")
    assert set(metrics["reports"]) == {"meta", "rid", "sid"}
    assert metrics["vocabulary"]["coarse"] == 2
    assert metrics["similarity"] == "fast"
    assert all(r["ds"] >= 0 and r["ms"] >= 0 for r in metrics["reports"].values())


def test_rerun_skips_everything(tmp_path, tiny_file):
    config = _config(tiny_file, tmp_path / "work")
    run_pipeline(config)
    before = _digests(tmp_path / "work")
    again = run_pipeline(config)
    assert again.ran == []
    assert again.skipped == list(STAGES)
    assert _digests(tmp_path / "work") == before


def test_changed_setting_reruns_downstream(tmp_path, tiny_file):
    workdir = tmp_path / "work"
    run_pipeline(_config(tiny_file, workdir))
    result = run_pipeline(_config(tiny_file, workdir, **{"ids.alpha": "0.2"}))
    assert result.skipped == ["ingest", "graph", "walk", "embed", "cluster"]
    assert result.ran == ["idgen", "metrics", "promptgen"]


def test_missing_output_triggers_rerun(tmp_path, tiny_file):
    workdir = tmp_path / "work"
    config = _config(tiny_file, workdir)
    run_pipeline(config)
    (workdir / "clusters.json").unlink()
    result = run_pipeline(config)
    assert result.ran[0] == "cluster"
    assert (workdir / "clusters.json").exists()


def test_worker_count_matters_only_for_lock_free_embedding(tmp_path, tiny_file):
    workdir = tmp_path / "work"
    run_pipeline(_config(tiny_file, workdir, **{"pipeline.workers": "1"}))
    assert run_pipeline(_config(tiny_file, workdir, **{"pipeline.workers": "2"})).ran == []

    racy = {"skipgram.deterministic": "false"}
    run_pipeline(_config(tiny_file, workdir, **racy, **{"pipeline.workers": "1"}))
    result = run_pipeline(_config(tiny_file, workdir, **racy, **{"pipeline.workers": "2"}))
    assert result.skipped == ["ingest", "graph", "walk"]
    assert result.ran[0] == "embed"


def test_force_reruns(tmp_path, tiny_file):
    config = _config(tiny_file, tmp_path / "work")
    run_pipeline(config)
    assert run_pipeline(config, force=True).ran == list(STAGES)


def test_identical_runs_identical_digests(tmp_path, synthetic_file):
    run_pipeline(_config(synthetic_file, tmp_path / "a"))
    run_pipeline(_config(synthetic_file, tmp_path / "b"))
    assert _digests(tmp_path / "a") == _digests(tmp_path / "b")
    assert read_manifest(tmp_path / "a") == read_manifest(tmp_path / "b")


def test_seed_changes_artifacts(tmp_path, synthetic_file):
    run_pipeline(_config(synthetic_file, tmp_path / "a"))
    run_pipeline(_config(synthetic_file, tmp_path / "b", **{"pipeline.seed": "1"}))
    a, b = _digests(tmp_path / "a"), _digests(tmp_path / "b")
    assert a["index.json"] == b["index.json"]
    assert a["walks.txt"] != b["walks.txt"]


def test_synthetic_prompts_include_sequential(tmp_path, synthetic_file):
    workdir = tmp_path / "work"
    run_pipeline(_config(synthetic_file, workdir))
    rows = [json.loads(line) for line in (workdir / "corpus.jsonl").read_text(encoding="utf-8").splitlines()]
    tasks = {r["task"] for r in rows}
    assert {"sequential", "direct", "rating"} <= tasks


@pytest.mark.parametrize("strategy", ["rid", "sid"])
def test_baseline_strategies(tmp_path, tiny_file, strategy):
    workdir = tmp_path / "work"
    run_pipeline(_config(tiny_file, workdir, **{"ids.strategy": strategy}))
    id_map = read_json(workdir / "id_map.json")
    assert all(seq[0] == "item" for seq in id_map["items"].values())
    assert (workdir / "vocab.tsv").read_text(encoding="utf-8") == ""
    files = [f["file"] for e in read_manifest(workdir)["stages"] for f in e["files"]]
    assert "f_init.bin" not in files
    assert read_json(workdir / "metrics.json")["vocabulary"]["total"] == 0


def test_missing_input_is_stage_error(tmp_path):
    with pytest.raises(StageError) as exc:
        run_pipeline(_config(tmp_path / "absent.tsv", tmp_path / "work"))
    assert exc.value.stage == "ingest"
    assert isinstance(exc.value.__cause__, FileNotFoundError)


def test_no_input_configured(tmp_path):
    config = build_config({"paths.workdir": str(tmp_path / "work")})
    with pytest.raises(StageError) as exc:
        run_pipeline(config)
    assert isinstance(exc.value.__cause__, ConfigError)


def test_run_stage_updates_manifest(tmp_path, tiny_file):
    workdir = tmp_path / "work"
    config = _config(tiny_file, workdir)
    run_pipeline(config)
    assert run_stage(config, "graph") == ["graph.json"]
    assert [e["stage"] for e in read_manifest(workdir)["stages"]] == list(STAGES)
    with pytest.raises(ConfigError):
        run_stage(config, "plot")


def test_run_stage_without_upstream(tmp_path, tiny_file):
    with pytest.raises(StageError) as exc:
        run_stage(_config(tiny_file, tmp_path / "empty"), "embed")
    assert isinstance(exc.value.__cause__, FileNotFoundError)


def test_embeddings_row_count(tmp_path, tiny_file):
    workdir = tmp_path / "work"
    run_pipeline(_config(tiny_file, workdir))
    table = load_embeddings(workdir / "embeddings.bin")
    assert table.input_vectors.shape == (6, 8)
    assert np.all(np.isfinite(table.input_vectors))
