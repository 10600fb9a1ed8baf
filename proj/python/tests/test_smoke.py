import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import dpfuse

SOURCE_DIR = Path(os.environ.get("DPFUSE_SOURCE_DIR", Path(__file__).resolve().parents[2]))


# Short training so each test runs in seconds.
SMALL = {
    "words.dim": 8,
    "words.epochs": 2,
    "hetero.epochs": 5,
    "hetero.hidden": 16,
    "hetero.output": 8,
    "align.hidden": 16,
    "align.epochs": 2,
    "fuse.epochs": 5,
    "fuse.output": 8,
    "eval.repeats": 2,
}


def small_config():
    cfg = dpfuse.Config()
    for key, value in SMALL.items():
        cfg.set(key, value)
    return cfg


def test_piecewise_outputs_stay_in_range():
    bound = dpfuse.piecewise_bound(1.0)
    out = dpfuse.piecewise_perturb([-1.0, 0.0, 0.5, 1.0] * 500, 1.0, seed=3)
    assert len(out) == 2000
    assert all(-bound <= v <= bound for v in out)
    assert dpfuse.piecewise_perturb([0.2], 1.0, seed=3) == dpfuse.piecewise_perturb([0.2], 1.0, seed=3)


def test_randomized_response_keeps_categories_at_large_epsilon():
    cats = [0, 1, 2, 3] * 10
    assert dpfuse.randomized_response(cats, 4, 50.0) == cats


def test_tmr_and_allocation():
    report = dpfuse.compute_tmr([0.5, 0.453, 0.463], [0.5, 0.508, 0.569], [0.5, 0.102, 0.149])
    assert math.isclose(report["friendship"]["tmr"], 0.743, abs_tol=1e-3)
    assert math.isclose(report["posts"]["tmr"], 0.645, abs_tol=1e-3)
    budget = dpfuse.allocate_budgets([1.0, 1.0, 1.0], 9.0)
    assert budget.eps_a == pytest.approx(3.0)
    assert budget.eps_g + budget.eps_t == pytest.approx(6.0)


def test_errors_carry_their_kind(tmp_path):
    with pytest.raises(dpfuse.IoError):
        dpfuse.load_graph(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2\na 0.1 nope\n")
    with pytest.raises(dpfuse.ValidationError, match="bad.txt:2"):
        dpfuse.load_embeddings(bad)
    with pytest.raises(dpfuse.UsageError):
        dpfuse.Config().set("no.such.key", 1)
    assert issubclass(dpfuse.UsageError, dpfuse.Error)


def test_embedding_round_trip(tmp_path):
    table = dpfuse.EmbeddingTable(["a", "b"], np.array([[0.5, -1.0], [2.0, 0.25]]))
    dpfuse.save_embeddings(tmp_path / "z.txt", table)
    back = dpfuse.load_embeddings(tmp_path / "z.txt")
    assert back == table
    assert back.ids == ["a", "b"]
    np.testing.assert_array_equal(back.vectors, table.vectors)
    np.testing.assert_array_equal(back.row("b"), [2.0, 0.25])


def test_in_memory_stages_end_to_end():
    a, b, anchors = dpfuse.synth_cross_pair(users=60, seed=2)
    assert a.user_count == 60 and len(anchors) > 0
    cfg = small_config()
    words = dpfuse.train_word_vectors(a, cfg)
    clean, report = dpfuse.sanitize_graph(a, cfg.budget, words, seed=4)
    assert clean.user_ids == a.user_ids
    assert "edges" in report
    za = dpfuse.embed_graph(clean, cfg)
    zb = dpfuse.embed_graph(b, cfg)
    assert za.vectors.shape == (60, 8)
    predicted = dpfuse.predict_anchors(za, zb, cfg)
    assert all(len(p) == 3 for p in predicted)
    o1, o2 = dpfuse.fuse(clean, b, za, zb, anchors, cfg)
    assert len(o1) == 60 and o1.dim == 8 and len(o2) == b.user_count
    interests = dpfuse.predict_interests(o1, clean, cfg)
    precision = interests["metrics"]["precision"]["mean"]
    assert 0.0 <= precision <= 1.0
    gender = dpfuse.attack_gender(za, clean, cfg)
    assert 0.0 <= gender["metrics"]["precision"]["mean"] <= 1.0


def test_file_pipeline_on_fixtures(tmp_path):
    cfg = dpfuse.Config.from_file(SOURCE_DIR / "data/fixtures/pipeline.conf")
    for key, value in SMALL.items():
        cfg.set(key, value)
    cfg.graph_a = SOURCE_DIR / "data/fixtures/network_a.jsonl"
    cfg.graph_b = SOURCE_DIR / "data/fixtures/network_b.jsonl"
    cfg.out_dir = tmp_path / "out"
    outputs, report = dpfuse.run_pipeline(cfg)
    assert all(Path(p).exists() for p in outputs.values())
    assert len(report["reports"]) == 3
    assert report["provenance"]["seed"] == 1


def test_invariant_suite_passes():
    results = dpfuse.run_invariant_suite(1)
    assert results
    assert all(r["pass"] for r in results), json.dumps(results)
