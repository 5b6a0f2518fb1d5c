import csv
import io
import json
from fractions import Fraction
from pathlib import Path

import pytest

from vischunk import cli
from vischunk.assignment import greedy_list
from vischunk.config import DEFAULTS, ConfigError, load_config
from vischunk.metrics import slot_scores
from vischunk.pipeline import load_dataset, read_candidates
from vischunk.verify import SuiteResult

TINY = """
[synth]
width = 48
height = 36
n_superpixels = 40
adjacency_pressure = 1.0

[pipeline]
n_train = 3
n_test = 3
seed_interval = 12
max_chunk_size = 10
k = 4

[grower_forest]
n_trees = 4

[list_forest]
n_trees = 4
"""

GOLDEN = Path(__file__).parent / "data" / "golden_oracle_results.csv"


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def run(*args):
    return cli.main([str(a) for a in args])


def oracle_pipeline(root: Path, config: Path):
    assert run("gen", "--config", config, "--split", "test", "--out", root / "data") == 0
    assert run("grow", "--config", config, "--data", root / "data", "--out", root / "cands") == 0
    assert run("predict", "--config", config, "--data", root / "data", "--candidates", root / "cands",
               "--oracle", "--out", root / "pred") == 0
    assert run("eval", "--config", config, "--data", root / "data", "--candidates", root / "cands",
               "--predictions", root / "pred", "--out", root / "report") == 0


def test_oracle_pipeline_reproduces_greedy(tmp_path, tiny_config):
    oracle_pipeline(tmp_path, tiny_config)
    records = load_dataset(tmp_path / "data")
    cands = read_candidates(tmp_path / "cands", records)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "report" / "results.csv").read_text())))
    for r in records:
        L = greedy_list(cands[r.scene_id], r.scene.instances, 4)
        want = [f"{float(v):.6f}" for v in slot_scores(L.chunks, r.scene.instances, 4)]
        got = [row["score"] for row in rows if row["method"] == "VC" and row["scene"] == r.scene_id]
        assert got == want


def test_oracle_pipeline_golden(tmp_path, tiny_config):
    oracle_pipeline(tmp_path, tiny_config)
    results = (tmp_path / "report" / "results.csv").read_text()
    assert results.splitlines()[0] == "method,scene,slot,score"
    assert results == GOLDEN.read_text()


def test_learned_run_is_byte_stable(tmp_path, tiny_config):
    for name in ("a", "b"):
        assert run("run", "--config", tiny_config, "--out", tmp_path / name) == 0
    for rel in ("report/results.csv", "report/summary.csv", "report/metrics.csv", "predictions/lists.csv",
                "grower.forest", "list.forest", "report/slot_scores.svg"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg["pipeline"]["n_train"] == 3 and cfg["synth"]["width"] == 48


def test_staged_learned_pipeline(tmp_path, tiny_config):
    c = tiny_config
    assert run("gen", "--config", c, "--out", tmp_path / "train") == 0
    assert run("gen", "--config", c, "--split", "test", "--out", tmp_path / "test") == 0
    assert run("train-grower", "--config", c, "--data", tmp_path / "train", "--out", tmp_path / "g.forest",
               "--dataset-csv", tmp_path / "g.csv") == 0
    assert (tmp_path / "g.csv").read_text().startswith("scene,step,")
    for split in ("train", "test"):
        assert run("grow", "--config", c, "--data", tmp_path / split, "--predictor", "learned",
                   "--forest", tmp_path / "g.forest", "--out", tmp_path / f"c_{split}") == 0
    assert run("train-list", "--config", c, "--data", tmp_path / "train", "--candidates", tmp_path / "c_train",
               "--out", tmp_path / "l.forest") == 0
    assert run("predict", "--config", c, "--data", tmp_path / "test", "--candidates", tmp_path / "c_test",
               "--forest", tmp_path / "l.forest", "--out", tmp_path / "pred") == 0
    assert run("eval", "--config", c, "--data", tmp_path / "test", "--candidates", tmp_path / "c_test",
               "--predictions", tmp_path / "pred" / "lists.csv", "--out", tmp_path / "rep") == 0
    assert run("plot", "--report", tmp_path / "rep") == 0
    svg = (tmp_path / "rep" / "slot_scores.svg").read_text()
    assert 'width="800" height="500"' in svg
    assert (tmp_path / "rep" / "abo.svg").exists()
    summary = (tmp_path / "rep" / "summary.csv").read_text().splitlines()
    assert summary[0] == "method,metric,mean"
    assert any(line.startswith("CC,fewer_chunks_than_instances,") for line in summary)


def test_perturbed_grower(tmp_path, tiny_config):
    assert run("gen", "--config", tiny_config, "--count", "1", "--out", tmp_path / "d") == 0
    assert run("grow", "--config", tiny_config, "--data", tmp_path / "d", "--predictor", "perturbed",
               "--eps", "0.1", "--out", tmp_path / "c") == 0
    assert (tmp_path / "c" / "scene_00000.cands").read_text().startswith("chunk scene_00000 ")


def test_verify_passes_and_writes_csv(tmp_path, tiny_config):
    code = run("verify", "--config", tiny_config, "--suite", "hungarian", "--suite", "theorem2",
               "--set", "verify.hungarian_trials=20", "--set", "verify.theorem2_scenes=5", "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "verify.csv").read_text().splitlines()[0] == "suite,checked,violations,seconds"


def test_verify_failure_exit_code(monkeypatch, tiny_config):
    monkeypatch.setitem(cli.SUITES, "hungarian", lambda **kw: SuiteResult("hungarian_exact", 1, 1, 0.0))
    assert run("verify", "--config", tiny_config, "--suite", "hungarian") == cli.EXIT_VERIFY


@pytest.mark.parametrize("args", [
    ["gen", "--out", "x", "--set", "synth.colour=1"],
    ["gen", "--out", "x", "--set", "nosuch.key=1"],
    ["gen", "--out", "x", "--set", "synth.width=wide"],
    ["gen", "--out", "x", "--set", "pipeline.oracle_mode='fast'"],
    ["gen", "--out", "x", "--set", "synth.adjacency_pressure=2.0"],
    ["gen", "--out", "x", "--set", "missing-equals"],
    ["gen", "--out", "x", "--config", "/nonexistent/config.toml"],
    ["grow", "--data", "/nonexistent", "--out", "x"],
    ["frobnicate"],
    ["gen"],
])
def test_config_errors_exit_3(tmp_path, monkeypatch, args):
    monkeypatch.chdir(tmp_path)
    assert cli.main(args) == cli.EXIT_CONFIG


def test_learned_grow_needs_forest(tmp_path, tiny_config):
    assert run("gen", "--config", tiny_config, "--count", "1", "--out", tmp_path / "d") == 0
    assert run("grow", "--config", tiny_config, "--data", tmp_path / "d", "--predictor", "learned",
               "--out", tmp_path / "c") == cli.EXIT_CONFIG


def test_config_precedence(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[synth]\nwidth = 50\nheight = 40\n[pipeline]\nk = 3\n")
    cfg = load_config(path, ["synth.width=70", "pipeline.workers=2"])
    assert cfg["synth"]["width"] == 70
    assert cfg["synth"]["height"] == 40
    assert cfg["pipeline"]["k"] == 3
    assert cfg["pipeline"]["workers"] == 2
    assert cfg["pipeline"]["n_test"] == DEFAULTS["pipeline"]["n_test"]
    assert load_config()["synth"] == DEFAULTS["synth"]


def test_seed_flag_sets_synth_seed(tmp_path, tiny_config):
    assert run("gen", "--config", tiny_config, "--seed", "7", "--count", "1", "--out", tmp_path / "d") == 0
    assert json.loads((tmp_path / "d" / "config.json").read_text())["synth"]["seed"] == 7
    assert (tmp_path / "d" / "manifest.txt").read_text().split()[1] == "7"


def test_bad_table_rejected(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("k = 3\n")
    with pytest.raises(ConfigError):
        load_config(path)
