import json
import os

import numpy as np
import pytest

from pw2ss.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_IO, main, run
from pw2ss.config import load_config
from pw2ss.model import ScreenTransformer
from pw2ss.nn import load_checkpoint

from conftest import write_small_config


def load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def test_pipeline_outputs(pipeline_run):
    p = pipeline_run
    det = load(p["det"])
    assert det["kind"] == "graphic" and 0.0 <= det["AP"] <= 1.0 and det["pr_curve"]
    pre = load(p["pre_metrics"])
    assert pre["steps"] == 20 and len(pre["losses"]) == 20
    assert load(p["eval"])["task"] == "click"
    assert load(p["clean_report"])["kept"]
    plot = load(p["plot"])
    assert "pre_metrics/loss" in plot["series"] and "det/pr_curve" in plot["series"]
    with open(p["csv"], encoding="utf-8") as fh:
        assert fh.readline().strip() == "source,metric,value"


def test_retrieve_ranks_query_first(pipeline_run):
    hits = load(pipeline_run["hits"])
    assert hits[0]["screen_id"] == "s0000" and len(hits) == 3
    assert hits[0]["cosine"] == pytest.approx(1.0, abs=1e-9)


def test_pretrain_zero_epochs_returns_initialisation(pipeline_run, tmp_path):
    cfg_path = write_small_config(str(tmp_path))
    out = str(tmp_path / "zero.ckpt")
    run(["--config", cfg_path, "pretrain", "--screens", f"{pipeline_run['fx']}/gt.jsonl", "--out", out,
         "--metrics", str(tmp_path / "m.json"), "--epochs", "0", "--seed", "3"])
    ckpt = load_checkpoint(out)
    fresh = ScreenTransformer(load_config(cfg_path).model, seed=3)
    for name, value in fresh.state_dict().items():
        assert np.array_equal(ckpt.params[name], value)
    assert load(str(tmp_path / "m.json"))["steps"] == 0


def test_exit_codes(pipeline_run, tmp_path, capsys):
    cfg_path = write_small_config(str(tmp_path))
    assert main(["eval-det", "--pred", str(tmp_path / "absent.jsonl"), "--gt", "x", "--out", "y"]) == EXIT_IO
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "IoFailure" and err["command"] == "eval-det"
    bad_ini = tmp_path / "bad.ini"
    bad_ini.write_text("[meta]\nversion = 9\n")
    assert main(["--config", str(bad_ini), "gen-fixtures", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["gen-fixtures"]) == EXIT_CONFIG  # no output directory anywhere
    # a classifier checkpoint is not a Screen Transformer
    assert main(["--config", cfg_path, "eval-task", "--task", "click", "--screens",
                 f"{pipeline_run['fx']}/gt.jsonl", "--model", pipeline_run["clf"],
                 "--out", str(tmp_path / "e.json")]) == EXIT_CONFIG
    one_class = tmp_path / "patches.jsonl"
    one_class.write_text('{"features": [0, 0, 0, 0, 0, 0], "label": 1}\n' * 4)
    assert main(["train-proposal-clf", "--patches", str(one_class), "--out", str(tmp_path / "c.ckpt"),
                 "--metrics", str(tmp_path / "m.json")]) == EXIT_ERROR
    assert main(["--config", cfg_path, "retrieve", "--index", pipeline_run["index"], "--model",
                 pipeline_run["pre"], "--screens", f"{pipeline_run['fx']}/gt.jsonl",
                 "--query", "nope"]) == EXIT_CONFIG
    capsys.readouterr()


def test_output_directory_must_exist(pipeline_run, tmp_path):
    code = main(["eval-det", "--pred", pipeline_run["boxes"], "--gt", f"{pipeline_run['fx']}/gt_boxes.jsonl",
                 "--out", str(tmp_path / "missing" / "x.json")])
    assert code == EXIT_IO


def test_success_prints_json(tmp_path, capsys):
    assert main(["gen-fixtures", "--out", str(tmp_path / "fx"), "--n-screens", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["n_screens"] == 2
    assert os.path.exists(tmp_path / "fx" / "gt.jsonl")
