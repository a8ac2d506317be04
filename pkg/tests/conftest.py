import os

import pytest

from pw2ss.cli import run

SMALL_INI = """\
[meta]
version = 1

[model]
layers = 2
d_model = 16
heads = 2
ffn_dim = 32
text_dim = 64
max_len = 48
layout_grid = 8
app_classes = 4

[optimizer]
lr = 0.001
batch_size = 8
warmup_epochs = 1

[training]
pretrain_steps = 20
finetune_steps = 20
layout_epochs = 20
classifier_epochs = 100
"""


def write_small_config(directory):
    path = os.path.join(directory, "run.ini")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SMALL_INI)
    return path


def run_pipeline(work, config, n_screens=8, seed=0):
    """Every stage from fixtures to a retrieval query; returns the produced paths."""
    work = str(work)
    fx = os.path.join(work, "fx")
    p = {k: os.path.join(work, v) for k, v in {
        "clf": "clf.ckpt", "clf_metrics": "clf_metrics.json", "labels": "labels.jsonl",
        "boxes": "boxes.jsonl", "clean": "clean.jsonl", "clean_report": "clean_report.json",
        "det": "det.json", "pre": "pre.ckpt", "pre_metrics": "pre_metrics.json",
        "click": "click.ckpt", "click_metrics": "click_metrics.json", "eval": "eval.json",
        "index": "index.json", "hits": "hits.json", "csv": "report.csv", "plot": "plot.json"}.items()}
    c = ["--config", config]
    run(c + ["gen-fixtures", "--out", fx, "--seed", str(seed), "--n-screens", str(n_screens), "--app-classes", "4"])
    run(c + ["train-proposal-clf", "--patches", f"{fx}/patches.jsonl", "--out", p["clf"],
             "--metrics", p["clf_metrics"]])
    run(c + ["gen-labels", "--vh", f"{fx}/vh", "--ocr", f"{fx}/ocr.jsonl", "--rasters", f"{fx}/screens",
             "--classifier", p["clf"], "--out", p["labels"], "--boxes-out", p["boxes"]])
    run(c + ["clean", "--screens", p["labels"], "--vh", f"{fx}/vh", "--ocr", f"{fx}/ocr.jsonl",
             "--out", p["clean"], "--report", p["clean_report"]])
    run(c + ["eval-det", "--pred", p["boxes"], "--gt", f"{fx}/gt_boxes.jsonl", "--kind", "graphic",
             "--out", p["det"]])
    run(c + ["pretrain", "--screens", f"{fx}/gt.jsonl", "--out", p["pre"], "--metrics", p["pre_metrics"]])
    run(c + ["train-click", "--screens", f"{fx}/gt.jsonl", "--init", p["pre"], "--out", p["click"],
             "--metrics", p["click_metrics"]])
    run(c + ["eval-task", "--task", "click", "--screens", f"{fx}/gt.jsonl", "--model", p["click"],
             "--out", p["eval"]])
    run(c + ["build-index", "--screens", f"{fx}/gt.jsonl", "--model", p["pre"], "--out", p["index"]])
    run(c + ["retrieve", "--index", p["index"], "--model", p["pre"], "--screens", f"{fx}/gt.jsonl",
             "--query", "s0000", "--k", "3", "--out", p["hits"]])
    run(c + ["report", p["det"], p["pre_metrics"], p["click_metrics"], "--csv", p["csv"], "--plot", p["plot"]])
    p["fx"] = fx
    return p


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    work = tmp_path_factory.mktemp("pipeline")
    return run_pipeline(work, write_small_config(str(work)))


# -- one PASS/FAIL line per acceptance criterion -------------------------------------

_criteria = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "ran": False})
    if call.when == "call" or call.excinfo is not None:
        entry["ran"] = True
        if call.excinfo is not None:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        entry = _criteria[n]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {n}: {entry['title']}")
