"""``pw2ss`` command line."""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys
from typing import List, Optional

import numpy as np
from sklearn.exceptions import NotFittedError

from . import dataio
from .config import RunConfig, load_config
from .det_metrics import Detection, GroundTruth, detection_report, pr_curve
from .embed import LayoutAutoencoder, layout_raster
from .errors import ConfigError, IoFailure, PW2SSError
from .fixtures import FixtureSpec, gen_fixtures
from .gui_core import parse_vh
from .label_gen import (
    clean_screens,
    generate_pixel_words,
    train_proposal_classifier,
    vh_text_count,
)
from .model import (
    ScreenTransformer,
    app_accuracy,
    build_index,
    click_accuracy,
    pretrain,
    relation_accuracy,
    retrieve,
    train_app,
    train_clickability,
    train_relation,
)
from .persist import load_model, load_proposal_classifier, save_model, save_proposal_classifier

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_IO = 3


class CommandFailed(Exception):
    def __init__(self, command, error):
        super().__init__(str(error))
        self.command = command
        self.error = error


def _write_json(path, obj):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path!r}: {exc}") from exc


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read {path!r}: {exc}") from exc


def _need(path, what):
    if path is None:
        raise ConfigError(f"missing {what}")
    if not os.path.exists(path):
        raise IoFailure(f"{what} {path!r} does not exist")
    return path


def _path(args, cfg: RunConfig, attr, key, what):
    value = getattr(args, attr, None) or cfg.paths.get(key)
    return _need(value, what)


def _out(args, cfg, attr, key, what):
    value = getattr(args, attr, None) or cfg.paths.get(key)
    if value is None:
        raise ConfigError(f"missing {what}")
    parent = os.path.dirname(os.path.abspath(value))
    if not os.path.isdir(parent):
        raise IoFailure(f"output directory {parent!r} does not exist")
    return value


def _loss_summary(losses):
    return {"losses": losses, "steps": len(losses),
            "first_loss": losses[0] if losses else None, "last_loss": losses[-1] if losses else None}


# -- commands ----------------------------------------------------------------------

def cmd_gen_fixtures(args, cfg):
    seed = cfg.seeds.fixtures if args.seed is None else args.seed
    spec = FixtureSpec(seed=seed, n_screens=args.n_screens, app_classes=args.app_classes)
    out = args.out or cfg.paths.get("fixtures")
    if out is None:
        raise ConfigError("missing --out directory")
    gen_fixtures(spec, out)
    return {"out": out, "n_screens": spec.n_screens}


def _vh_files(vh_dir) -> List[str]:
    files = sorted(glob.glob(os.path.join(vh_dir, "*.json")))
    if not files:
        raise IoFailure(f"no View-Hierarchy files in {vh_dir!r}")
    return files


def _read_vh(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path!r}: {exc}") from exc
    try:
        return parse_vh(text)
    except PW2SSError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def cmd_gen_labels(args, cfg):
    vh_dir = _path(args, cfg, "vh", "vh", "View-Hierarchy directory")
    ocr = dataio.read_ocr(_path(args, cfg, "ocr", "ocr", "OCR file"))
    raster_dir = _path(args, cfg, "rasters", "rasters", "screenshot directory")
    clf = load_proposal_classifier(_path(args, cfg, "classifier", "classifier", "classifier checkpoint"))
    out = _out(args, cfg, "out", "labels", "output file")
    screens, boxes = [], []
    for path in _vh_files(vh_dir):
        vh = _read_vh(path)
        raster_path = os.path.join(raster_dir, f"{vh.screen_id}.ppm")
        raster = dataio.read_ppm(raster_path)
        labels = generate_pixel_words(vh, ocr.get(vh.screen_id, []), raster, clf, cfg.label_gen,
                                      raster_path=os.path.relpath(raster_path, os.path.dirname(
                                          os.path.abspath(out))))
        screens.append(labels.sentence)
        scores = iter(labels.graphic_scores)
        for pw in labels.sentence.pixel_words:
            score = 1.0 if pw.is_text else next(scores)
            boxes.append(dataio.box_record(vh.screen_id, pw.bbox, score, pw.kind))
    dataio.write_screens(out, screens)
    if args.boxes_out:
        dataio.write_jsonl(args.boxes_out, boxes)
    return {"out": out, "n_screens": len(screens),
            "n_pixel_words": sum(len(s.pixel_words) for s in screens)}


def cmd_clean(args, cfg):
    screens = dataio.read_screens(_path(args, cfg, "screens", "labels", "screens file"))
    ocr = dataio.read_ocr(_path(args, cfg, "ocr", "ocr", "OCR file"))
    vh_dir = _path(args, cfg, "vh", "vh", "View-Hierarchy directory")
    items = []
    for s in screens:
        vh = _read_vh(_need(os.path.join(vh_dir, f"{s.screen_id}.json"), "View-Hierarchy file"))
        items.append((s, vh_text_count(vh, cfg.label_gen), len(ocr.get(s.screen_id, []))))
    kept, report = clean_screens(items, cfg.label_gen)
    dataio.write_screens(_out(args, cfg, "out", "cleaned", "output file"), [k[0] for k in kept])
    result = {"kept": report.kept, "dropped": [{"screen_id": sid, "mismatch": r}
                                               for sid, r in report.dropped]}
    if args.report:
        _write_json(args.report, result)
    return {"kept": len(report.kept), "dropped": len(report.dropped)}


def _load_boxes(path, kind, with_scores):
    """Boxes from either Screen-Sentence records or flat box records."""
    out = []

    def parse(rec):
        if "pixel_words" in rec:
            s = dataio.screen_from_dict(rec)
            return [(s.screen_id, p.bbox, 1.0, p.kind) for p in s.pixel_words]
        return [dataio.box_record_from_dict(rec)]

    for group in dataio.read_jsonl(path, parse):
        for image_id, bbox, score, k in group:
            if kind is not None and k is not None and k != kind:
                continue
            if with_scores:
                out.append(Detection(bbox, 1.0 if score is None else float(score), image_id))
            else:
                out.append(GroundTruth(bbox, image_id))
    return out


def cmd_eval_det(args, cfg):
    dets = _load_boxes(_need(args.pred, "prediction file"), args.kind, True)
    gts = _load_boxes(_need(args.gt, "ground-truth file"), args.kind, False)
    report = detection_report(dets, gts)
    report.update({"kind": args.kind or "all", "n_detections": len(dets), "n_ground_truth": len(gts),
                   "pr_curve": [list(p) for p in pr_curve(dets, gts, 0.5)]})
    _write_json(_out(args, cfg, "out", "det_metrics", "output file"), report)
    return {k: report[k] for k in ("AP", "AP50", "AP75", "AR")}


def cmd_train_proposal_clf(args, cfg):
    patches = dataio.read_patches(_path(args, cfg, "patches", "patches", "patch file"))
    seed = cfg.seeds.classifier if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(patches))
    n_hold = int(round(cfg.training.holdout_fraction * len(patches)))
    hold, train = order[:n_hold], order[n_hold:]
    epochs = cfg.training.classifier_epochs if args.epochs is None else args.epochs
    clf = train_proposal_classifier([patches[i] for i in train], epochs=epochs, seed=seed)

    def accuracy(idx):
        if not len(idx):
            return None
        X = np.stack([patches[i][0] for i in idx])
        y = np.array([patches[i][1] for i in idx])
        return float(np.mean(clf.predict(X) == y))

    save_proposal_classifier(_out(args, cfg, "out", "classifier", "checkpoint path"), clf,
                             meta={"seed": seed, "epochs": epochs})
    metrics = {"train_accuracy": accuracy(train), "holdout_accuracy": accuracy(hold),
               "n_train": int(len(train)), "n_holdout": int(len(hold)),
               **_loss_summary(clf.loss_history_)}
    _write_json(args.metrics, metrics)
    return {"train_accuracy": metrics["train_accuracy"], "holdout_accuracy": metrics["holdout_accuracy"]}


def _steps(args, default):
    if getattr(args, "epochs", None) is not None:
        return None, args.epochs
    return (default if args.steps is None else args.steps), None


def cmd_pretrain(args, cfg):
    screens = dataio.read_screens(_path(args, cfg, "screens", "labels", "screens file"))
    seed = cfg.seeds.pretrain if args.seed is None else args.seed
    mcfg = cfg.model
    rasters = np.stack([layout_raster(s, mcfg.layout_grid) for s in screens])
    ae = LayoutAutoencoder(grid=mcfg.layout_grid, d_model=mcfg.d_model,
                           epochs=cfg.training.layout_epochs, seed=seed).fit(rasters)
    model = ScreenTransformer(mcfg, seed=seed, layout_encoder=ae)
    n_steps, epochs = _steps(args, cfg.training.pretrain_steps)
    result = pretrain(model, screens, cfg.optimizer, seed=seed, n_steps=n_steps, epochs=epochs)
    out = _out(args, cfg, "out", "pretrained", "checkpoint path")
    save_model(out, model, result.optimizer, meta={"task": "pretrain", "seed": seed,
                                                   "optimizer": cfg.optimizer.to_dict()})
    metrics = {"task": "pretrain", "layout_reconstruction_loss": ae.final_loss_,
               **_loss_summary(result.losses)}
    _write_json(args.metrics, metrics)
    return {"steps": len(result.losses), "first_loss": metrics["first_loss"],
            "last_loss": metrics["last_loss"]}


_TASKS = {
    "click": (train_clickability, click_accuracy),
    "relation": (train_relation, relation_accuracy),
    "app": (train_app, app_accuracy),
}


def _finetune(task, args, cfg):
    screens = dataio.read_screens(_path(args, cfg, "screens", "labels", "screens file"))
    seed = cfg.seeds.finetune if args.seed is None else args.seed
    if args.init:
        model = load_model(_need(args.init, "initial checkpoint"), seed=seed)
    else:
        model = ScreenTransformer(cfg.model, seed=seed)
    train_fn, acc_fn = _TASKS[task]
    freeze = args.freeze_encoder or cfg.training.freeze_encoder
    n_steps, epochs = _steps(args, cfg.training.finetune_steps)
    extra = ([[s.app_type for s in screens]] if task == "app" else [])
    if task == "app" and any(s.app_type is None for s in screens):
        raise ConfigError("train-app needs app_type on every screen")
    result = train_fn(model, screens, *extra, cfg.optimizer, seed=seed, n_steps=n_steps,
                      epochs=epochs, freeze_encoder=freeze)
    out = _out(args, cfg, "out", f"{task}_model", "checkpoint path")
    save_model(out, model, result.optimizer, meta={"task": task, "seed": seed,
                                                   "freeze_encoder": freeze})
    accuracy, n = acc_fn(model, screens)
    metrics = {"task": task, "train_accuracy": accuracy, "n_labels": n, **_loss_summary(result.losses)}
    _write_json(args.metrics, metrics)
    return {"train_accuracy": accuracy, "steps": len(result.losses)}


def cmd_eval_task(args, cfg):
    screens = dataio.read_screens(_path(args, cfg, "screens", "labels", "screens file"))
    model = load_model(_need(args.model, "model checkpoint"))
    accuracy, n = _TASKS[args.task][1](model, screens)
    result = {"task": args.task, "accuracy": accuracy, "n_labels": n}
    _write_json(_out(args, cfg, "out", "task_metrics", "output file"), result)
    return result


def cmd_build_index(args, cfg):
    screens = dataio.read_screens(_path(args, cfg, "screens", "labels", "screens file"))
    model = load_model(_need(args.model, "model checkpoint"))
    index = build_index(screens, model)
    dataio.write_index(_out(args, cfg, "out", "index", "index path"), index)
    return {"n_screens": len(index)}


def cmd_retrieve(args, cfg):
    index = dataio.read_index(_need(args.index, "index file"))
    model = load_model(_need(args.model, "model checkpoint"))
    screens = {s.screen_id: s for s in dataio.read_screens(_need(args.screens, "screens file"))}
    if args.query not in screens:
        raise ConfigError(f"query screen {args.query!r} is not in {args.screens}")
    ranking = [{"screen_id": sid, "cosine": cos}
               for sid, cos in retrieve(screens[args.query], index, args.k, model)]
    if args.out:
        _write_json(args.out, ranking)
    return {"results": ranking}


def _flatten(prefix, value, rows):
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else k, value[k], rows)
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        rows.append((prefix, value))


def cmd_report(args, cfg):
    rows, series = [], {}
    for path in args.inputs:
        doc = _read_json(_need(path, "metrics file"))
        name = os.path.splitext(os.path.basename(path))[0]
        flat: List = []
        _flatten("", doc, flat)
        rows.extend((name, k, v) for k, v in flat)
        if isinstance(doc, dict):
            if doc.get("losses"):
                series[f"{name}/loss"] = [[i + 1, v] for i, v in enumerate(doc["losses"])]
            if doc.get("pr_curve"):
                series[f"{name}/pr_curve"] = doc["pr_curve"]
    if args.csv:
        try:
            with open(args.csv, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["source", "metric", "value"])
                writer.writerows(rows)
        except OSError as exc:
            raise IoFailure(f"cannot write {args.csv!r}: {exc}") from exc
    if args.plot:
        _write_json(args.plot, {"series": series})
    return {"rows": len(rows), "series": sorted(series)}


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pw2ss", description="Pixel-Words and Screen Transformer toolkit.")
    parser.add_argument("--config", help="INI run configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--config", dest="sub_config", help="INI run configuration")
        return p

    p = add("gen-fixtures", cmd_gen_fixtures, "render the synthetic screen corpus")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-screens", type=int, default=64)
    p.add_argument("--app-classes", type=int, default=26)

    p = add("gen-labels", cmd_gen_labels, "View Hierarchy + OCR -> Pixel-Words JSONL")
    p.add_argument("--vh")
    p.add_argument("--ocr")
    p.add_argument("--rasters")
    p.add_argument("--classifier")
    p.add_argument("--out")
    p.add_argument("--boxes-out", help="also write scored boxes for eval-det")

    p = add("clean", cmd_clean, "drop screens whose OCR and VH text counts disagree")
    p.add_argument("--screens")
    p.add_argument("--vh")
    p.add_argument("--ocr")
    p.add_argument("--out")
    p.add_argument("--report")

    p = add("eval-det", cmd_eval_det, "detection metrics of predictions against ground truth")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--kind", choices=("text", "graphic"))
    p.add_argument("--out")

    p = add("train-proposal-clf", cmd_train_proposal_clf, "fit the graphic-proposal classifier")
    p.add_argument("--patches")
    p.add_argument("--out")
    p.add_argument("--metrics", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)

    p = add("pretrain", cmd_pretrain, "masked Pixel-Word pretraining")
    p.add_argument("--screens")
    p.add_argument("--out")
    p.add_argument("--metrics", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)

    for task in ("click", "relation", "app"):
        p = add(f"train-{task}", lambda a, c, t=task: _finetune(t, a, c), f"fine-tune the {task} head")
        p.add_argument("--screens")
        p.add_argument("--init", help="pretrained checkpoint")
        p.add_argument("--out")
        p.add_argument("--metrics", required=True)
        p.add_argument("--steps", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--freeze-encoder", action="store_true")

    p = add("eval-task", cmd_eval_task, "accuracy of a fine-tuned head")
    p.add_argument("--task", choices=sorted(_TASKS), required=True)
    p.add_argument("--screens")
    p.add_argument("--model", required=True)
    p.add_argument("--out")

    p = add("build-index", cmd_build_index, "encode screens into a retrieval index")
    p.add_argument("--screens")
    p.add_argument("--model", required=True)
    p.add_argument("--out")

    p = add("retrieve", cmd_retrieve, "rank indexed screens by cosine similarity to a query")
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--screens", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out")

    p = add("report", cmd_report, "metrics JSON -> CSV and plot data")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--csv")
    p.add_argument("--plot")
    return parser


def _exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, IoFailure):
        return EXIT_IO
    return EXIT_ERROR


def run(argv: Optional[List[str]] = None) -> dict:
    """Parse ``argv`` and execute; raises CommandFailed on any handled error."""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.sub_config or args.config)
        return args.func(args, cfg)
    except (PW2SSError, NotFittedError, ValueError, KeyError) as exc:
        raise CommandFailed(args.command, exc) from exc


def main(argv: Optional[List[str]] = None) -> int:
    try:
        result = run(argv)
    except CommandFailed as failure:
        err = failure.error
        print(json.dumps({"error": type(err).__name__, "command": failure.command,
                          "message": str(err)}), file=sys.stderr)
        return _exit_code(err)
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
