"""Experiment harness: splits, evaluation, reports and parameter sweeps.

Each step's newly labeled nodes are split once into train and test sides;
every model in a comparison sees the same splits. Evaluation always uses
full neighborhoods, so two runs with the same seed produce identical metric
files (timing columns aside).
"""

import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .graph import load_stream
from .metrics import accuracy, macro_f1
from .model import embed_batch, predict_batch
from .synth import SynthConfig, generate
from .train import MODELS, TrainConfig, run_stream

_SPLIT_TAG = 419

ABLATION_AXES = ("detector", "memory_strategy", "memory_size", "lambda",
                 "reg_kind", "view_combo")
SCALE_AXES = ("network_size", "stream_size")


@dataclass
class ExperimentSpec:
    """What to run and where to put the results.

    Exactly one of data_dir (stream files on disk) or synth (generator
    configuration) supplies the stream.
    """

    cfg: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = None
    data_dir: str = None
    model: str = "continual"
    split: float = 0.7
    accumulate_test: bool = False
    cohort_steps: tuple = (0, 8)
    out_dir: str = None
    checkpoints: bool = False

    def __post_init__(self):
        if (self.data_dir is None) == (self.synth is None):
            raise ValueError("need exactly one stream source")
        if self.model not in MODELS:
            raise ValueError("unknown model %r" % self.model)
        if not (0.0 < self.split < 1.0):
            raise ValueError("split fraction must lie in (0, 1)")


def load_deltas(spec):
    if spec.data_dir is not None:
        deltas = load_stream(os.path.join(spec.data_dir, "edges.txt"),
                             os.path.join(spec.data_dir, "features.txt"),
                             os.path.join(spec.data_dir, "labels.txt"),
                             os.path.join(spec.data_dir, "schedule.txt"))
    else:
        deltas = generate(spec.synth)
    dim = 0
    for delta in deltas:
        if delta.new_nodes:
            dim = len(delta.new_nodes[0][1])
            break
    return deltas, dim


def make_splits(deltas, split, seed):
    """Per-step train/test node id sets over newly labeled nodes.

    Each labeled node lands on exactly one side of exactly one step.
    """
    train_sets = []
    test_sets = []
    for delta in deltas:
        ids = [nid for nid, _f, lab in delta.new_nodes if lab is not None]
        rng = np.random.default_rng([seed, _SPLIT_TAG, delta.time])
        order = rng.permutation(len(ids))
        cut = int(split * len(ids) + 0.5)
        train_sets.append({ids[i] for i in order[:cut]})
        test_sets.append({ids[i] for i in order[cut:]})
    return train_sets, test_sets


def evaluate(params, state, ids):
    """Full-neighborhood predictions vs stored labels for the given nodes."""
    ids = sorted(ids)
    probs = predict_batch(params, [(state, v) for v in ids])
    y_pred = probs.argmax(axis=1)
    y_true = np.array([state.label(v) for v in ids], dtype=np.int64)
    return y_true, y_pred


def _metric_row(model, step, cohort, y_true, y_pred, report):
    return {
        "model": model,
        "step": step,
        "cohort": cohort,
        "n": len(y_true),
        "macro_f1": macro_f1(y_true, y_pred),
        "accuracy": accuracy(y_true, y_pred),
        "changed": report.changed,
        "influenced": report.influenced,
        "trained": report.trained,
        "train_seconds": report.train_seconds,
        "detection_seconds": report.detection_seconds,
    }


_CSV_COLUMNS = ("model", "step", "cohort", "n", "macro_f1", "accuracy",
                "changed", "influenced", "trained", "train_seconds",
                "detection_seconds")
TIMING_COLUMNS = ("train_seconds", "detection_seconds")


def _format_cell(value):
    if isinstance(value, float):
        return "%.10f" % value
    return str(value)


def write_metrics_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(",".join(_CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row[c]) for c in _CSV_COLUMNS)
                     + "\n")
    return path


def _run_one_model(model, deltas, dim, spec, train_sets, test_sets,
                   dump_embeddings=False):
    """Drive one model over the stream, collecting metric rows per step."""
    rows = []
    cohorts = sorted(set(spec.cohort_steps)) if dump_embeddings else []
    ckpt_dir = None
    if spec.checkpoints and spec.out_dir:
        ckpt_dir = os.path.join(spec.out_dir, "run", model)

    def hook(t, state, params, report):
        if spec.accumulate_test:
            test_ids = set().union(*test_sets[:t + 1])
        else:
            test_ids = test_sets[t]
        if test_ids:
            y_true, y_pred = evaluate(params, state, test_ids)
            rows.append(_metric_row(model, t, "all", y_true, y_pred, report))
        for c in cohorts:
            if c > t or not test_sets[c]:
                continue
            y_true, y_pred = evaluate(params, state, test_sets[c])
            rows.append(_metric_row(model, t, "step%d" % c, y_true, y_pred,
                                    report))
        if dump_embeddings and spec.out_dir:
            tracked = sorted(set().union(*(test_sets[c] for c in cohorts
                                           if c <= t)) or set())
            if tracked:
                reps = embed_batch(params, [(state, v) for v in tracked])
                path = os.path.join(spec.out_dir,
                                    "embeddings_step%d.csv" % t)
                with open(path, "w") as fh:
                    fh.write("node_id," + ",".join(
                        "e%d" % i for i in range(reps.shape[1])) + "\n")
                    for v, rep in zip(tracked, reps):
                        fh.write(str(v) + "," + ",".join(
                            "%.10f" % x for x in rep) + "\n")

    run_stream(model, deltas, spec.cfg, dim, train_sets=train_sets,
               eval_hook=hook, checkpoint_dir=ckpt_dir)
    return rows


def _summary(rows, extra=None):
    """Step-averaged headline numbers per (model, cohort) pair."""
    out = {}
    for row in rows:
        key = (row["model"], row["cohort"])
        out.setdefault(key, []).append(row)
    summary = {}
    for (model, cohort), group in sorted(out.items()):
        entry = summary.setdefault(model, {})
        entry[cohort] = {
            "macro_f1_avg": float(np.mean([r["macro_f1"] for r in group])),
            "accuracy_avg": float(np.mean([r["accuracy"] for r in group])),
            "steps": len(group),
            "train_seconds_total": float(
                sum(r["train_seconds"] for r in group)),
            "detection_seconds_total": float(
                sum(r["detection_seconds"] for r in group)),
        }
    blob = {"models": summary}
    if extra:
        blob.update(extra)
    return blob


def _write_outputs(spec, rows, summary_extra=None):
    summary = _summary(rows, summary_extra)
    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
        write_metrics_csv(rows, os.path.join(spec.out_dir, "metrics.csv"))
        with open(os.path.join(spec.out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


def run_experiment(spec, models=None):
    """Train and evaluate one or more models on the same stream and splits.

    Returns (rows, summary)."""
    deltas, dim = load_deltas(spec)
    train_sets, test_sets = make_splits(deltas, spec.split, spec.cfg.seed)
    rows = []
    for model in models or [spec.model]:
        rows.extend(_run_one_model(model, deltas, dim, spec, train_sets,
                                   test_sets))
    summary = _write_outputs(spec, rows, {"kind": "experiment",
                                          "config": asdict(spec.cfg)})
    return rows, summary


def run_case_study(spec, models=None):
    """Track fixed arrival cohorts across the stream and dump embeddings.

    Per step, every tracked cohort's test nodes are re-evaluated with the
    current parameters, and their hidden representations are written to
    embeddings_step<t>.csv for external visualization.
    """
    deltas, dim = load_deltas(spec)
    train_sets, test_sets = make_splits(deltas, spec.split, spec.cfg.seed)
    rows = []
    for model in models or [spec.model]:
        rows.extend(_run_one_model(model, deltas, dim, spec, train_sets,
                                   test_sets, dump_embeddings=True))
    summary = _write_outputs(spec, rows, {
        "kind": "case_study",
        "cohorts": sorted(set(spec.cohort_steps)),
        "config": asdict(spec.cfg)})
    return rows, summary


def _ablation_grid(axis, cfg):
    if axis == "detector":
        return [("detector", v) for v in ("naive", "bfs", "approx")]
    if axis == "memory_strategy":
        return [("memory_strategy", v)
                for v in ("random", "hierarchical", "stepwise")]
    if axis == "memory_size":
        return [("memory_size", v) for v in (50, 100, 250, 500)]
    if axis == "lambda":
        return [("lam", v) for v in (0.0, 80.0, 200.0, 400.0)]
    if axis == "reg_kind":
        return [("regularizer", v) for v in ("none", "l2", "ewc")]
    if axis == "view_combo":
        return [("view_combo", v) for v in ("none", "data", "model", "both")]
    raise ValueError("unknown ablation axis %r" % axis)


def apply_ablation_value(cfg, key, value):
    if key == "view_combo":
        if value == "none":
            return replace(cfg, use_replay=False, lam=0.0)
        if value == "data":
            return replace(cfg, use_replay=True, lam=0.0)
        if value == "model":
            return replace(cfg, use_replay=False)
        return replace(cfg, use_replay=True)
    if key == "regularizer" and value == "none":
        return replace(cfg, regularizer="none", lam=0.0)
    return replace(cfg, **{key: value})


def run_ablation(spec, axis, values=None):
    """Sweep one knob of the incremental model, everything else fixed.

    Returns (rows, summary) where each row is one swept value's step-averaged
    result.
    """
    deltas, dim = load_deltas(spec)
    train_sets, test_sets = make_splits(deltas, spec.split, spec.cfg.seed)
    grid = _ablation_grid(axis, spec.cfg)
    if values is not None:
        key = grid[0][0] if axis != "view_combo" else "view_combo"
        grid = [(key, v) for v in values]
    rows = []
    for key, value in grid:
        cfg = apply_ablation_value(spec.cfg, key, value)
        step_rows = _run_one_model("continual", deltas, dim,
                                   replace_spec_cfg(spec, cfg), train_sets,
                                   test_sets)
        rows.append({
            "axis": axis,
            "value": str(value),
            "macro_f1_avg": float(np.mean([r["macro_f1"]
                                           for r in step_rows])),
            "accuracy_avg": float(np.mean([r["accuracy"]
                                           for r in step_rows])),
            "train_seconds_total": float(sum(r["train_seconds"]
                                             for r in step_rows)),
            "detection_seconds_total": float(sum(r["detection_seconds"]
                                                 for r in step_rows)),
        })
    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
        cols = ("axis", "value", "macro_f1_avg", "accuracy_avg",
                "train_seconds_total", "detection_seconds_total")
        with open(os.path.join(spec.out_dir, "metrics.csv"), "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join(_format_cell(row[c]) for c in cols) + "\n")
        with open(os.path.join(spec.out_dir, "summary.json"), "w") as fh:
            json.dump({"kind": "ablation", "axis": axis, "rows": rows},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
    return rows


def replace_spec_cfg(spec, cfg):
    out = replace(spec, cfg=cfg)
    out.out_dir = None  # sweep values share the parent's output files
    out.checkpoints = False
    return out


def run_scalability(spec, axis, sizes=None, models=("continual", "retrained")):
    """Wall-time scaling measurements.

    network_size: the accumulated graph grows while the per-step cohort is
    fixed; reports the final step's times per model. stream_size: total node
    count is fixed while the cohort size doubles; reports mean per-step
    times of the incremental model.
    """
    if axis not in SCALE_AXES:
        raise ValueError("unknown scaling axis %r" % axis)
    if spec.synth is None:
        raise ValueError("scaling runs generate their own streams")
    base = spec.synth
    rows = []
    if axis == "network_size":
        steps_grid = sizes or (4, 8, 16)
        for steps in steps_grid:
            synth = replace(base, steps=steps,
                            structure_shift_step=steps,
                            attribute_shift_step=steps)
            deltas = generate(synth)
            dim = synth.feature_dim
            train_sets, test_sets = make_splits(deltas, spec.split,
                                                spec.cfg.seed)
            for model in models:
                _p, _m, reports = run_stream(model, deltas, spec.cfg, dim,
                                             train_sets=train_sets)
                last = reports[-1]
                rows.append({
                    "axis": axis, "model": model,
                    "nodes": synth.steps * synth.per_step,
                    "cohort": synth.per_step,
                    "train_seconds": last.train_seconds,
                    "detection_seconds": last.detection_seconds,
                })
    else:
        cohort_grid = sizes or (64, 128, 256)
        total = base.steps * base.per_step
        for cohort in cohort_grid:
            steps = max(1, total // cohort)
            synth = replace(base, steps=steps, per_step=cohort,
                            structure_shift_step=steps,
                            attribute_shift_step=steps)
            deltas = generate(synth)
            train_sets, test_sets = make_splits(deltas, spec.split,
                                                spec.cfg.seed)
            for model in models:
                _p, _m, reports = run_stream(model, deltas, spec.cfg,
                                             synth.feature_dim,
                                             train_sets=train_sets)
                rows.append({
                    "axis": axis, "model": model,
                    "nodes": steps * cohort,
                    "cohort": cohort,
                    "train_seconds": float(np.mean(
                        [r.train_seconds for r in reports])),
                    "detection_seconds": float(np.mean(
                        [r.detection_seconds for r in reports])),
                })
    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
        cols = ("axis", "model", "nodes", "cohort", "train_seconds",
                "detection_seconds")
        with open(os.path.join(spec.out_dir, "metrics.csv"), "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join(_format_cell(row[c]) for c in cols) + "\n")
        with open(os.path.join(spec.out_dir, "summary.json"), "w") as fh:
            json.dump({"kind": "scalability", "axis": axis, "rows": rows},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
    return rows
