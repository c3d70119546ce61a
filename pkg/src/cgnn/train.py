"""Incremental training loop and reference training modes.

One stream step: materialize the new snapshot, find the nodes whose
patterns the change disturbed, then fit the model on those nodes together
with the replay memory, under a quadratic penalty that anchors weights the
remembered patterns rely on. Afterwards the memory is offered the step's
training nodes.

Reference modes for comparison runs: "pretrained" fits only the first
snapshot, "online" keeps fitting the changed nodes, "single" refits from
scratch on the changed nodes, "retrained" refits from scratch on every
labeled node seen so far.

Randomness is drawn from generators derived from (seed, purpose, step), so
a run continued from a checkpoint consumes exactly the streams the original
run would have.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .detect import (ThresholdRule, score_approx, score_bfs, score_naive,
                     select_influenced)
from .ewc import estimate_fisher, ewc_penalty, uniform_importance
from .graph import GraphState, l_hop_set
from .memory import ReplayMemory, replay_batch, save_memory, update_memory
from .model import (GnnParams, loss_and_grad, loss_only, prepare_batch,
                    save_params, sgd_step)

MODELS = ("continual", "pretrained", "online", "single", "retrained")

_INIT_TAG = 101
_STEP_TAG = 211
_EVAL_TAG = 307


@dataclass
class TrainConfig:
    """Knobs for one run. Schedule defaults (lr, epochs, batch size) are
    implementation choices; override them per experiment."""

    hidden_dim: int = 64
    layers: int = 2
    activation: str = "relu"
    fanout: int = 10
    lr: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    detector: str = "approx"
    threshold_mode: str = "ratio"
    threshold_value: float = 0.8
    include_self_propagation: bool = False
    memory_size: int = 250
    memory_strategy: str = "stepwise"
    alpha: float = 1.0
    regularizer: str = "ewc"
    lam: float = 200.0
    use_replay: bool = True
    online_scope: str = "changed"
    seed: int = 0

    def __post_init__(self):
        if self.detector not in ("naive", "bfs", "approx"):
            raise ValueError("unknown detector %r" % self.detector)
        if self.regularizer not in ("none", "l2", "ewc"):
            raise ValueError("unknown regularizer %r" % self.regularizer)
        if self.online_scope not in ("changed", "detector"):
            raise ValueError("unknown online scope %r" % self.online_scope)
        ThresholdRule(self.threshold_mode, self.threshold_value)


@dataclass
class StepReport:
    step: int
    model: str
    changed: int = 0
    influenced: int = 0
    trained: int = 0
    replayed: int = 0
    per_epoch_loss: list = field(default_factory=list)
    loss_parts: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    detection_seconds: float = 0.0
    checkpoint_path: str = ""

    @property
    def train_seconds(self):
        return sum(self.epoch_seconds)


def _step_rng(cfg, step):
    return np.random.default_rng([cfg.seed, _STEP_TAG, step])


def _init_params(cfg, in_dim, out_dim, step):
    rng = np.random.default_rng([cfg.seed, _INIT_TAG, step])
    return GnnParams.init(in_dim, cfg.hidden_dim, max(out_dim, 1),
                          cfg.layers, cfg.activation, rng)


def detect_influenced(params, g_prev, g_t, delta, cfg):
    """Influenced-node set for one delta plus the wall time spent.

    The threshold is applied over the changed nodes and their depth-hop
    ball, whichever detector produced the scores, so detector choices stay
    comparable. Nodes that just arrived are influenced by definition.
    """
    new_ids = {nid for nid, _f, _l in delta.new_nodes}
    seeds = delta.changed_nodes()
    if not seeds:
        return set(), 0.0
    start = time.perf_counter()
    depth = params.layer_count
    pool = l_hop_set(g_t, seeds, depth)
    if cfg.detector == "naive":
        raw = score_naive(params, g_prev, g_t, range(g_t.n))
    elif cfg.detector == "bfs":
        raw = score_bfs(params, g_prev, g_t, delta, depth)
    else:
        raw = score_approx(params, g_prev, g_t, delta, depth,
                           cfg.include_self_propagation)
    rule = ThresholdRule(cfg.threshold_mode, cfg.threshold_value)
    pool_scores = {u: raw.get(u, 0.0) for u in sorted(pool)}
    influenced = select_influenced(pool_scores, rule) | new_ids
    return influenced, time.perf_counter() - start


def _train_epochs(params, fresh, replayed, fisher, cfg, rng, step,
                  decompose=False):
    """SGD epochs over fresh plus replayed triples.

    Returns (params, per_epoch_loss, loss_parts, epoch_seconds). With
    decompose set, per-epoch numbers are recomputed at the end of each epoch
    as summed fresh loss, summed replay loss and penalty, so the reported
    total always equals the sum of its parts.
    """
    entries = list(replayed) + list(fresh)
    losses = []
    parts = []
    seconds = []
    if not entries:
        return params, losses, parts, seconds
    penalized = fisher is not None and cfg.lam > 0
    # The objective sums per-node losses, so against a batch's mean loss
    # the anchor term enters at weight 1/total; applying it at full
    # strength every batch would make it len(entries) times stiffer.
    pscale = 1.0 / len(entries)

    # Neighborhoods are sampled once per step: full-batch schedules freeze
    # one plan, minibatch schedules freeze one random partition with a plan
    # per part and only reshuffle the visiting order each epoch.
    full = cfg.batch_size >= len(entries)
    plan = None
    parts_plans = None
    fresh_plan = None
    replay_plan = None
    if full:
        plan = prepare_batch(params.layer_count,
                             [(g, v) for g, v, _lab in entries],
                             cfg.fanout, rng)
    else:
        order = rng.permutation(len(entries))
        parts_plans = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [entries[i] for i in order[lo:lo + cfg.batch_size]]
            bplan = prepare_batch(params.layer_count,
                                  [(g, v) for g, v, _lab in batch],
                                  cfg.fanout, rng)
            parts_plans.append((batch, bplan))
    if decompose:
        if fresh:
            fresh_plan = prepare_batch(
                params.layer_count, [(g, v) for g, v, _lab in fresh],
                cfg.fanout, rng)
        if replayed:
            replay_plan = prepare_batch(
                params.layer_count, [(g, v) for g, v, _lab in replayed],
                cfg.fanout, rng)

    # Late in a stream the loss surface sharpens as margins grow, and a
    # step size that was fine for ten steps can start oscillating. A
    # full-batch epoch that fails to improve the objective is undone and
    # retried from the last good point at half the rate; minibatch epochs
    # only shrink the rate, since redoing a shuffled pass would change the
    # gradient noise it exists to provide. The next stream step starts
    # fresh at cfg.lr.
    step_lr = cfg.lr
    prev_total = None
    best = None
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        if full:
            loss, grads = loss_and_grad(params, entries, cfg.fanout, rng,
                                        plan=plan)
            total = loss
            if penalized:
                pen, pgrads = ewc_penalty(params, fisher, cfg.lam)
                total = loss + pscale * pen
                grads = [g + pscale * p for g, p in zip(grads, pgrads)]
            if best is not None and total >= best[0]:
                step_lr = max(step_lr / 2.0, cfg.lr / 1024.0)
                _, params, grads = best
            else:
                best = (total, params, grads)
            params = sgd_step(params, grads, step_lr)
        else:
            epoch_loss = 0.0
            for bi in rng.permutation(len(parts_plans)):
                batch, bplan = parts_plans[bi]
                loss, grads = loss_and_grad(params, batch, cfg.fanout, rng,
                                            plan=bplan)
                epoch_loss += loss * len(batch)
                if penalized:
                    _, pgrads = ewc_penalty(params, fisher, cfg.lam)
                    grads = [g + pscale * p for g, p in zip(grads, pgrads)]
                params = sgd_step(params, grads, step_lr)
            total = epoch_loss / len(entries)
            if prev_total is not None and total >= prev_total:
                step_lr = max(step_lr / 2.0, cfg.lr / 1024.0)
            prev_total = total
        seconds.append(time.perf_counter() - start)

        if decompose:
            erng = np.random.default_rng([cfg.seed, _EVAL_TAG, step, epoch])
            l_new = (loss_only(params, fresh, cfg.fanout, erng,
                               plan=fresh_plan) * len(fresh)
                     if fresh else 0.0)
            l_data = (loss_only(params, replayed, cfg.fanout, erng,
                                plan=replay_plan)
                      * len(replayed) if replayed else 0.0)
            l_model = ewc_penalty(params, fisher, cfg.lam)[0] if penalized else 0.0
            losses.append(l_new + l_data + l_model)
            parts.append((l_new, l_data, l_model))
        else:
            erng = np.random.default_rng([cfg.seed, _EVAL_TAG, step, epoch])
            losses.append(loss_only(params, entries, cfg.fanout, erng))
    return params, losses, parts, seconds


def continual_step(params, mem, g_prev, delta, cfg, rng, train_nodes=None):
    """One incremental update. Returns (params, memory, new snapshot, report).

    train_nodes, when given, is the set of nodes whose labels training may
    use; influenced nodes outside it still count as influenced but are not
    fit or stored.
    """
    g_t = g_prev.apply_delta(delta)
    class_count = g_t.class_count()
    if class_count > params.out_dim:
        params = params.expand_classes(class_count)

    influenced, det_seconds = detect_influenced(params, g_prev, g_t, delta, cfg)
    candidates = sorted(
        v for v in influenced
        if g_t.label(v) is not None and (train_nodes is None or v in train_nodes))
    fresh = [(g_t, v, g_t.label(v)) for v in candidates]
    replayed = replay_batch(mem) if cfg.use_replay else []

    fisher = None
    if cfg.lam > 0:
        if cfg.regularizer == "ewc" and mem.size > 0:
            fisher = estimate_fisher(params, mem, fanout=None)
        elif cfg.regularizer == "l2":
            fisher = uniform_importance(params)

    params, losses, parts, seconds = _train_epochs(
        params, fresh, replayed, fisher, cfg, rng, g_t.time, decompose=True)
    mem = update_memory(mem, candidates, g_t, params.layer_count, rng)

    report = StepReport(step=g_t.time, model="continual",
                        changed=len(delta.changed_nodes()),
                        influenced=len(influenced), trained=len(fresh),
                        replayed=len(replayed), per_epoch_loss=losses,
                        loss_parts=parts, epoch_seconds=seconds,
                        detection_seconds=det_seconds)
    return params, mem, g_t, report


def _checkpoint(params, mem, out_dir, step):
    path = os.path.join(out_dir, "step%d.ckpt" % step)
    with open(path, "wb") as fh:
        save_params(params, fh)
    if mem is not None:
        with open(os.path.join(out_dir, "step%d.mem" % step), "wb") as fh:
            save_memory(mem, fh)
    return path


def run_stream(model, deltas, cfg, feature_dim, train_sets=None,
               eval_hook=None, checkpoint_dir=None, start_step=0,
               init_params=None, init_mem=None):
    """Drive a model over a delta sequence.

    train_sets[t], when given, limits step t's label usage; otherwise every
    newly labeled node trains. eval_hook(t, snapshot, params, report) runs
    after each step. start_step with init_params (and init_mem for the
    incremental model) continues a checkpointed run; earlier deltas are
    replayed into the snapshot without training.

    Returns (params, memory, reports).
    """
    if model not in MODELS:
        raise ValueError("unknown model %r" % model)
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)

    state = GraphState.empty(feature_dim)
    train_mask = set()
    for t in range(start_step):
        state = state.apply_delta(deltas[t])
        train_mask |= _step_train_set(deltas[t], train_sets, t)
    if start_step and init_params is None:
        raise ValueError("continuing a run needs initial parameters")

    params = init_params
    mem = init_mem
    if mem is None:
        mem = ReplayMemory(cfg.memory_size if model == "continual" else 0,
                           cfg.memory_strategy, cfg.alpha)
    reports = []

    for t in range(start_step, len(deltas)):
        delta = deltas[t]
        step_train = _step_train_set(delta, train_sets, t)
        train_mask |= step_train
        rng = _step_rng(cfg, t)

        if model == "continual":
            if params is None:
                g_probe = state.apply_delta(delta)
                params = _init_params(cfg, g_probe.feature_dim,
                                      g_probe.class_count(), t)
            params, mem, state, report = continual_step(
                params, mem, state, delta, cfg, rng, train_nodes=train_mask)
        else:
            g_t = state.apply_delta(delta)
            if model in ("single", "retrained"):
                params = _init_params(cfg, g_t.feature_dim,
                                      g_t.class_count(), t)
            elif params is None:
                params = _init_params(cfg, g_t.feature_dim,
                                      g_t.class_count(), t)
            elif model == "online" and g_t.class_count() > params.out_dim:
                params = params.expand_classes(g_t.class_count())

            influenced = set()
            det_seconds = 0.0
            if model == "retrained":
                train_ids = sorted(v for v in train_mask
                                   if g_t.label(v) is not None)
            elif model == "pretrained":
                train_ids = sorted(step_train) if t == 0 else []
            elif model == "online" and cfg.online_scope == "detector":
                influenced, det_seconds = detect_influenced(
                    params, state, g_t, delta, cfg)
                train_ids = sorted(v for v in influenced
                                   if g_t.label(v) is not None
                                   and v in train_mask)
            else:
                train_ids = sorted(step_train)

            fresh = [(g_t, v, g_t.label(v)) for v in train_ids]
            params, losses, parts, seconds = _train_epochs(
                params, fresh, [], None, cfg, rng, t)
            state = g_t
            report = StepReport(step=t, model=model,
                                changed=len(delta.changed_nodes()),
                                influenced=len(influenced),
                                trained=len(fresh), per_epoch_loss=losses,
                                loss_parts=parts, epoch_seconds=seconds,
                                detection_seconds=det_seconds)

        if checkpoint_dir:
            report.checkpoint_path = _checkpoint(
                params, mem if model == "continual" else None,
                checkpoint_dir, t)
        reports.append(report)
        if eval_hook is not None:
            eval_hook(t, state, params, report)
    return params, mem, reports


def _step_train_set(delta, train_sets, t):
    if train_sets is not None:
        return set(train_sets[t])
    return {nid for nid, _f, lab in delta.new_nodes if lab is not None}
