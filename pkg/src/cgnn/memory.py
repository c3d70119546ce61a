"""Bounded replay memory over frozen node neighborhoods.

Slots are split across classes in proportion to how often each class has
appeared in the stream so far. Within a class, admission follows reservoir
sampling, optionally biased toward nodes whose neighborhoods mix labels,
since those carry more information about the decision boundary.
"""

import math
from dataclasses import dataclass

import numpy as np

from .graph import EgoNet, freeze_ego

STRATEGIES = ("random", "hierarchical", "stepwise")


class MemoryError_(ValueError):
    pass


@dataclass
class MemoryEntry:
    ego: EgoNet
    label: int
    step: int


class ReplayMemory:
    """capacity: total slot budget. strategy: one of STRATEGIES.
    alpha: importance boost used by the stepwise strategy."""

    __slots__ = ("capacity", "strategy", "alpha", "entries", "seen")

    def __init__(self, capacity, strategy="stepwise", alpha=1.0):
        if capacity < 0:
            raise MemoryError_("capacity must be non-negative")
        if strategy not in STRATEGIES:
            raise MemoryError_("unknown strategy %r" % strategy)
        self.capacity = capacity
        self.strategy = strategy
        self.alpha = alpha
        self.entries = {}
        self.seen = {}

    @property
    def size(self):
        return sum(len(v) for v in self.entries.values())

    @property
    def seen_total(self):
        return sum(self.seen.values())

    def classes(self):
        return sorted(self.seen)

    def copy(self):
        out = ReplayMemory(self.capacity, self.strategy, self.alpha)
        out.entries = {k: list(v) for k, v in self.entries.items()}
        out.seen = dict(self.seen)
        return out

    def target_slots(self):
        """Per-class slot budget tracking stream frequencies.

        Largest-remainder split of the capacity across seen classes; once
        the capacity covers all classes, every seen class keeps at least one
        slot, funded by the largest allocation.
        """
        classes = self.classes()
        total = self.seen_total
        if not classes or total == 0 or self.capacity == 0:
            return {k: 0 for k in classes}
        quota = {k: self.capacity * self.seen[k] / total for k in classes}
        alloc = {k: int(math.floor(quota[k])) for k in classes}
        leftover = self.capacity - sum(alloc.values())
        by_remainder = sorted(classes,
                              key=lambda k: (alloc[k] - quota[k], k))
        for k in by_remainder[:leftover]:
            alloc[k] += 1
        if self.capacity >= len(classes):
            for k in classes:
                if alloc[k] == 0:
                    donor = max(classes, key=lambda j: (alloc[j], -j))
                    alloc[donor] -= 1
                    alloc[k] = 1
        return alloc


def node_importance(view, v):
    """Fraction of the node's labeled neighbors holding a different label."""
    own = view.label(v)
    if own is None:
        raise MemoryError_("importance of an unlabeled node is undefined")
    disagree = 0
    labeled = 0
    for u in view.neighbors(v):
        lab = view.label(u)
        if lab is None:
            continue
        labeled += 1
        if lab != own:
            disagree += 1
    return disagree / labeled if labeled else 0.0


def replace_prob(mem, class_label, importance, alpha=None):
    """Admission probability for the latest candidate of a class.

    Reservoir base rate target_slots/seen, scaled up by importance and
    clamped to 1. The random strategy ignores class and importance and
    uses the pooled rate capacity/seen_total.
    """
    if alpha is None:
        alpha = mem.alpha
    if mem.strategy == "random":
        total = mem.seen_total
        return min(1.0, mem.capacity / total) if total else 0.0
    seen = mem.seen.get(class_label, 0)
    if seen == 0:
        return 0.0
    slots = mem.target_slots().get(class_label, 0)
    boost = 1.0 + alpha * importance if mem.strategy == "stepwise" else 1.0
    return min(1.0, slots / seen * boost)


def _evict_most_over(mem, targets):
    over = [(len(mem.entries[k]) - targets.get(k, 0), k)
            for k in mem.entries if mem.entries[k]]
    surplus, k = max(over)
    if surplus <= 0:
        raise MemoryError_("no surplus class to evict from")
    oldest = min(range(len(mem.entries[k])),
                 key=lambda i: (mem.entries[k][i].step, i))
    mem.entries[k].pop(oldest)


def update_memory(mem, candidates, view, ego_depth, rng):
    """Offer labeled candidates to the memory, one by one in id order.

    Returns an updated copy; the input memory is untouched. Stream counters
    advance for every candidate whether or not it is admitted. Neighborhoods
    are frozen only at admission time.
    """
    out = mem.copy()
    for v in sorted(set(candidates)):
        label = view.label(v)
        if label is None:
            raise MemoryError_("candidate %d has no label" % v)
        out.seen[label] = out.seen.get(label, 0) + 1
        out.entries.setdefault(label, [])
        if out.capacity == 0:
            continue

        if out.strategy == "random":
            if out.size < out.capacity:
                out.entries[label].append(
                    MemoryEntry(freeze_ego(view, v, ego_depth), label, view.time))
            elif rng.random() < out.capacity / out.seen_total:
                flat = [(k, i) for k in sorted(out.entries)
                        for i in range(len(out.entries[k]))]
                k, i = flat[rng.integers(len(flat))]
                out.entries[k].pop(i)
                out.entries[label].append(
                    MemoryEntry(freeze_ego(view, v, ego_depth), label, view.time))
            continue

        targets = out.target_slots()
        slots = targets.get(label, 0)
        held = len(out.entries[label])
        if held < slots:
            if out.size >= out.capacity:
                _evict_most_over(out, targets)
            out.entries[label].append(
                MemoryEntry(freeze_ego(view, v, ego_depth), label, view.time))
        elif slots > 0:
            importance = 0.0
            if out.strategy == "stepwise" and out.alpha != 0.0:
                importance = node_importance(view, v)
            p = min(1.0, slots / out.seen[label]
                    * (1.0 + (out.alpha * importance
                              if out.strategy == "stepwise" else 0.0)))
            if rng.random() < p:
                out.entries[label].pop(int(rng.integers(held)))
                out.entries[label].append(
                    MemoryEntry(freeze_ego(view, v, ego_depth), label, view.time))
    return out


def replay_batch(mem):
    """All stored entries as (view, node, label) training triples."""
    out = []
    for k in sorted(mem.entries):
        for entry in mem.entries[k]:
            out.append((entry.ego, entry.ego.center, entry.label))
    return out


def save_memory(mem, path):
    """Lossless memory dump (.npz). Inverse of load_memory."""
    payload = {
        "format_version": np.array(1, dtype=np.int64),
        "capacity": np.array(mem.capacity, dtype=np.int64),
        "strategy": np.array(mem.strategy),
        "alpha": np.array(mem.alpha, dtype=np.float64),
        "seen_classes": np.array(sorted(mem.seen), dtype=np.int64),
        "seen_counts": np.array([mem.seen[k] for k in sorted(mem.seen)],
                                dtype=np.int64),
    }
    idx = 0
    for k in sorted(mem.entries):
        for entry in mem.entries[k]:
            ego = entry.ego
            nodes = np.array(ego.nodes, dtype=np.int64)
            edges = []
            for v in ego.nodes:
                for u in ego.neighbors(v):
                    if v < u:
                        edges.append((v, u))
            prefix = "e%d_" % idx
            payload[prefix + "meta"] = np.array(
                [entry.label, entry.step, ego.center, ego.depth], dtype=np.int64)
            payload[prefix + "nodes"] = nodes
            payload[prefix + "edges"] = np.array(edges, dtype=np.int64).reshape(-1, 2)
            payload[prefix + "feat"] = np.stack(
                [ego.feature_row(v) for v in ego.nodes])
            idx += 1
    payload["entry_count"] = np.array(idx, dtype=np.int64)
    np.savez(path, **payload)


def load_memory(path):
    with np.load(path) as data:
        if int(data["format_version"]) != 1:
            raise MemoryError_("unsupported memory dump version")
        mem = ReplayMemory(int(data["capacity"]), str(data["strategy"]),
                           float(data["alpha"]))
        for k, c in zip(data["seen_classes"], data["seen_counts"]):
            mem.seen[int(k)] = int(c)
            mem.entries.setdefault(int(k), [])
        for idx in range(int(data["entry_count"])):
            prefix = "e%d_" % idx
            label, step, center, depth = (int(x) for x in data[prefix + "meta"])
            nodes = tuple(int(v) for v in data[prefix + "nodes"])
            feat_rows = data[prefix + "feat"]
            adj = {v: [] for v in nodes}
            for u, v in data[prefix + "edges"]:
                adj[int(u)].append(int(v))
                adj[int(v)].append(int(u))
            adj = {v: tuple(sorted(a)) for v, a in adj.items()}
            feat = {}
            for i, v in enumerate(nodes):
                row = feat_rows[i].copy()
                row.setflags(write=False)
                feat[v] = row
            ego = EgoNet(center, depth, nodes, label, adj, feat)
            mem.entries[label].append(MemoryEntry(ego, label, step))
    return mem
