import numpy as np
import pytest

from cgnn.graph import GraphState, SnapshotDelta


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def make_graph(rng, n, edge_prob, dim, classes=2, label_frac=1.0, time=0):
    """One-delta random graph; labels assigned to a label_frac subset."""
    feats = rng.random((n, dim))
    labels = []
    for v in range(n):
        if rng.random() < label_frac:
            labels.append(int(rng.integers(classes)))
        else:
            labels.append(None)
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < edge_prob:
                edges.append((u, v))
    delta = SnapshotDelta(time=time,
                          new_nodes=tuple((v, feats[v], labels[v])
                                          for v in range(n)),
                          edge_adds=tuple(edges))
    state = GraphState.empty(dim).apply_delta(delta) if time == 0 else None
    return state, delta


def random_stream(rng, steps, per_step, edge_prob, dim, classes=2,
                  label_frac=1.0):
    """Delta sequence where each step adds nodes and random new edges."""
    deltas = []
    total = 0
    for t in range(steps):
        feats = rng.random((per_step, dim))
        new_nodes = []
        for j in range(per_step):
            lab = int(rng.integers(classes)) if rng.random() < label_frac else None
            new_nodes.append((total + j, feats[j], lab))
        edges = []
        for j in range(per_step):
            u = total + j
            for v in range(u):
                if rng.random() < edge_prob:
                    edges.append((v, u))
        deltas.append(SnapshotDelta(time=t, new_nodes=tuple(new_nodes),
                                    edge_adds=tuple(sorted(edges))))
        total += per_step
    return deltas


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
