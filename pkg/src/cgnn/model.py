"""Mean-aggregator message passing network with hand-written gradients.

Layer rule: h_v^l = act(W_l . mean over {h_v^(l-1)} union sampled neighbor
representations + b_l). The self vector always joins the mean, there is no
separate self weight. Hidden layers use a rectifier, the last layer feeds a
softmax directly, so its weight matrix is the classifier head.

Each layer's bias lives as the final row of its weight matrix, as if the
aggregated input carried a trailing constant one. Everything that walks the
weight list (SGD, checkpoints, penalty terms) treats bias entries like any
other parameter. Feature rows sit in [0, 1], so without the bias the network
would be positively homogeneous and standardized inputs unreachable.

Forward passes over a batch share one layered computation plan. The plan
records which nodes are needed at each depth and which neighbors were
sampled, and the aggregation at each layer is a sparse row-stochastic matrix.
Gradients are derived by hand from that plan; a finite-difference checker
validates them.
"""

import numpy as np
from scipy import sparse


class ModelError(ValueError):
    pass


class GnnParams:
    """Weight stack plus activation tag.

    weights[l] has shape (in + 1, out); the extra row is the layer's bias.
    """

    __slots__ = ("weights", "activation")

    def __init__(self, weights, activation="relu"):
        if activation not in ("relu", "linear"):
            raise ModelError("unknown activation %r" % activation)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.activation = activation

    @classmethod
    def init(cls, in_dim, hidden_dim, out_dim, layers=2, activation="relu",
             rng=None):
        """Uniform init in +-sqrt(6 / (fan_in + fan_out)).

        The first layer is adapted to the [0, 1] feature contract: its
        scale gets a sqrt(12) gain correction (a uniform [0, 1] input has
        variance 1/12, where the usual limit assumes unit variance), and
        its bias centers pre-activations for mid-range inputs so units
        start at the kink instead of saturated by the shared 0.5 offset.
        Deeper biases start at zero.
        """
        if layers < 1:
            raise ModelError("need at least one layer")
        if rng is None:
            rng = np.random.default_rng()
        dims = [in_dim] + [hidden_dim] * (layers - 1) + [out_dim]
        weights = []
        for fi, fo in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fi + fo))
            if not weights:
                limit *= np.sqrt(12.0)
            w = np.zeros((fi + 1, fo), dtype=np.float64)
            w[:fi] = rng.uniform(-limit, limit, size=(fi, fo))
            if not weights:
                w[-1] = -0.5 * w[:fi].sum(axis=0)
            weights.append(w)
        return cls(weights, activation)

    @property
    def layer_count(self):
        return len(self.weights)

    @property
    def in_dim(self):
        return self.weights[0].shape[0] - 1

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def copy(self):
        return GnnParams([w.copy() for w in self.weights], self.activation)

    def expand_classes(self, new_out_dim):
        """Append zero-initialized classifier columns for unseen classes."""
        old = self.weights[-1]
        if new_out_dim < old.shape[1]:
            raise ModelError("class dimension cannot shrink")
        if new_out_dim == old.shape[1]:
            return self.copy()
        grown = np.zeros((old.shape[0], new_out_dim), dtype=np.float64)
        grown[:, :old.shape[1]] = old
        return GnnParams([w.copy() for w in self.weights[:-1]] + [grown],
                         self.activation)

    def flat(self):
        return np.concatenate([w.ravel() for w in self.weights])


def zero_grads(params):
    return [np.zeros_like(w) for w in params.weights]


class ForwardTrace:
    """Everything needed to rerun the backward pass without the graph.

    keys[l] lists the (view_index, node) pairs computed at depth l, samples[l]
    maps each pair to the sorted member ids of its mean (self included), and
    mats/means/preacts hold the per-layer aggregation matrix, aggregated
    inputs and pre-activations.
    """

    __slots__ = ("keys", "samples", "mats", "means", "preacts", "inputs",
                 "row_of", "views")

    def __init__(self, keys, samples, mats, means, preacts, inputs, row_of,
                 views):
        self.keys = keys
        self.samples = samples
        self.mats = mats
        self.means = means
        self.preacts = preacts
        self.inputs = inputs
        self.row_of = row_of
        self.views = views


def _build_plan(L, pairs, fanout, rng):
    """Layered sampling plan over (view, node) pairs.

    Member lists are sorted by node id before aggregation, so the output does
    not depend on the order a view reports neighbors in.
    """
    views = []
    view_index = {}
    keyed = []
    for view, node in pairs:
        vid = view_index.get(id(view))
        if vid is None:
            vid = len(views)
            view_index[id(view)] = vid
            views.append(view)
        keyed.append((vid, node))

    keys = [None] * (L + 1)
    samples = [None] * (L + 1)
    top = []
    top_pos = {}
    for key in keyed:
        if key not in top_pos:
            top_pos[key] = len(top)
            top.append(key)
    keys[L] = top

    for l in range(L, 0, -1):
        members = {}
        nxt = []
        nxt_pos = {}
        for key in keys[l]:
            vid, u = key
            nbrs = views[vid].neighbors(u)
            if fanout is None or len(nbrs) <= fanout:
                chosen = list(nbrs)
            else:
                take = rng.permutation(len(nbrs))[:fanout]
                chosen = [nbrs[i] for i in take]
            chosen.append(u)
            chosen = sorted(set(chosen))
            members[key] = chosen
            for w in chosen:
                kw = (vid, w)
                if kw not in nxt_pos:
                    nxt_pos[kw] = len(nxt)
                    nxt.append(kw)
        samples[l] = members
        keys[l - 1] = nxt
    return views, keyed, keys, samples


def _aggregation_matrix(keys_l, samples_l, pos_prev):
    rows = []
    cols = []
    vals = []
    for i, key in enumerate(keys_l):
        vid = key[0]
        members = samples_l[key]
        w = 1.0 / len(members)
        for m in members:
            rows.append(i)
            cols.append(pos_prev[(vid, m)])
            vals.append(w)
    return sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(keys_l), len(pos_prev)))


class BatchPlan:
    """Frozen sampling plan for repeated passes over one batch.

    Everything parameter-independent is precomputed: sampled member lists,
    per-layer aggregation matrices, the input feature block and the output
    row order. Build once per training step, then run any number of
    forward/backward passes against changing parameters.
    """

    __slots__ = ("keys", "samples", "mats", "inputs", "row_of", "views",
                 "keyed")

    def __init__(self, keys, samples, mats, inputs, row_of, views, keyed):
        self.keys = keys
        self.samples = samples
        self.mats = mats
        self.inputs = inputs
        self.row_of = row_of
        self.views = views
        self.keyed = keyed


def prepare_batch(layer_count, pairs, fanout=None, rng=None):
    """Sample neighborhoods for a batch once and freeze them as a BatchPlan."""
    if fanout is not None and rng is None:
        raise ModelError("sampled forward needs an rng")
    if not pairs:
        raise ModelError("empty batch")
    views, keyed, keys, samples = _build_plan(layer_count, pairs, fanout, rng)
    pos_prev = {key: i for i, key in enumerate(keys[0])}
    first = keys[0][0]
    dim = len(views[first[0]].feature_row(first[1]))
    inputs = np.empty((len(keys[0]), dim), dtype=np.float64)
    for key, i in pos_prev.items():
        inputs[i] = views[key[0]].feature_row(key[1])
    mats = [None] * (layer_count + 1)
    for l in range(1, layer_count + 1):
        mats[l] = _aggregation_matrix(keys[l], samples[l], pos_prev)
        pos_prev = {key: i for i, key in enumerate(keys[l])}
    row_of = [pos_prev[key] for key in keyed]
    return BatchPlan(keys, samples, mats, inputs, row_of, views, keyed)


def forward_batch(params, pairs, fanout=None, rng=None, plan=None):
    """Representations for a batch of (view, node) pairs.

    fanout=None aggregates full neighborhoods deterministically; with a
    finite fanout, larger neighbor lists are subsampled uniformly without
    replacement using rng. Passing a BatchPlan prepared for the same pairs
    reuses its frozen sampling instead.

    Returns (H, trace) where H[j] is the final representation of pairs[j].
    """
    if plan is None:
        plan = prepare_batch(params.layer_count, pairs, fanout, rng)
    L = params.layer_count
    means = [None] * (L + 1)
    preacts = [None] * (L + 1)
    H = plan.inputs
    for l in range(1, L + 1):
        agg = plan.mats[l] @ H
        w = params.weights[l - 1]
        Z = agg @ w[:-1] + w[-1]
        means[l] = agg
        preacts[l] = Z
        if l < L and params.activation == "relu":
            H = np.maximum(Z, 0.0)
        else:
            H = Z
    trace = ForwardTrace(plan.keys, plan.samples, plan.mats, means, preacts,
                         plan.inputs, plan.row_of, plan.views)
    return H[plan.row_of], trace


def forward(params, view, node, fanout=None, rng=None):
    """Single-node convenience wrapper around forward_batch."""
    H, trace = forward_batch(params, [(view, node)], fanout, rng)
    return H[0], trace


def embed_batch(params, pairs, fanout=None, rng=None):
    """Last-hidden-layer representation per (view, node) pair.

    For a one-layer network this is the raw feature row.
    """
    if fanout is not None and rng is None:
        raise ModelError("sampled forward needs an rng")
    if not pairs:
        raise ModelError("empty batch")
    L = params.layer_count
    views, keyed, keys, samples = _build_plan(L, pairs, fanout, rng)

    pos = {key: i for i, key in enumerate(keys[0])}
    H = np.empty((len(keys[0]), params.in_dim), dtype=np.float64)
    for key, i in pos.items():
        H[i] = views[key[0]].feature_row(key[1])
    for l in range(1, L):
        mat = _aggregation_matrix(keys[l], samples[l], pos)
        w = params.weights[l - 1]
        Z = (mat @ H) @ w[:-1] + w[-1]
        H = np.maximum(Z, 0.0) if params.activation == "relu" else Z
        pos = {key: i for i, key in enumerate(keys[l])}
    return H[[pos[key] for key in keyed]]


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_batch(params, pairs, fanout=None, rng=None):
    H, _ = forward_batch(params, pairs, fanout, rng)
    return softmax(H)


def predict(params, view, node, fanout=None, rng=None):
    return predict_batch(params, [(view, node)], fanout, rng)[0]


def _batch_loss(params, batch, fanout, rng, with_grad, plan=None):
    pairs = [(view, node) for view, node, _lab in batch]
    labels = np.array([lab for _v, _n, lab in batch], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= params.out_dim:
        raise ModelError("label outside the classifier range")
    H, trace = forward_batch(params, pairs, fanout, rng, plan=plan)

    shifted = H - H.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - lse[:, None]
    loss = float(-logp[np.arange(len(batch)), labels].mean())
    if not with_grad:
        return loss, None

    L = params.layer_count
    probs = np.exp(logp)
    top_rows = len(trace.keys[L])
    dZ = np.zeros((top_rows, params.out_dim), dtype=np.float64)
    scale = 1.0 / len(batch)
    for j, row in enumerate(trace.row_of):
        g = probs[j].copy()
        g[labels[j]] -= 1.0
        dZ[row] += g * scale

    grads = zero_grads(params)
    for l in range(L, 0, -1):
        grads[l - 1][:-1] += trace.means[l].T @ dZ
        grads[l - 1][-1] += dZ.sum(axis=0)
        if l > 1:
            dH = trace.mats[l].T @ (dZ @ params.weights[l - 1][:-1].T)
            if params.activation == "relu":
                dZ = dH * (trace.preacts[l - 1] > 0.0)
            else:
                dZ = dH
    return loss, grads


def loss_and_grad(params, batch, fanout=None, rng=None, plan=None):
    """Mean cross entropy over (view, node, label) triples plus its gradient.

    The gradient is exact for the sampled computation graph the forward pass
    actually used. A BatchPlan prepared for the batch reuses its sampling.
    """
    return _batch_loss(params, batch, fanout, rng, with_grad=True, plan=plan)


def loss_only(params, batch, fanout=None, rng=None, plan=None):
    return _batch_loss(params, batch, fanout, rng, with_grad=False,
                       plan=plan)[0]


def sgd_step(params, grads, lr):
    """One plain gradient step. Rejects non-finite gradients outright."""
    if lr <= 0:
        raise ModelError("learning rate must be positive")
    out = []
    for w, g in zip(params.weights, grads):
        if not np.isfinite(g).all():
            raise ModelError("non-finite gradient entry")
        out.append(w - lr * g)
    return GnnParams(out, params.activation)


def grad_check(params, batch, eps=1e-5, fanout=None, seed=0, grads=None):
    """Max relative error between analytic and central-difference gradients.

    Every loss evaluation reruns the pipeline with a generator built from the
    same seed, so sampled neighborhoods match between the analytic pass and
    both sides of each finite difference.
    """
    def fresh_rng():
        return np.random.default_rng(seed) if fanout is not None else None

    if grads is None:
        _, grads = loss_and_grad(params, batch, fanout, fresh_rng())

    worst = 0.0
    for li, w in enumerate(params.weights):
        it = np.nditer(w, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = w[idx]
            w[idx] = orig + eps
            hi = loss_only(params, batch, fanout, fresh_rng())
            w[idx] = orig - eps
            lo = loss_only(params, batch, fanout, fresh_rng())
            w[idx] = orig
            fd = (hi - lo) / (2.0 * eps)
            a = grads[li][idx]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            if rel > worst:
                worst = rel
            it.iternext()
    return worst


CHECKPOINT_VERSION = 1


def save_params(params, path):
    """Lossless weight dump (.npz with a format version marker)."""
    payload = {
        "format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "activation": np.array(params.activation),
        "layer_count": np.array(params.layer_count, dtype=np.int64),
    }
    for i, w in enumerate(params.weights):
        payload["w%d" % i] = w
    np.savez(path, **payload)


def load_params(path):
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ModelError("unsupported checkpoint version %d" % version)
        count = int(data["layer_count"])
        weights = [data["w%d" % i] for i in range(count)]
        activation = str(data["activation"])
    return GnnParams(weights, activation)
