"""Two-phase CP-KAN training.

Phase 1 walks the layers in order and picks a degree for every neuron
from a least-squares cost matrix (or assigns a fixed degree when the
layer's QUBO would be too large). Phase 2 fine-tunes projections,
coefficients and mixing matrices with Adam using hand-derived gradients.
"""

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import degree as ds
from .errors import InvalidInputError
from .lstsq import mse
from .network import layer_backward

LOSSES = ("mse", "weighted_mse", "cross_entropy")
PARAM_NAMES = ("weight", "bias", "coeffs", "mix")


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_degree: int = 5
    skip_threshold: int = 5000
    skip_default_degree: int = 3
    penalty_alpha: float | None = None
    loss: str = "mse"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    trainable_coefficients: bool = True
    solver: str = "qubo-sa"
    complexity_weight: float = 0.0
    ridge: float = 0.0
    early_stop_patience: int | None = None
    seed: int = 0
    phase1_max_rows: int | None = 10_000
    phase1_weighted: bool = False
    sa_sweeps: int = 200
    sa_restarts: int = 8
    greedy_threshold: float = 0.01
    evo_pop_size: int = 50
    evo_generations: int = 30
    evo_crossover_rate: float = 0.9
    evo_mutation_rate: float = 0.1
    evo_elitism: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise InvalidInputError("need epochs >= 0, batch_size >= 1 and learning_rate > 0")
        if not 0 <= self.skip_default_degree <= self.max_degree:
            raise InvalidInputError("skip_default_degree must lie in [0, max_degree]")
        if self.loss not in LOSSES:
            raise InvalidInputError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        if self.solver not in ds.SOLVERS:
            raise InvalidInputError(f"unknown solver {self.solver!r}; choose from {ds.SOLVERS}")
        if self.skip_threshold < 1:
            raise InvalidInputError("skip_threshold must be a positive integer")

    @classmethod
    def from_dict(cls, values):
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise InvalidInputError(f"unknown training options: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    phase1: list = field(default_factory=list)
    metric_name: str = "weighted_r2"
    stopped_early: bool = False

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
        for row in zip(self.epochs, self.train_loss, self.val_loss, self.val_metric):
            writer.writerow([row[0]] + ["" if v is None else repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def phase1_report(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "solver", "degrees", "repairs", "total_cost", "wall_ms"])
        for rec in self.phase1:
            writer.writerow([rec["layer"], rec["solver"], " ".join(map(str, rec["degrees"])),
                             rec["repairs"], repr(rec["total_cost"]), f"{rec['wall_ms']:.3f}"])
        return buf.getvalue()


# -- losses ----------------------------------------------------------------------

def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _class_indices(y, n_classes):
    y = np.asarray(y)
    if y.ndim == 2 and y.shape[1] == n_classes and y.shape[1] > 1:
        return np.argmax(y, axis=1)
    idx = y.ravel()
    if np.any(idx != np.round(idx)) or np.any(idx < 0) or np.any(idx >= n_classes):
        raise InvalidInputError(f"class indices must be integers in [0, {n_classes})")
    return idx.astype(int)


def _weight_vector(weights, n):
    if weights is None:
        return None
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != n or np.any(w < 0) or not w.sum() > 0:
        raise InvalidInputError("weights must be non-negative, one per sample, with positive sum")
    return w


def loss_eval(yhat, y, weights=None, kind="mse"):
    """Scalar batch loss. Regression losses average over every output entry."""
    yhat = np.atleast_2d(np.asarray(yhat, dtype=float).T).T
    if kind == "cross_entropy":
        idx = _class_indices(y, yhat.shape[1])
        return float(-np.mean(_log_softmax(yhat)[np.arange(idx.size), idx]))
    y = np.asarray(y, dtype=float).reshape(yhat.shape)
    if kind == "mse":
        return mse(y, yhat)
    if kind == "weighted_mse":
        w = _weight_vector(weights, yhat.shape[0])
        if w is None:
            return mse(y, yhat)
        return mse(y, yhat, np.repeat(w, yhat.shape[1]))
    raise InvalidInputError(f"unknown loss {kind!r}")


def _loss_grad(yhat, y, weights, kind):
    """dL/dyhat for :func:`loss_eval`."""
    b, k = yhat.shape
    if kind == "cross_entropy":
        idx = _class_indices(y, k)
        g = np.exp(_log_softmax(yhat))
        g[np.arange(b), idx] -= 1.0
        return g / b
    y = np.asarray(y, dtype=float).reshape(yhat.shape)
    w = _weight_vector(weights, b) if kind == "weighted_mse" else None
    if w is None:
        return 2.0 * (yhat - y) / yhat.size
    return 2.0 * w[:, None] * (yhat - y) / (k * w.sum())


# -- gradients ---------------------------------------------------------------------

def _as_targets(y, n_out, kind):
    if kind == "cross_entropy":
        return np.asarray(y)
    y = np.asarray(y, dtype=float)
    return y.reshape(-1, n_out) if y.ndim == 1 else y


def backward(net, X, Y, weights=None, loss="mse", trainable_coefficients=True):
    """Loss value and exact gradients for every layer parameter.

    Returns ``(loss_value, grads)`` with ``grads[l]`` a dict keyed like
    :data:`PARAM_NAMES` (``"mix"`` only when the layer has one).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InvalidInputError("backward needs a non-empty (B, n_in) batch")
    caches = []
    h = X
    for layer in net.layers:
        h, cache = layer.forward(h, net.squash_mode, cache=True)
        caches.append(cache)
    Y = _as_targets(Y, h.shape[1], loss)
    value = loss_eval(h, Y, weights, loss)
    g = _loss_grad(h, Y, weights, loss)
    grads = [None] * len(net.layers)
    for idx in range(len(net.layers) - 1, -1, -1):
        grads[idx], g = layer_backward(net.layers[idx], caches[idx], g, net.squash_mode)
        if not trainable_coefficients:
            grads[idx]["coeffs"] = np.zeros_like(grads[idx]["coeffs"])
    return value, grads


def parameters(net):
    """Flat list of the network's trainable arrays (views, updated in place)."""
    params = []
    for layer in net.layers:
        params += [layer.weight, layer.bias, layer.coeffs]
        if layer.mix is not None:
            params.append(layer.mix)
    return params


def flatten_grads(grads):
    out = []
    for g in grads:
        out += [g["weight"], g["bias"], g["coeffs"]]
        if "mix" in g:
            out.append(g["mix"])
    return out


# -- Adam ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params):
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidInputError("params, grads and optimizer state disagree in length")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# -- phase 1 -----------------------------------------------------------------------

def _phase1_targets(Y, n_out, loss):
    """Per-neuron targets for a layer of width ``n_out``.

    Classification labels become one-hot columns. A layer narrower or wider
    than the target reuses target columns cyclically, which for a scalar
    target means every hidden neuron is fitted to the final target.
    """
    Y = np.asarray(Y)
    if loss == "cross_entropy":
        if not (Y.ndim == 2 and Y.shape[1] > 1):
            idx = Y.ravel().astype(int)
            Y = np.eye(int(idx.max()) + 1)[idx]
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    return Y[:, np.arange(n_out) % Y.shape[1]]


def phase1_optimize_degrees(net, X, Y, cfg, weights=None):
    """Choose and install a degree for every neuron, layer by layer.

    A layer whose QUBO would have more than ``cfg.skip_threshold``
    variables (``n_out * (max_degree + 1)``) gets ``cfg.skip_default_degree``
    everywhere instead; its coefficients still come from a least-squares
    fit. Mixing matrices are reset to identity. Returns one record per
    layer.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("phase 1 needs a non-empty (B, n_in) dataset")
    if X.shape[1] != net.layers[0].n_in:
        raise InvalidInputError(f"data has {X.shape[1]} features, network expects {net.layers[0].n_in}")
    Y = np.asarray(Y)
    if Y.shape[0] != X.shape[0]:
        raise InvalidInputError("X and Y row counts differ")
    rng = np.random.default_rng([cfg.seed, 1])
    if cfg.phase1_max_rows and X.shape[0] > cfg.phase1_max_rows:
        rows = np.sort(rng.choice(X.shape[0], cfg.phase1_max_rows, replace=False))
        X, Y = X[rows], Y[rows]
        weights = None if weights is None else np.asarray(weights)[rows]
    if not cfg.phase1_weighted:
        weights = None

    records = []
    h = X
    D = cfg.max_degree
    for idx, layer in enumerate(net.layers):
        t0 = time.perf_counter()
        targets = _phase1_targets(Y, layer.n_out, cfg.loss)
        if layer.mix is not None:
            layer.mix = np.eye(layer.n_out)
        if layer.n_out * (D + 1) > cfg.skip_threshold:
            d = cfg.skip_default_degree
            cost = ds.build_cost_matrix(layer, h, targets, d, 0.0, cfg.ridge,
                                        net.squash_mode, cfg.threads, weights)
            degrees = np.full(layer.n_out, d)
            layer.set_degrees(degrees, [fits[d] for fits in cost.fitted_coeffs])
            rec = {"solver": "skipped", "repairs": 0, "total_cost": float("nan")}
        else:
            cost = ds.build_cost_matrix(layer, h, targets, D, cfg.complexity_weight, cfg.ridge,
                                        net.squash_mode, cfg.threads, weights)
            result = ds.solve(cost, cfg.solver, penalty_alpha=cfg.penalty_alpha,
                              schedule=(ds.default_schedule(cost, cfg.seed, cfg.sa_sweeps, cfg.sa_restarts)
                                        if cfg.solver == "qubo-sa" else None),
                              seed=cfg.seed, threads=cfg.threads,
                              greedy_threshold=cfg.greedy_threshold,
                              evo_params=dict(pop_size=cfg.evo_pop_size,
                                              generations=cfg.evo_generations,
                                              crossover_rate=cfg.evo_crossover_rate,
                                              mutation_rate=cfg.evo_mutation_rate,
                                              elitism=cfg.evo_elitism))
            degrees = result.degrees
            layer.set_degrees(degrees, [cost.fitted_coeffs[i][d] for i, d in enumerate(degrees)])
            rec = {"solver": cfg.solver, "repairs": result.details.get("repairs", 0),
                   "total_cost": result.total_cost}
        rec.update(layer=idx, degrees=[int(d) for d in degrees],
                   wall_ms=1e3 * (time.perf_counter() - t0))
        records.append(rec)
        h = layer.forward(h, net.squash_mode)
    return records


# -- phase 2 -----------------------------------------------------------------------

def evaluate(net, X, Y, weights=None, loss="mse"):
    """Loss and headline metric (weighted R^2 or accuracy) on a dataset."""
    from .data import weighted_r2

    yhat = net.forward(X)
    value = loss_eval(yhat, _as_targets(Y, yhat.shape[1], loss), weights, loss)
    if loss == "cross_entropy":
        idx = _class_indices(Y, yhat.shape[1])
        return value, float(np.mean(np.argmax(yhat, axis=1) == idx))
    w = np.ones(yhat.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    y = np.asarray(Y, dtype=float).reshape(yhat.shape)
    return value, weighted_r2(y.ravel(), yhat.ravel(), np.repeat(w, yhat.shape[1]))


def two_phase_train(net, train_data, val_data=None, cfg=None):
    """Phase 1 degree selection then ``cfg.epochs`` epochs of mini-batch Adam.

    ``train_data`` and ``val_data`` are ``(X, Y)`` or ``(X, Y, weights)``
    tuples. The network is modified in place and also returned with the
    history. With early stopping enabled, the parameters from the best
    validation epoch are restored at the end.
    """
    cfg = cfg or TrainConfig()
    X, Y, w = (tuple(train_data) + (None,))[:3]
    X = np.asarray(X, dtype=float)
    history = TrainHistory(metric_name="accuracy" if cfg.loss == "cross_entropy" else "weighted_r2")
    history.phase1 = phase1_optimize_degrees(net, X, Y, cfg, w)
    if val_data is not None:
        Xv, Yv, wv = (tuple(val_data) + (None,))[:3]

    params = parameters(net)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([cfg.seed, 2])
    n = X.shape[0]
    Y = np.asarray(Y)
    best_val, best_params, stale = np.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            _, grads = backward(net, X[rows], Y[rows], None if w is None else np.asarray(w)[rows],
                                cfg.loss, cfg.trainable_coefficients)
            adam_step(params, flatten_grads(grads), state, cfg.learning_rate,
                      cfg.beta1, cfg.beta2, cfg.eps)
        train_loss, _ = evaluate(net, X, Y, w, cfg.loss)
        val_loss = val_metric = None
        if val_data is not None:
            val_loss, val_metric = evaluate(net, Xv, Yv, wv, cfg.loss)
        history.epochs.append(epoch)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.val_metric.append(val_metric)
        if cfg.early_stop_patience is not None and val_loss is not None:
            if val_loss < best_val:
                best_val, stale = val_loss, 0
                best_params = [p.copy() for p in params]
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    history.stopped_early = True
                    break
    if best_params is not None:
        for p, best in zip(params, best_params):
            p[...] = best
    return net, history
