"""CP-KAN neurons, layers and networks.

A neuron projects its input to a scalar, squashes it into [-1, 1] and
evaluates a truncated Chebyshev series there::

    f(x) = sum_k c_k T_k(squash(w . x + b))

A layer holds ``n_out`` such neurons as stacked arrays (weights, biases,
degrees, zero-padded coefficients) plus an optional square mixing matrix.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .chebyshev import basis, basis_deriv
from .errors import InvalidInputError

FORMAT_VERSION = 1
SQUASH_MODES = ("tanh", "clamp", "none")


def squash(z, mode="tanh"):
    if mode == "tanh":
        return np.tanh(z)
    if mode == "clamp":
        return np.clip(z, -1.0, 1.0)
    if mode == "none":
        return np.asarray(z, dtype=float)
    raise InvalidInputError(f"unknown squash mode {mode!r}")


def squash_deriv(z, mode="tanh"):
    if mode == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if mode == "clamp":
        return ((z > -1.0) & (z < 1.0)).astype(float)
    if mode == "none":
        return np.ones_like(z, dtype=float)
    raise InvalidInputError(f"unknown squash mode {mode!r}")


@dataclass
class KanNeuron:
    w: np.ndarray
    b: float
    d: int
    c: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float).ravel()
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = float(self.b)
        self.d = int(self.d)
        if self.d < 0 or self.c.size != self.d + 1:
            raise InvalidInputError(f"need len(c) == d + 1, got d={self.d}, len(c)={self.c.size}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.c)) and math.isfinite(self.b)):
            raise InvalidInputError("neuron parameters must be finite")


def _check_input(neuron, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != neuron.w.shape:
        raise InvalidInputError(f"input width {x.shape[-1:]} != neuron width {neuron.w.size}")
    return x


def project(neuron, x, squash_mode="tanh"):
    """Squashed projection ``squash(w . x + b)``; works row-wise on a batch."""
    x = _check_input(neuron, x)
    out = squash(x @ neuron.w + neuron.b, squash_mode)
    return float(out) if out.ndim == 0 else out


def neuron_forward(neuron, x, squash_mode="tanh"):
    alpha = project(neuron, x, squash_mode)
    out = basis(alpha, neuron.d) @ neuron.c
    return float(out) if np.ndim(out) == 0 else out


def cumulative_transform(neuron, X, d, squash_mode="tanh"):
    """Design matrix with rows ``[T_0(a_b), ..., T_d(a_b)]`` for each sample.

    Only the neuron's projection is used; its stored degree and
    coefficients are ignored.
    """
    X = np.atleast_2d(_check_input(neuron, X))
    return basis(squash(X @ neuron.w + neuron.b, squash_mode), d)


class KanLayer:
    """``n_in -> n_out`` layer of parallel neurons.

    Parameters live in arrays so that batched forward and backward passes
    are plain numpy: ``weight`` (n_out, n_in), ``bias`` (n_out,),
    ``degrees`` (n_out,) and ``coeffs`` (n_out, max_degree + 1) where
    entries past a neuron's own degree are held at zero.
    """

    def __init__(self, weight, bias, degrees, coeffs, mix=None):
        self.weight = np.array(weight, dtype=float, ndmin=2)
        n_out = self.weight.shape[0]
        self.bias = np.array(bias, dtype=float).reshape(n_out)
        self.degrees = np.array(degrees, dtype=int).reshape(n_out)
        coeffs = np.array(coeffs, dtype=float, ndmin=2)
        width = int(self.degrees.max()) + 1
        if coeffs.shape[0] != n_out or coeffs.shape[1] < width:
            raise InvalidInputError(f"coefficient array {coeffs.shape} too small for degrees {self.degrees}")
        self.coeffs = coeffs[:, :width].copy()
        self.coeffs[self.coeff_mask() == 0] = 0.0
        self.mix = None if mix is None else np.array(mix, dtype=float)
        if self.mix is not None and self.mix.shape != (n_out, n_out):
            raise InvalidInputError(f"mix must be {n_out}x{n_out}, got {self.mix.shape}")
        for arr in (self.weight, self.bias, self.coeffs) + (() if self.mix is None else (self.mix,)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError("layer parameters must be finite")

    @classmethod
    def from_neurons(cls, neurons, mix=None):
        if not neurons:
            raise InvalidInputError("a layer needs at least one neuron")
        n_in = {n.w.size for n in neurons}
        if len(n_in) != 1:
            raise InvalidInputError(f"neurons disagree on input width: {sorted(n_in)}")
        width = max(n.d for n in neurons) + 1
        coeffs = np.zeros((len(neurons), width))
        for i, n in enumerate(neurons):
            coeffs[i, : n.d + 1] = n.c
        return cls([n.w for n in neurons], [n.b for n in neurons], [n.d for n in neurons], coeffs, mix)

    @classmethod
    def init(cls, n_in, n_out, rng, degree=1, mix=False):
        """Random layer: ``w ~ U(-1/sqrt(n_in), 1/sqrt(n_in))``, ``b = 0``, ``c = e_0``."""
        bound = 1.0 / math.sqrt(n_in)
        weight = rng.uniform(-bound, bound, size=(n_out, n_in))
        coeffs = np.zeros((n_out, degree + 1))
        coeffs[:, 0] = 1.0
        return cls(weight, np.zeros(n_out), np.full(n_out, degree), coeffs,
                   np.eye(n_out) if mix else None)

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    @property
    def neurons(self):
        return [self.neuron(i) for i in range(self.n_out)]

    def neuron(self, i):
        d = int(self.degrees[i])
        return KanNeuron(self.weight[i].copy(), self.bias[i], d, self.coeffs[i, : d + 1].copy())

    def coeff_mask(self):
        k = np.arange(self.coeffs.shape[1])
        return (k[None, :] <= self.degrees[:, None]).astype(float)

    def set_degrees(self, degrees, coeffs):
        """Install new degrees with their coefficient vectors (ragged list)."""
        degrees = np.asarray(degrees, dtype=int).reshape(self.n_out)
        padded = np.zeros((self.n_out, int(degrees.max()) + 1))
        for i, (d, c) in enumerate(zip(degrees, coeffs)):
            c = np.asarray(c, dtype=float)
            if c.size != d + 1:
                raise InvalidInputError(f"neuron {i}: degree {d} needs {d + 1} coefficients, got {c.size}")
            padded[i, : d + 1] = c
        self.degrees = degrees
        self.coeffs = padded

    def forward(self, X, squash_mode="tanh", cache=False):
        """Batched forward pass; ``X`` is (B, n_in)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_in:
            raise InvalidInputError(f"layer expects (B, {self.n_in}) input, got {X.shape}")
        z = X @ self.weight.T + self.bias
        alpha = squash(z, squash_mode)
        tk = basis(alpha, self.coeffs.shape[1] - 1)          # (B, n_out, K)
        f = np.einsum("bik,ik->bi", tk, self.coeffs)
        out = f if self.mix is None else f @ self.mix.T
        if cache:
            return out, {"x": X, "z": z, "alpha": alpha, "tk": tk, "f": f}
        return out

    def n_params(self, trainable_coefficients=True):
        n = self.weight.size + self.bias.size
        if trainable_coefficients:
            n += int(np.sum(self.degrees + 1))
        if self.mix is not None:
            n += self.mix.size
        return n

    def copy(self):
        return KanLayer(self.weight, self.bias, self.degrees, self.coeffs,
                        None if self.mix is None else self.mix)


@dataclass
class KanNetwork:
    layers: list
    squash_mode: str = "tanh"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("a network needs at least one layer")
        if self.squash_mode not in SQUASH_MODES:
            raise InvalidInputError(f"unknown squash mode {self.squash_mode!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n_out != nxt.n_in:
                raise InvalidInputError(f"layer widths do not chain: {prev.n_out} -> {nxt.n_in}")

    @classmethod
    def init(cls, shape, seed=0, degree=1, squash_mode="tanh", mix=False):
        """Randomly initialised network with widths ``shape = [n_0, ..., n_L]``."""
        if len(shape) < 2 or min(shape) < 1:
            raise InvalidInputError(f"invalid network shape {shape}")
        rng = np.random.default_rng(seed)
        layers = [KanLayer.init(a, b, rng, degree=degree, mix=mix)
                  for a, b in zip(shape[:-1], shape[1:])]
        return cls(layers, squash_mode)

    @property
    def shape(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def forward(self, X, upto=None):
        """Outputs for a batch ``X`` (B, n_0); ``upto`` stops after that many layers."""
        h = np.asarray(X, dtype=float)
        for layer in self.layers[:upto]:
            h = layer.forward(h, self.squash_mode)
        return h

    def n_params(self, trainable_coefficients=True):
        return sum(layer.n_params(trainable_coefficients) for layer in self.layers)

    def copy(self):
        return KanNetwork([layer.copy() for layer in self.layers], self.squash_mode, dict(self.meta))

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        layers = []
        for layer in self.layers:
            entry = {"neurons": [{"w": n.w.tolist(), "b": n.b, "d": n.d, "c": n.c.tolist()}
                                 for n in layer.neurons]}
            if layer.mix is not None:
                entry["mix"] = layer.mix.tolist()
            layers.append(entry)
        doc = {"format_version": FORMAT_VERSION, "shape": self.shape,
               "squash_mode": self.squash_mode, "layers": layers}
        if self.meta:
            doc["meta"] = self.meta
        return doc

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != FORMAT_VERSION:
            raise InvalidInputError(f"unsupported model format_version {doc.get('format_version')!r}")
        layers = [KanLayer.from_neurons([KanNeuron(**n) for n in entry["neurons"]], entry.get("mix"))
                  for entry in doc["layers"]]
        net = cls(layers, doc["squash_mode"], doc.get("meta", {}))
        if net.shape != list(doc["shape"]):
            raise InvalidInputError(f"declared shape {doc['shape']} != layer widths {net.shape}")
        return net

    def dumps(self):
        # json writes floats with repr(), the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def layer_forward(layer, x, squash_mode="tanh"):
    """Layer output for one sample (1-D) or a batch (2-D)."""
    x = np.asarray(x, dtype=float)
    out = layer.forward(np.atleast_2d(x), squash_mode)
    return out[0] if x.ndim == 1 else out


def network_forward(net, x):
    """Network output for one sample (1-D) or a batch (2-D)."""
    x = np.asarray(x, dtype=float)
    out = net.forward(np.atleast_2d(x))
    return out[0] if x.ndim == 1 else out


def layer_backward(layer, cache, grad_out, squash_mode="tanh"):
    """Backpropagate ``dL/d(output)`` through one layer.

    Returns ``(grads, grad_in)`` where ``grads`` maps parameter names to
    arrays shaped like the parameters and ``grad_in`` is ``dL/d(input)``.
    """
    grads = {}
    if layer.mix is not None:
        grads["mix"] = grad_out.T @ cache["f"]
        grad_f = grad_out @ layer.mix
    else:
        grad_f = grad_out
    grads["coeffs"] = np.einsum("bi,bik->ik", grad_f, cache["tk"]) * layer.coeff_mask()
    dtk = basis_deriv(cache["alpha"], layer.coeffs.shape[1] - 1)
    df_dalpha = np.einsum("bik,ik->bi", dtk, layer.coeffs)
    grad_z = grad_f * df_dalpha * squash_deriv(cache["z"], squash_mode)
    grads["weight"] = grad_z.T @ cache["x"]
    grads["bias"] = grad_z.sum(axis=0)
    return grads, grad_z @ layer.weight
