"""Implicit, feedforward and weight-tied networks plus model-file I/O.

Model files are UTF-8 JSON.  Every kind carries ``kind``, ``activation``
and matrices as lists of row lists::

    {"kind": "inn", "activation": "relu", "n": 3, "r": 2, "q": 2,
     "W": [[...], ...], "U": [[...], ...], "b": [...],
     "C": [[...], ...], "c": [...]}

    {"kind": "weight_tied", ...same fields as "inn"..., "depth": 50 | null}

    {"kind": "ffnn", "activation": "tanh", "widths": [r, n_1, ..., n_k],
     "q": 2, "layers": [{"W": [[...]], "b": [...]}, ...],
     "C": [[...]], "c": [...]}

``widths`` lists the input width followed by each hidden width; ``depth``
of ``null`` means the infinite-depth limit.  Floats are written with
Python's shortest round-trip repr, so save/load is lossless.
"""

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .exceptions import DimensionError, ModelFormatError


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        if self is Activation.RELU:
            return np.maximum(v, 0.0)
        return np.tanh(v)

    def derivative(self, v):
        """Slope of the activation; ReLU uses 0 at the kink."""
        v = np.asarray(v, dtype=np.float64)
        if self is Activation.RELU:
            return (v > 0).astype(np.float64)
        t = np.tanh(v)
        return 1.0 - t * t


def apply_activation(act, v):
    return Activation(act)(v)


def _matrix(value, name, shape=None):
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DimensionError(f"{name}: not a numeric matrix ({exc})") from None
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {arr.shape}")
    if shape is not None and arr.shape != shape:
        raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _vector(value, name, size=None):
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DimensionError(f"{name}: not a numeric vector ({exc})") from None
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise DimensionError(f"{name} has length {arr.shape[0]}, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _arrays_equal(a, b):
    return a.shape == b.shape and np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class ImplicitNetwork:
    """``z = act(W z + U x + b)``, ``y = C z + c``."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    C: np.ndarray
    c: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        W = _matrix(self.W, "W")
        n = W.shape[0]
        if W.shape != (n, n):
            raise DimensionError(f"W must be square, got shape {W.shape}")
        U = _matrix(self.U, "U")
        if U.shape[0] != n:
            raise DimensionError(f"U has {U.shape[0]} rows, expected {n}")
        C = _matrix(self.C, "C")
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns, expected {n}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "b", _vector(self.b, "b", n))
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "c", _vector(self.c, "c", C.shape[0]))
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def n(self):
        return self.W.shape[0]

    @property
    def r(self):
        return self.U.shape[1]

    @property
    def q(self):
        return self.C.shape[0]

    def replace(self, **changes):
        fields = dict(W=self.W, U=self.U, b=self.b, C=self.C, c=self.c,
                      activation=self.activation)
        fields.update(changes)
        return type(self)(**fields)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.activation == other.activation and all(
            _arrays_equal(getattr(self, f), getattr(other, f)) for f in "WUbCc"
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class WeightTiedNetwork:
    """``z^i = act(W z^{i-1} + U x + b)`` repeated ``depth`` times (``None``: infinitely)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    C: np.ndarray
    c: np.ndarray
    depth: int = None
    activation: Activation = Activation.RELU

    def __post_init__(self):
        base = ImplicitNetwork(self.W, self.U, self.b, self.C, self.c, self.activation)
        for f in "WUbCc":
            object.__setattr__(self, f, getattr(base, f))
        object.__setattr__(self, "activation", base.activation)
        if self.depth is not None:
            if int(self.depth) != self.depth or self.depth < 1:
                raise DimensionError(f"depth must be a positive integer or None, got {self.depth!r}")
            object.__setattr__(self, "depth", int(self.depth))

    n = ImplicitNetwork.n
    r = ImplicitNetwork.r
    q = ImplicitNetwork.q

    def as_implicit(self):
        return ImplicitNetwork(self.W, self.U, self.b, self.C, self.c, self.activation)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return (self.depth == other.depth and self.activation == other.activation
                and all(_arrays_equal(getattr(self, f), getattr(other, f)) for f in "WUbCc"))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FeedforwardNetwork:
    """Layers ``z^i = act(W_i z^{i-1} + b_i)`` followed by ``y = C z^k + c``."""

    layers: tuple
    C: np.ndarray
    c: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if len(self.layers) == 0:
            raise DimensionError("a feedforward network needs at least one layer")
        layers = []
        prev = None
        for i, (W, b) in enumerate(self.layers):
            W = _matrix(W, f"layers[{i}].W")
            if prev is not None and W.shape[1] != prev:
                raise DimensionError(
                    f"layers[{i}].W has {W.shape[1]} columns, previous layer width is {prev}"
                )
            layers.append((W, _vector(b, f"layers[{i}].b", W.shape[0])))
            prev = W.shape[0]
        C = _matrix(self.C, "C")
        if C.shape[1] != prev:
            raise DimensionError(f"C has {C.shape[1]} columns, last layer width is {prev}")
        object.__setattr__(self, "layers", tuple(layers))
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "c", _vector(self.c, "c", C.shape[0]))
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def widths(self):
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    @property
    def r(self):
        return self.layers[0][0].shape[1]

    @property
    def q(self):
        return self.C.shape[0]

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        if self.activation != other.activation or len(self.layers) != len(other.layers):
            return False
        for (Wa, ba), (Wb, bb) in zip(self.layers, other.layers):
            if not (_arrays_equal(Wa, Wb) and _arrays_equal(ba, bb)):
                return False
        return _arrays_equal(self.C, other.C) and _arrays_equal(self.c, other.c)

    __hash__ = None


def _check_input(x, r):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != r:
        raise DimensionError(f"input has dimension {x.shape[-1]}, network expects {r}")
    return x


def ffnn_forward(net, x):
    """Evaluate a feedforward network on one input or a batch of rows."""
    z = _check_input(x, net.r)
    for W, b in net.layers:
        z = net.activation(z @ W.T + b)
    return z @ net.C.T + net.c


def ffnn_to_inn(net):
    """Stack a feedforward network into an equivalent implicit network.

    The hidden state is ordered last layer first, ``z = [z_k, ..., z_1]``,
    so ``W`` is strictly block upper triangular with ``W_k, ..., W_2`` on
    the block superdiagonal and ``U`` holds ``W_1`` in its last block row.
    """
    widths = [W.shape[0] for W, _ in net.layers]
    k = len(widths)
    # offsets[i] is the first row of layer i+1 (0-based layer index i)
    sizes = widths[::-1]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    offset = {k - 1 - j: int(starts[j]) for j in range(k)}
    n = int(starts[-1])

    W = np.zeros((n, n))
    U = np.zeros((n, net.r))
    b = np.zeros(n)
    for i, (Wi, bi) in enumerate(net.layers):
        rows = slice(offset[i], offset[i] + widths[i])
        b[rows] = bi
        if i == 0:
            U[rows, :] = Wi
        else:
            cols = slice(offset[i - 1], offset[i - 1] + widths[i - 1])
            W[rows, cols] = Wi
    C = np.zeros((net.q, n))
    C[:, offset[k - 1]:offset[k - 1] + widths[-1]] = net.C
    return ImplicitNetwork(W, U, b, C, net.c, net.activation)


def weight_tied_forward(net, x, k=None, z0=None):
    """Run ``k`` weight-tied layers (default ``net.depth``) and apply the output map.

    The hidden state starts at ``x`` when hidden and input widths agree and
    at zero otherwise, unless ``z0`` is given.
    """
    if k is None:
        k = net.depth
    if k is None or k < 1:
        raise ValueError("weight_tied_forward needs a finite depth k >= 1")
    x = _check_input(x, net.r)
    inj = x @ net.U.T + net.b
    if z0 is not None:
        z = np.broadcast_to(np.asarray(z0, dtype=np.float64), inj.shape).copy()
    elif net.n == net.r:
        z = x.copy()
    else:
        z = np.zeros_like(inj)
    for _ in range(int(k)):
        z = net.activation(z @ net.W.T + inj)
    return z @ net.C.T + net.c


# --- serialization -----------------------------------------------------------

def _rows(A):
    return [[float(v) for v in row] for row in np.asarray(A)]


def _vec(v):
    return [float(t) for t in np.asarray(v)]


def model_to_dict(net):
    if isinstance(net, FeedforwardNetwork):
        return {
            "kind": "ffnn",
            "activation": net.activation.value,
            "widths": net.widths,
            "q": net.q,
            "layers": [{"W": _rows(W), "b": _vec(b)} for W, b in net.layers],
            "C": _rows(net.C),
            "c": _vec(net.c),
        }
    if isinstance(net, (ImplicitNetwork, WeightTiedNetwork)):
        d = {
            "kind": "inn" if isinstance(net, ImplicitNetwork) else "weight_tied",
            "activation": net.activation.value,
            "n": net.n, "r": net.r, "q": net.q,
            "W": _rows(net.W), "U": _rows(net.U), "b": _vec(net.b),
            "C": _rows(net.C), "c": _vec(net.c),
        }
        if isinstance(net, WeightTiedNetwork):
            d["depth"] = net.depth
        return d
    raise TypeError(f"not a network: {type(net).__name__}")


def _require(d, key):
    if not isinstance(d, dict):
        raise ModelFormatError(f"expected an object holding {key!r}")
    if key not in d:
        raise ModelFormatError(f"model file is missing field {key!r}")
    return d[key]


def _dim(d, key):
    v = _require(d, key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 0:
        raise ModelFormatError(f"field {key!r} must be a nonnegative integer")
    return v


def model_from_dict(d):
    if not isinstance(d, dict):
        raise ModelFormatError("model document must be a JSON object")
    kind = _require(d, "kind")
    try:
        act = Activation(_require(d, "activation"))
    except ValueError:
        raise ModelFormatError(f"unknown activation {d['activation']!r}") from None
    try:
        if kind in ("inn", "weight_tied"):
            n, r, q = _dim(d, "n"), _dim(d, "r"), _dim(d, "q")
            W = _matrix(_require(d, "W"), "W", (n, n))
            U = _matrix(_require(d, "U"), "U", (n, r))
            b = _vector(_require(d, "b"), "b", n)
            C = _matrix(_require(d, "C"), "C", (q, n))
            c = _vector(_require(d, "c"), "c", q)
            if kind == "inn":
                return ImplicitNetwork(W, U, b, C, c, act)
            depth = d.get("depth")
            return WeightTiedNetwork(W, U, b, C, c, depth, act)
        if kind == "ffnn":
            widths = _require(d, "widths")
            q = _dim(d, "q")
            layers_raw = _require(d, "layers")
            if not isinstance(widths, list) or len(widths) != len(layers_raw) + 1:
                raise ModelFormatError("'widths' must list the input width plus one entry per layer")
            layers = []
            for i, layer in enumerate(layers_raw):
                W = _matrix(_require(layer, "W"), f"layers[{i}].W", (widths[i + 1], widths[i]))
                b = _vector(_require(layer, "b"), f"layers[{i}].b", widths[i + 1])
                layers.append((W, b))
            C = _matrix(_require(d, "C"), "C", (q, widths[-1]))
            c = _vector(_require(d, "c"), "c", q)
            return FeedforwardNetwork(tuple(layers), C, c, act)
    except DimensionError as exc:
        raise ModelFormatError(f"dimension inconsistency: {exc}") from None
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(net, path):
    text = json.dumps(model_to_dict(net), allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed JSON in {path}: {exc}") from None
    return model_from_dict(d)
