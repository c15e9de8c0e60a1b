"""Small feedforward networks with hand-written backpropagation.

Supported layers are dense, 2D convolution (NCHW, square kernels), a
(leaky-)ReLU nonlinearity and flatten.  Every hidden nonlinearity exposes a
"unit response" matrix of shape (samples, units): for a convolutional feature
map this is the spatial mean of the post-nonlinearity map, for a dense layer
the activation itself.  These matrices feed the selectivity metrics and the
selectivity regularizer, whose gradient re-enters :func:`backward` through
``activation_grads``.

All arithmetic is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DENSE = "dense"
CONV2D = "conv2d"
NONLINEARITY = "nonlinearity"
FLATTEN = "flatten"
_KINDS = (DENSE, CONV2D, NONLINEARITY, FLATTEN)
TRAINABLE = (DENSE, CONV2D)


class ShapeError(ValueError):
    """Raised when a tensor does not fit the layer it is fed to."""

    def __init__(self, layer_index, kind, expected, got):
        self.layer_index = layer_index
        self.kind = kind
        super().__init__(
            f"layer {layer_index} ({kind}): expected input shape {tuple(expected)}, got {tuple(got)}"
        )


class TraceMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_shape: tuple
    out_shape: tuple
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.slope < 0:
            raise ValueError("nonlinearity slope must be >= 0")

    def to_dict(self):
        return {
            "kind": self.kind,
            "in_shape": list(self.in_shape),
            "out_shape": list(self.out_shape),
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
            "slope": self.slope,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            in_shape=tuple(d["in_shape"]),
            out_shape=tuple(d["out_shape"]),
            kernel=int(d["kernel"]),
            stride=int(d["stride"]),
            padding=int(d["padding"]),
            slope=float(d["slope"]),
        )


def dense(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec(DENSE, (n_in,), (n_out,))


def conv2d(in_shape, out_channels: int, kernel: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    c, h, w = in_shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kernel} does not fit input {tuple(in_shape)}")
    return LayerSpec(CONV2D, (c, h, w), (out_channels, ho, wo), kernel, stride, padding)


def nonlinearity(shape, slope: float = 0.0) -> LayerSpec:
    return LayerSpec(NONLINEARITY, tuple(shape), tuple(shape), slope=slope)


def flatten(shape) -> LayerSpec:
    return LayerSpec(FLATTEN, tuple(shape), (int(np.prod(shape)),))


@dataclass
class Network:
    layers: list
    params: list
    seed: int | None = None

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].out_shape != self.layers[i].in_shape:
                raise ShapeError(i, self.layers[i].kind, self.layers[i - 1].out_shape, self.layers[i].in_shape)
        if len(self.params) != len(self.layers):
            raise ValueError("one parameter dict per layer required")
        for i, (spec, p) in enumerate(zip(self.layers, self.params)):
            for name, shape in param_shapes(spec).items():
                if name not in p or p[name].shape != shape:
                    raise ValueError(f"layer {i}: parameter {name!r} must have shape {shape}")

    @property
    def input_shape(self):
        return self.layers[0].in_shape

    @property
    def response_layers(self):
        """Indices of hidden nonlinearity layers, i.e. the ones with unit responses."""
        return [i for i, l in enumerate(self.layers) if l.kind == NONLINEARITY]

    def copy(self) -> "Network":
        return Network(list(self.layers), [{k: v.copy() for k, v in p.items()} for p in self.params], self.seed)


def param_shapes(spec: LayerSpec) -> dict:
    if spec.kind == DENSE:
        return {"W": (spec.in_shape[0], spec.out_shape[0]), "b": (spec.out_shape[0],)}
    if spec.kind == CONV2D:
        return {
            "W": (spec.out_shape[0], spec.in_shape[0], spec.kernel, spec.kernel),
            "b": (spec.out_shape[0],),
        }
    return {}


def init_params(layers, seed: int) -> list:
    """Fan-in scaled uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases zero."""
    rng = np.random.default_rng(seed)
    params = []
    for spec in layers:
        shapes = param_shapes(spec)
        if not shapes:
            params.append({})
            continue
        w_shape = shapes["W"]
        fan_in = spec.in_shape[0] if spec.kind == DENSE else int(np.prod(w_shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        params.append(
            {
                "W": rng.uniform(-bound, bound, size=w_shape),
                "b": np.zeros(shapes["b"]),
            }
        )
    return params


def build_network(input_shape, hidden, n_classes: int, slope: float = 0.0, seed: int = 0) -> Network:
    """Assemble a network from a compact hidden-layer description.

    ``hidden`` is a sequence of ``("conv", channels, kernel, stride, padding)``
    or ``("dense", width)`` tuples.  Each hidden layer gets a nonlinearity with
    the given slope; a flatten is inserted before the first dense layer after
    convolutions, and a dense output layer with ``n_classes`` logits closes
    the network.
    """
    shape = tuple(input_shape)
    layers = []
    for item in hidden:
        kind = item[0]
        if kind == "conv":
            if len(shape) != 3:
                raise ValueError("convolution after a flat layer is not supported")
            _, ch, k, s, p = item
            layer = conv2d(shape, ch, k, s, p)
        elif kind == "dense":
            if len(shape) != 1:
                layers.append(flatten(shape))
                shape = layers[-1].out_shape
            layer = dense(shape[0], item[1])
        else:
            raise ValueError(f"unknown hidden layer kind {kind!r}")
        layers.append(layer)
        shape = layer.out_shape
        layers.append(nonlinearity(shape, slope))
    if len(shape) != 1:
        layers.append(flatten(shape))
        shape = layers[-1].out_shape
    layers.append(dense(shape[0], n_classes))
    return Network(layers, init_params(layers, seed), seed)


def parse_architecture(text: str):
    """Parse ``"c8k3s2p1,c8,d16"`` into :func:`build_network` hidden specs.

    ``cN`` is a conv layer with N channels; optional ``k``/``s``/``p`` suffixes
    set kernel (default 3), stride (default 1) and padding (default 1).
    ``dN`` is a dense layer of width N.
    """
    hidden = []
    for tok in filter(None, (t.strip() for t in text.split(","))):
        head, rest = tok[0], tok[1:]
        if head == "d":
            hidden.append(("dense", int(rest)))
        elif head == "c":
            num = ""
            while rest and rest[0].isdigit():
                num, rest = num + rest[0], rest[1:]
            opts = {"k": 3, "s": 1, "p": 1}
            while rest:
                key, rest = rest[0], rest[1:]
                val = ""
                while rest and rest[0].isdigit():
                    val, rest = val + rest[0], rest[1:]
                if key not in opts or not val:
                    raise ValueError(f"bad conv token {tok!r}")
                opts[key] = int(val)
            hidden.append(("conv", int(num), opts["k"], opts["s"], opts["p"]))
        else:
            raise ValueError(f"bad architecture token {tok!r}")
    return hidden


# ---------------------------------------------------------------- layer math


def _conv_windows(x, spec):
    p = spec.padding
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (spec.kernel, spec.kernel), axis=(2, 3))
    s = spec.stride
    return win[:, :, ::s, ::s]  # (N, C, Ho, Wo, k, k)


def _conv_forward(x, W, b, spec):
    win = _conv_windows(x, spec)
    out = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    out = out + b
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_backward(x, W, dout, spec):
    win = _conv_windows(x, spec)
    dW = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, k, k)
    db = dout.sum(axis=(0, 2, 3))
    n, c, h, w = x.shape
    p, s, k = spec.padding, spec.stride, spec.kernel
    ho, wo = dout.shape[2], dout.shape[3]
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(dout, W[:, :, i, j], axes=([1], [0]))  # (N, Ho, Wo, C)
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += contrib.transpose(0, 3, 1, 2)
    dx = dxp[:, :, p : p + h, p : p + w] if p else dxp
    return dx, dW, db


def leaky_relu(z, slope):
    if slope == 0.0:
        return np.maximum(z, 0.0)
    return np.where(z > 0, z, slope * z)


def _unit_response(a):
    if a.ndim == 4:
        return a.mean(axis=(2, 3))
    return a


@dataclass
class ForwardTrace:
    """Everything :func:`backward` needs, plus the unit responses.

    ``inputs[i]`` is the tensor fed to layer i.  ``responses`` holds one
    (samples, units) matrix per hidden nonlinearity, aligned with
    ``response_layers``.
    """

    inputs: list
    logits: np.ndarray
    response_layers: list
    responses: list = field(default_factory=list)
    n_layers: int = 0

    @property
    def pre_activations(self):
        return [self.inputs[i] for i in self.response_layers]


def forward(network: Network, batch) -> ForwardTrace:
    x = np.asarray(batch, dtype=np.float64)
    first = network.layers[0]
    if x.shape[1:] != first.in_shape:
        raise ShapeError(0, first.kind, ("N",) + tuple(first.in_shape), x.shape)
    inputs = []
    responses = []
    rl = []
    for i, (spec, p) in enumerate(zip(network.layers, network.params)):
        if x.shape[1:] != spec.in_shape:
            raise ShapeError(i, spec.kind, ("N",) + tuple(spec.in_shape), x.shape)
        inputs.append(x)
        if spec.kind == DENSE:
            x = x @ p["W"] + p["b"]
        elif spec.kind == CONV2D:
            x = _conv_forward(x, p["W"], p["b"], spec)
        elif spec.kind == NONLINEARITY:
            x = leaky_relu(x, spec.slope)
            rl.append(i)
            responses.append(_unit_response(x))
        else:
            x = x.reshape(x.shape[0], -1)
    return ForwardTrace(inputs, x, rl, responses, len(network.layers))


def backward(network: Network, trace: ForwardTrace, loss_grad_at_logits, activation_grads=None) -> list:
    """Return per-layer parameter gradients (list of dicts, aligned with layers).

    ``activation_grads`` is an optional sequence aligned with
    ``trace.responses``; entries may be ``None``.  A gradient on a conv unit
    response is spread evenly over the H*W elements of its feature map.
    """
    if trace.n_layers != len(network.layers):
        raise TraceMismatchError("trace was produced by a different network")
    if activation_grads is not None and len(activation_grads) != len(trace.responses):
        raise TraceMismatchError("activation_grads must align with trace.responses")
    extra = {}
    if activation_grads is not None:
        extra = {li: g for li, g in zip(trace.response_layers, activation_grads) if g is not None}

    grads = [dict() for _ in network.layers]
    d = np.asarray(loss_grad_at_logits, dtype=np.float64)
    if d.shape != trace.logits.shape:
        raise TraceMismatchError(f"logit gradient shape {d.shape} != logits {trace.logits.shape}")
    for i in range(len(network.layers) - 1, -1, -1):
        spec, p, x = network.layers[i], network.params[i], trace.inputs[i]
        if spec.kind == DENSE:
            grads[i] = {"W": x.T @ d, "b": d.sum(axis=0)}
            d = d @ p["W"].T
        elif spec.kind == CONV2D:
            d, dW, db = _conv_backward(x, p["W"], d, spec)
            grads[i] = {"W": dW, "b": db}
        elif spec.kind == NONLINEARITY:
            if i in extra:
                g = np.asarray(extra[i], dtype=np.float64)
                if d.ndim == 4:
                    hw = d.shape[2] * d.shape[3]
                    d = d + (g / hw)[:, :, None, None]
                else:
                    d = d + g
            # subgradient at exactly 0 is taken as the negative-side slope
            d = d * np.where(x > 0, 1.0, spec.slope)
        else:
            d = d.reshape(x.shape)
    return grads


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    buffers: list | None = None


def sgd_step(state: OptimizerState, params: list, grads: list):
    """SGD with momentum and L2 weight decay, applied in place.

    g' = g + wd * p;  v = m * v + g';  p = p - lr * v
    """
    if state.buffers is None:
        state.buffers = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    for p, g, buf in zip(params, grads, state.buffers):
        for k in p:
            eff = g[k] + state.weight_decay * p[k] if state.weight_decay else g[k]
            buf[k] *= state.momentum
            buf[k] += eff
            p[k] -= state.lr * buf[k]
    return params, state


# ---------------------------------------------------------------- gradient check


def grad_check(network: Network, batch, loss_fn, h: float = 1e-5, floor: float = 1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(network, batch)`` returns ``(loss, grads)`` with ``grads`` shaped
    like ``network.params``.  Every parameter element is perturbed.
    """
    _, analytic = loss_fn(network, batch)
    worst = 0.0
    for li, p in enumerate(network.params):
        for name, arr in p.items():
            flat = arr.reshape(-1)
            ana = analytic[li][name].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                fp, _ = loss_fn(network, batch)
                flat[j] = orig - h
                fm, _ = loss_fn(network, batch)
                flat[j] = orig
                num = (fp - fm) / (2 * h)
                err = abs(ana[j] - num) / max(abs(ana[j]), abs(num), floor)
                worst = max(worst, err)
    return worst


def min_preactivation_margin(network: Network, batch) -> float:
    trace = forward(network, batch)
    margins = [np.min(np.abs(z)) for z in trace.pre_activations]
    return float(min(margins)) if margins else np.inf


def avoid_kinks(network: Network, batch, margin: float = 1e-7, rng=None, scale: float = 1e-3, max_tries: int = 100):
    """Jitter ``batch`` until no hidden pre-activation lies within ``margin`` of 0."""
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.array(batch, dtype=np.float64)
    for _ in range(max_tries):
        if min_preactivation_margin(network, x) > margin:
            return x
        x = x + scale * rng.standard_normal(x.shape)
    raise RuntimeError("could not move batch away from nonlinearity kinks")


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = "CLASSSEL-NET"
CHECKPOINT_VERSION = 1


def save_network(network: Network, path) -> None:
    """Write a checkpoint.

    Layout: line 1 ``CLASSSEL-NET 1``; line 2 a single-line JSON object with
    ``seed``, ``layers`` (list of layer dicts) and ``tensors`` (ordered list of
    ``[layer_index, name, shape]``); then every tensor in that order as
    row-major little-endian float64.
    """
    tensors = []
    blobs = []
    for i, p in enumerate(network.params):
        for name in sorted(p):
            arr = np.ascontiguousarray(p[name], dtype="<f8")
            tensors.append([i, name, list(arr.shape)])
            blobs.append(arr.tobytes())
    meta = {"seed": network.seed, "layers": [l.to_dict() for l in network.layers], "tensors": tensors}
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n".encode())
        fh.write((json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n").encode())
        for blob in blobs:
            fh.write(blob)


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        if len(header) != 2 or header[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        if int(header[1]) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header[1]}")
        meta = json.loads(fh.readline().decode())
        layers = [LayerSpec.from_dict(d) for d in meta["layers"]]
        params = [dict() for _ in layers]
        for i, name, shape in meta["tensors"]:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated tensor data")
            params[i][name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return Network(layers, params, meta["seed"])
