"""Small dense-network engine: forward/backward passes, losses, Adam and
finite-difference gradient checks.

Everything works on float64 numpy arrays. Inputs may be a single vector or
a batch of row vectors; losses average over every element so gradients
come back already scaled by the batch size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

NET_MAGIC = b"NNET"
ACTIVATIONS = ("linear", "relu", "sigmoid")
BCE_EPS = 1e-7


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    layers: tuple  # ((out_dim, activation), ...)
    seed: int = 0

    def __post_init__(self):
        layers = tuple((int(o), str(a)) for o, a in self.layers)
        if self.input_dim < 1:
            raise ValueError("input dimension must be >= 1")
        if not layers:
            raise ValueError("network needs at least one layer")
        for out, act in layers:
            if out < 1:
                raise ValueError("layer dimensions must be >= 1")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        object.__setattr__(self, "layers", layers)

    @property
    def dims(self):
        return (self.input_dim,) + tuple(o for o, _ in self.layers)


@dataclass
class Network:
    spec: NetworkSpec
    weights: list = field(default_factory=list)  # (out, in) per layer
    biases: list = field(default_factory=list)

    @property
    def activations(self):
        return [a for _, a in self.spec.layers]

    @property
    def input_dim(self):
        return self.spec.input_dim

    @property
    def output_dim(self):
        return self.spec.layers[-1][0]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self):
        return sum(p.size for p in self.params())

    def copy(self):
        return Network(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_network(spec):
    """Fan-in scaled uniform weights (He for relu layers), zero biases."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    fan_in = spec.input_dim
    for out, act in spec.layers:
        gain = 2.0 if act == "relu" else 1.0
        limit = np.sqrt(3.0 * gain / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(out, fan_in)))
        biases.append(np.zeros(out))
        fan_in = out
    return Network(spec, weights, biases)


def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        # numerically stable logistic
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def forward(net, x):
    """Return ``[x, a_1, ..., a_L]``, the input and every layer's output."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {net.input_dim}")
    acts = [x]
    a = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        a = _activate(a @ w.T + b, act)
        acts.append(a)
    return acts


def predict(net, x):
    return forward(net, x)[-1]


def backward(net, acts, grad_out, hidden_grads=None):
    """Reverse-mode gradients of a scalar loss.

    ``grad_out`` is dL/d(output). ``hidden_grads`` optionally maps an
    activation index (1..L-1, as in ``acts``) to an extra gradient arriving
    at that layer from another consumer, e.g. an attribute head reading a
    hidden layer. Returns ``(grads, grad_input)`` where ``grads`` is a list
    of ``(dW, db)`` per layer.
    """
    if len(acts) != len(net.weights) + 1:
        raise ValueError("activations do not match the network depth")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != acts[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {acts[-1].shape}")
    hidden_grads = hidden_grads or {}
    grads = [None] * len(net.weights)
    for layer in range(len(net.weights) - 1, -1, -1):
        a = acts[layer + 1]
        act = net.activations[layer]
        if act == "relu":
            dz = g * (a > 0)
        elif act == "sigmoid":
            dz = g * a * (1.0 - a)
        else:
            dz = g
        prev = acts[layer]
        if dz.ndim == 1:
            dw = np.outer(dz, prev)
            db = dz.copy()
        else:
            dw = dz.T @ prev
            db = dz.sum(axis=0)
        grads[layer] = (dw, db)
        g = dz @ net.weights[layer]
        if layer in hidden_grads:
            g = g + hidden_grads[layer]
    return grads, g


def flat_grads(grads):
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred, target):
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target):
    pred, target = _pair(pred, target)
    return 2.0 * (pred - target) / pred.size


def bce_loss(pred, target):
    """Mean binary cross-entropy with predictions clamped to [eps, 1-eps]."""
    pred, target = _pair(pred, target)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))))


def bce_grad(pred, target):
    pred, target = _pair(pred, target)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    live = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    return np.where(live, (p - target) / (p * (1.0 - p)), 0.0) / pred.size


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def cosine_similarity(x, y):
    x, y = _pair(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("cosine similarity of a zero-norm vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def cosine_embedding_loss(sim, label, margin=0.0):
    if label not in (1, -1):
        raise ValueError(f"label must be +1 or -1, got {label!r}")
    if label == 1:
        return 1.0 - sim
    return max(0.0, sim - margin)


def cosine_embedding_batch(x, y, labels, margin=0.0):
    """Mean cosine-embedding loss over rows, with gradients for both sides.

    Returns ``(loss, grad_x, grad_y, sims)``.
    """
    x, y = _pair(x, y)
    labels = np.asarray(labels)
    if not np.all((labels == 1) | (labels == -1)):
        raise ValueError("labels must be +1 or -1")
    nx = np.linalg.norm(x, axis=1, keepdims=True)
    ny = np.linalg.norm(y, axis=1, keepdims=True)
    if np.any(nx == 0) or np.any(ny == 0):
        raise ValueError("cosine similarity of a zero-norm vector")
    xu, yu = x / nx, y / ny
    sims = np.sum(xu * yu, axis=1)
    pos = labels == 1
    active = ~pos & (sims > margin)
    losses = np.where(pos, 1.0 - sims, np.where(active, sims - margin, 0.0))
    # dL/dsim: -1 for positives, +1 for active negatives
    dsim = np.where(pos, -1.0, np.where(active, 1.0, 0.0))[:, None] / len(sims)
    gx = dsim * (yu - sims[:, None] * xu) / nx
    gy = dsim * (xu - sims[:, None] * yu) / ny
    return float(losses.mean()), gx, gy, sims


LOSSES = {
    "mse": (mse_loss, mse_grad),
    "bce": (bce_loss, bce_grad),
}


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied in place.

    ``params`` is a Network or a list of arrays; ``grads`` matches it (a
    list of ``(dW, db)`` pairs for a Network, or a flat list of arrays).
    """
    arrays = params.params() if isinstance(params, Network) else list(params)
    g = flat_grads(grads) if grads and isinstance(grads[0], tuple) else list(grads)
    if len(g) != len(arrays) or any(p.shape != q.shape for p, q in zip(arrays, g)):
        raise ValueError("gradients are not shaped like the parameters")
    if not state.m:
        state.m = [np.zeros_like(p) for p in arrays]
        state.v = [np.zeros_like(p) for p in arrays]
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, gi, m, v in zip(arrays, g, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * gi
        v *= state.beta2
        v += (1.0 - state.beta2) * gi * gi
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# gradient verification


def check_gradients(params, loss_fn, analytic, h=1e-5, max_params=10_000, seed=0):
    """Largest relative gap between ``analytic`` gradients and central
    differences of ``loss_fn()`` with respect to the arrays in ``params``.

    Above ``max_params`` entries a seeded subsample of that size is checked.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-6 * max|a|)`` so entries
    that are zero up to rounding do not dominate.
    """
    sizes = [p.size for p in params]
    total = sum(sizes)
    if total > max_params:
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(total, size=max_params, replace=False))
    else:
        picks = np.arange(total)
    offsets = np.cumsum([0] + sizes)
    scale = max(max((np.abs(a).max() for a in analytic if a.size), default=0.0), 1e-12)
    worst = 0.0
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        p = params[which].reshape(-1)
        i = flat - offsets[which]
        old = p[i]
        p[i] = old + h
        up = loss_fn()
        p[i] = old - h
        down = loss_fn()
        p[i] = old
        num = (up - down) / (2.0 * h)
        ana = analytic[which].reshape(-1)[i]
        denom = max(abs(ana), abs(num), 1e-6 * scale)
        worst = max(worst, abs(ana - num) / denom)
    return worst


def gradient_check(net, x, loss="mse", target=None, h=1e-5, max_params=10_000, seed=0):
    """Compare ``backward`` against central differences for one network and
    one of the named losses (``mse`` or ``bce``)."""
    loss_f, grad_f = LOSSES[loss]
    out = predict(net, x)
    if target is None:
        target = np.zeros_like(out)
    acts = forward(net, x)
    grads, _ = backward(net, acts, grad_f(acts[-1], target))
    return check_gradients(net.params(), lambda: loss_f(predict(net, x), target),
                           flat_grads(grads), h, max_params, seed)


# ---------------------------------------------------------------------------
# affine folding and persistence


def fold_input_affine(net, shift, scale):
    """Network computing ``net((x - shift) / scale)``."""
    out = net.copy()
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (net.input_dim,))
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (net.input_dim,))
    w = out.weights[0] / scale
    out.biases[0] = out.biases[0] - w @ shift
    out.weights[0] = w
    return out


def fold_output_affine(net, shift, scale):
    """Network computing ``net(x) * scale + shift``; last layer must be linear."""
    if net.activations[-1] != "linear":
        raise ValueError("can only fold an affine map into a linear output layer")
    out = net.copy()
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (net.output_dim,))
    out.weights[-1] = out.weights[-1] * scale[:, None]
    out.biases[-1] = out.biases[-1] * scale + shift
    return out


def write_network(net, fh):
    fh.write(NET_MAGIC)
    fh.write(struct.pack("<I", len(net.weights)))
    for w, b, act in zip(net.weights, net.biases, net.activations):
        fh.write(struct.pack("<IIB", w.shape[1], w.shape[0], ACTIVATIONS.index(act)))
        fh.write(w.astype("<f8").tobytes())
        fh.write(b.astype("<f8").tobytes())


def read_network(fh):
    if fh.read(4) != NET_MAGIC:
        raise ValueError("not a network weights block")
    (count,) = struct.unpack("<I", fh.read(4))
    weights, biases, layers = [], [], []
    input_dim = None
    for _ in range(count):
        n_in, n_out, code = struct.unpack("<IIB", fh.read(9))
        if input_dim is None:
            input_dim = n_in
        w = np.frombuffer(fh.read(8 * n_in * n_out), dtype="<f8").reshape(n_out, n_in).copy()
        b = np.frombuffer(fh.read(8 * n_out), dtype="<f8").copy()
        if b.size != n_out:
            raise ValueError("truncated network weights")
        weights.append(w)
        biases.append(b)
        layers.append((n_out, ACTIVATIONS[code]))
    return Network(NetworkSpec(input_dim, tuple(layers)), weights, biases)


def save_network(net, path):
    with open(path, "wb") as fh:
        write_network(net, fh)


def load_network(path):
    with open(path, "rb") as fh:
        return read_network(fh)
