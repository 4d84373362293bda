"""Searching heads: maps applied to frozen query embeddings before scoring.

A head is Identity, a single Linear layer, or a small MLP (at most three
layers, tanh/relu hidden activations, linear output).  Forward passes for
inference go through the row-local kernels so ``apply`` on one vector and
``apply_batch`` on a matrix agree bit-for-bit.  ``gradients`` carries its
own matmul-based forward pass and a hand-written backward pass.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._io import atomic_write, read_bytes
from .errors import BadMagic, BadShape, DimMismatch, NonFinite, ShapeMismatch
from .loss import info_nce_with_grad
from .store import EmbeddingMatrix

IDENTITY, LINEAR, MLP = "identity", "linear", "mlp"
KINDS = (IDENTITY, LINEAR, MLP)
ACTIVATIONS = ("none", "tanh", "relu")
MAX_MLP_LAYERS = 3

MAGIC = b"SEPH"
FORMAT_VERSION = 1
_KIND_TAG = {IDENTITY: 0, LINEAR: 1, MLP: 2}
_ACT_TAG = {"none": 0, "tanh": 1, "relu": 2}


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray  # out x in
    bias: np.ndarray | None
    activation: str = "none"

    def __post_init__(self):
        w = _frozen(self.weight)
        if w.ndim != 2 or min(w.shape) == 0:
            raise BadShape(f"layer weight must be a non-empty matrix, got {w.shape}")
        object.__setattr__(self, "weight", w)
        if self.bias is not None:
            b = _frozen(self.bias)
            if b.shape != (w.shape[0],):
                raise BadShape(f"bias shape {b.shape} does not match {w.shape[0]} outputs")
            object.__setattr__(self, "bias", b)
        if self.activation not in ACTIVATIONS:
            raise BadShape(f"unknown activation {self.activation!r}")
        for p in self.params():
            if not np.isfinite(p).all():
                raise NonFinite("head parameters must be finite")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]


@dataclass(frozen=True, eq=False)
class SearchHead:
    kind: str
    layers: tuple = ()
    dim: int | None = None  # Identity only; None accepts any dimensionality

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.kind not in KINDS:
            raise BadShape(f"unknown head kind {self.kind!r}")
        if self.kind == IDENTITY:
            if self.layers:
                raise BadShape("identity head has no layers")
            return
        if not self.layers:
            raise BadShape(f"{self.kind} head needs at least one layer")
        if self.kind == LINEAR and (len(self.layers) != 1 or self.layers[0].activation != "none"):
            raise BadShape("linear head is exactly one layer without activation")
        if self.kind == MLP and len(self.layers) > MAX_MLP_LAYERS:
            raise BadShape(f"mlp heads have at most {MAX_MLP_LAYERS} layers")
        if self.layers[-1].activation != "none":
            raise BadShape("final layer must not have an activation")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise BadShape(f"layer shapes do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @property
    def in_dim(self):
        return self.dim if self.kind == IDENTITY else self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.dim if self.kind == IDENTITY else self.layers[-1].out_dim

    def params(self):
        """Flat list of parameter arrays (weight, then bias if present, per layer)."""
        return [p for layer in self.layers for p in layer.params()]

    @property
    def n_params(self):
        return sum(p.size for p in self.params())

    def with_params(self, params):
        """New head of the same structure holding ``params``."""
        params = list(params)
        layers = []
        for layer in self.layers:
            w = params.pop(0)
            b = params.pop(0) if layer.bias is not None else None
            if np.shape(w) != layer.weight.shape:
                raise ShapeMismatch(f"weight shape {np.shape(w)} != {layer.weight.shape}")
            layers.append(Layer(w, b, layer.activation))
        if params:
            raise ShapeMismatch(f"{len(params)} surplus parameter arrays")
        return SearchHead(self.kind, tuple(layers), self.dim)

    def same_params(self, other):
        a, b = self.params(), other.params()
        return (
            self.kind == other.kind
            and len(a) == len(b)
            and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))
        )

    def __repr__(self):
        if self.kind == IDENTITY:
            return f"SearchHead(identity, dim={self.dim})"
        dims = [self.in_dim] + [layer.out_dim for layer in self.layers]
        return f"SearchHead({self.kind}, {'->'.join(map(str, dims))})"


def identity_head(dim=None):
    return SearchHead(IDENTITY, (), dim)


def linear_head(weight, bias=None):
    return SearchHead(LINEAR, (Layer(weight, bias, "none"),))


def zero_head(in_dim, out_dim):
    """Linear head whose output is the zero vector for every input."""
    return linear_head(np.zeros((out_dim, in_dim)))


def init_head(kind, in_dim, out_dim, hidden_dims=(), seed=0, *, bias=True, activation="tanh"):
    """Fresh head with weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and zero biases."""
    hidden_dims = list(hidden_dims)
    if in_dim <= 0 or out_dim <= 0 or any(h <= 0 for h in hidden_dims):
        raise BadShape("dimensions must be positive")
    if kind == IDENTITY:
        if in_dim != out_dim or hidden_dims:
            raise BadShape("identity head needs in_dim == out_dim and no hidden layers")
        return identity_head(in_dim)
    if kind == LINEAR and hidden_dims:
        raise BadShape("linear head takes no hidden layers")
    if kind == MLP and not 1 <= len(hidden_dims) <= MAX_MLP_LAYERS - 1:
        raise BadShape(f"mlp head takes 1 to {MAX_MLP_LAYERS - 1} hidden layers")
    if kind not in KINDS:
        raise BadShape(f"unknown head kind {kind!r}")
    if activation not in ("tanh", "relu"):
        raise BadShape(f"hidden activation must be tanh or relu, got {activation!r}")
    rng = np.random.default_rng(seed)
    dims = [in_dim, *hidden_dims, out_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        lim = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        b = np.zeros(fan_out) if bias else None
        act = "none" if i == len(dims) - 2 else activation
        layers.append(Layer(w, b, act))
    return SearchHead(kind, tuple(layers))


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(np.float64)
    return None


def _check_in(head, dim):
    if head.in_dim is not None and dim != head.in_dim:
        raise DimMismatch(f"head expects input dim {head.in_dim}, got {dim}")


def forward(head, X):
    """Apply ``head`` to each row of the 2-D array ``X`` (row-local arithmetic)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimMismatch("forward expects a 2-D array")
    _check_in(head, X.shape[1])
    a = X
    for layer in head.layers:
        a = _act(layer.activation, kernels.dense_forward(a, layer.weight, layer.bias))
    return np.array(a, dtype=np.float64, copy=True)


def apply(head, q):
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise DimMismatch("apply expects a single vector")
    return forward(head, q[None, :])[0]


def apply_batch(head, m):
    return EmbeddingMatrix(m.ids, forward(head, m.data))


def _forward_cache(head, X):
    acts = [X]
    pre = []
    a = X
    for layer in head.layers:
        z = a @ layer.weight.T
        if layer.bias is not None:
            z = z + layer.bias
        a = _act(layer.activation, z)
        pre.append(z)
        acts.append(a)
    return pre, acts


def gradients(head, queries, items_pos, items_all=None, temperature=1.0):
    """In-batch InfoNCE loss and its exact gradient w.r.t. every head parameter.

    ``queries`` is B x in_dim, ``items_pos`` B x out_dim (row i is the
    positive of query i).  ``items_all`` optionally extends the candidate set;
    its first B rows must be the positives.  Returns ``(loss, grads)`` with
    ``grads`` aligned to ``head.params()``.
    """
    Q = np.asarray(queries, dtype=np.float64)
    P = np.asarray(items_pos, dtype=np.float64)
    A = P if items_all is None else np.asarray(items_all, dtype=np.float64)
    if Q.ndim != 2 or P.ndim != 2 or A.ndim != 2:
        raise DimMismatch("batches must be 2-D")
    if Q.shape[0] != P.shape[0] or A.shape[0] < P.shape[0]:
        raise DimMismatch(f"batch sizes disagree: {Q.shape[0]} queries, {P.shape[0]} positives")
    if items_all is not None and not np.array_equal(A[: P.shape[0]], P):
        raise DimMismatch("the first B candidate rows must be the positives")
    _check_in(head, Q.shape[1])
    if A.shape[1] != (head.out_dim if head.out_dim is not None else Q.shape[1]):
        raise DimMismatch(f"head output dim {head.out_dim} != item dim {A.shape[1]}")
    if not temperature > 0:
        raise ValueError("temperature must be positive")

    with np.errstate(over="ignore", invalid="ignore"):
        pre, acts = _forward_cache(head, Q)
        S = acts[-1] @ A.T
    if not np.isfinite(S).all():
        raise NonFinite("score matrix overflowed")
    loss, dS = info_nce_with_grad(S, temperature)
    da = dS @ A
    grads = []
    for layer, z, a_prev, a in zip(reversed(head.layers), reversed(pre), reversed(acts[:-1]), reversed(acts[1:])):
        g = _act_grad(layer.activation, z, a)
        dz = da if g is None else da * g
        layer_grads = [dz.T @ a_prev]
        if layer.bias is not None:
            layer_grads.append(dz.sum(axis=0))
        grads[:0] = layer_grads
        da = dz @ layer.weight
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFinite("gradient is not finite")
    return loss, grads


def encode_head(head):
    parts = [MAGIC, struct.pack("<IBB", FORMAT_VERSION, _KIND_TAG[head.kind], len(head.layers))]
    if head.kind == IDENTITY:
        parts.append(struct.pack("<I", head.dim or 0))
    for layer in head.layers:
        parts.append(struct.pack("<IIB", layer.in_dim, layer.out_dim, _ACT_TAG[layer.activation]))
        parts.append(layer.weight.astype("<f8").tobytes())
        parts.append(struct.pack("<B", layer.bias is not None))
        if layer.bias is not None:
            parts.append(layer.bias.astype("<f8").tobytes())
    return b"".join(parts)


def decode_head(buf):
    if buf[:4] != MAGIC:
        raise BadMagic("not a head checkpoint (missing SEPH signature)")
    kinds = {v: k for k, v in _KIND_TAG.items()}
    acts = {v: k for k, v in _ACT_TAG.items()}
    off = 4
    try:
        version, kind_tag, n_layers = struct.unpack_from("<IBB", buf, off)
        off += 6
        if version != FORMAT_VERSION:
            raise ShapeMismatch(f"unsupported head format version {version}")
        if kind_tag not in kinds:
            raise ShapeMismatch(f"unknown kind tag {kind_tag}")
        kind = kinds[kind_tag]
        dim = None
        if kind == IDENTITY:
            (dim,) = struct.unpack_from("<I", buf, off)
            off += 4
        layers = []
        for _ in range(n_layers):
            fan_in, fan_out, act_tag = struct.unpack_from("<IIB", buf, off)
            off += 9
            n = fan_in * fan_out
            if off + 8 * n > len(buf):
                raise ShapeMismatch("weight payload truncated")
            w = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(fan_out, fan_in)
            off += 8 * n
            (has_bias,) = struct.unpack_from("<B", buf, off)
            off += 1
            b = None
            if has_bias:
                if off + 8 * fan_out > len(buf):
                    raise ShapeMismatch("bias payload truncated")
                b = np.frombuffer(buf, dtype="<f8", count=fan_out, offset=off)
                off += 8 * fan_out
            if act_tag not in acts:
                raise ShapeMismatch(f"unknown activation tag {act_tag}")
            layers.append(Layer(w, b, acts[act_tag]))
    except struct.error as exc:
        raise ShapeMismatch(f"truncated head checkpoint: {exc}") from exc
    if off != len(buf):
        raise ShapeMismatch(f"{len(buf) - off} trailing bytes in head checkpoint")
    try:
        return SearchHead(kind, tuple(layers), dim or None)
    except BadShape as exc:
        raise ShapeMismatch(str(exc)) from exc


def save_head(head, path):
    atomic_write(path, encode_head(head))


def load_head(path):
    return decode_head(read_bytes(path))
