"""Feedforward networks, control-set output maps and the Adam optimiser."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")

NET_FORMAT_HEADER = "dpfront-net v1"


def _activate(tag: str, z):
    if tag == "relu":
        return ad.relu(z)
    if tag == "tanh":
        return ad.tanh(z)
    if tag == "sigmoid":
        return ad.sigmoid(z)
    if tag == "identity":
        return z
    raise ValueError(f"unknown activation {tag!r}")


# ------------------------------------------------------------- output maps


@dataclass(frozen=True)
class OutputMap:
    """Map from the raw last-layer output onto the control set.

    ``kind`` is one of ``identity``, ``sigmoid_affine`` (coordinatewise
    ``lo + (hi - lo) * sigmoid``) or ``ball`` (``p / max(1, |p| / radius)``).
    """

    kind: str = "identity"
    lo: float = 0.0
    hi: float = 1.0
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "sigmoid_affine", "ball"):
            raise ValueError(f"unknown output map {self.kind!r}")
        if self.kind == "sigmoid_affine" and not self.hi > self.lo:
            raise ValueError("sigmoid_affine needs hi > lo")
        if self.kind == "ball" and not self.radius > 0:
            raise ValueError("ball radius must be positive")

    @classmethod
    def identity(cls) -> "OutputMap":
        return cls("identity")

    @classmethod
    def sigmoid_affine(cls, lo: float, hi: float) -> "OutputMap":
        return cls("sigmoid_affine", lo=float(lo), hi=float(hi))

    @classmethod
    def ball(cls, radius: float = 1.0) -> "OutputMap":
        return cls("ball", radius=float(radius))

    def __call__(self, z):
        if self.kind == "identity":
            return z
        if self.kind == "sigmoid_affine":
            return ad.add(self.lo, ad.mul(self.hi - self.lo, ad.sigmoid(z)))
        n = ad.norm(z, axis=-1, keepdims=True)
        scale = ad.maximum(1.0, ad.mul(n, 1.0 / self.radius))
        return ad.div(z, scale)

    def tokens(self) -> list[str]:
        if self.kind == "sigmoid_affine":
            return [self.kind, repr(self.lo), repr(self.hi)]
        if self.kind == "ball":
            return [self.kind, repr(self.radius)]
        return [self.kind]

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "OutputMap":
        kind = tokens[0]
        if kind == "sigmoid_affine":
            return cls.sigmoid_affine(float(tokens[1]), float(tokens[2]))
        if kind == "ball":
            return cls.ball(float(tokens[1]))
        return cls(kind)


# ------------------------------------------------------------------ networks


@dataclass
class FeedforwardNet:
    """``sigma_L o L_L o ... o sigma_1 o L_1`` with ``L_k(x) = w_k @ [x; 1]``.

    ``weights[k]`` has shape ``(d_{k+1}, d_k + 1)``; the last column is the
    bias.  ``activations[k]`` is applied after layer ``k``; the final entry is
    the output activation (before ``output_map``).
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    activations: tuple[str, ...]
    output_map: OutputMap = field(default_factory=OutputMap.identity)

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        self.activations = tuple(self.activations)
        if len(self.layer_dims) < 2:
            raise ValueError("a network needs at least input and output dims")
        if len(self.weights) != len(self.layer_dims) - 1:
            raise ValueError("one weight matrix per layer expected")
        if len(self.activations) != len(self.weights):
            raise ValueError("one activation per layer expected")
        for k, w in enumerate(self.weights):
            expected = (self.layer_dims[k + 1], self.layer_dims[k] + 1)
            if w.shape != expected:
                raise ValueError(f"layer {k}: weight shape {w.shape}, expected {expected}")
        for tag in self.activations:
            if tag not in ACTIVATIONS:
                raise ValueError(f"unknown activation {tag!r}")

    @property
    def n_params(self) -> int:
        return int(sum(w.size for w in self.weights))

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "FeedforwardNet":
        return FeedforwardNet(self.layer_dims, [w.copy() for w in self.weights],
                              self.activations, self.output_map)

    def forward(self, x, weights=None, raw: bool = False):
        """Evaluate on a batch ``x`` of shape ``(M, d_0)``.

        ``weights`` may be tape variables standing in for ``self.weights``;
        results are then recorded.  ``raw=True`` skips ``output_map``.
        """
        ws = self.weights if weights is None else weights
        h = x
        for w, tag in zip(ws, self.activations):
            h = _activate(tag, ad.affine(h, w))
        return h if raw else self.output_map(h)

    __call__ = forward

    # -------------------------------------------------------- persistence

    def to_text(self) -> str:
        lines = [
            NET_FORMAT_HEADER,
            "dims " + " ".join(str(d) for d in self.layer_dims),
            "activations " + " ".join(self.activations),
            "output " + " ".join(self.output_map.tokens()),
        ]
        for k, w in enumerate(self.weights):
            lines.append(f"layer {k} {w.shape[0]} {w.shape[1]}")
            for row in w:
                lines.append(" ".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FeedforwardNet":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != NET_FORMAT_HEADER:
            raise ValueError("not a dpfront network file")
        dims = tuple(int(t) for t in lines[1].split()[1:])
        acts = tuple(lines[2].split()[1:])
        omap = OutputMap.from_tokens(lines[3].split()[1:])
        weights = []
        pos = 4
        for k in range(len(dims) - 1):
            tag, idx, rows, cols = lines[pos].split()
            if tag != "layer" or int(idx) != k:
                raise ValueError(f"malformed layer header at line {pos + 1}")
            rows, cols = int(rows), int(cols)
            body = lines[pos + 1: pos + 1 + rows]
            w = np.array([[float(t) for t in ln.split()] for ln in body], dtype=np.float64)
            if w.shape != (rows, cols):
                raise ValueError(f"layer {k}: body shape {w.shape} != {(rows, cols)}")
            weights.append(w)
            pos += 1 + rows
        return cls(dims, weights, acts, omap)

    def save(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            fh.write(self.to_text())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "FeedforwardNet":
        with open(path) as fh:
            return cls.from_text(fh.read())


def init_net(layer_dims: Sequence[int], activations: Sequence[str] | str = "relu",
             seed=None, output_activation: str = "identity",
             output_map: OutputMap | None = None, zero: bool = False) -> FeedforwardNet:
    """Random initialisation.

    ``activations`` is either one tag for all hidden layers or one tag per
    hidden layer.  ReLU layers get He-uniform weights (bound
    ``sqrt(6 / fan_in)``), other layers Glorot-uniform; biases are zero.
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ValueError("layer_dims needs at least two entries")
    if any(d < 1 for d in dims):
        raise ValueError("all layer dims must be >= 1")
    n_hidden = len(dims) - 2
    if isinstance(activations, str):
        hidden = (activations,) * n_hidden
    else:
        hidden = tuple(activations)
        if len(hidden) != n_hidden:
            raise ValueError("need one activation per hidden layer")
    acts = hidden + (output_activation,)
    rng = np.random.default_rng(seed)
    weights = []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        w = np.zeros((fan_out, fan_in + 1))
        if not zero:
            if acts[k] == "relu":
                bound = np.sqrt(6.0 / fan_in)
            else:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
            w[:, :-1] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        weights.append(w)
    return FeedforwardNet(dims, weights, acts, output_map or OutputMap.identity())


# ---------------------------------------------------------------------- adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new arrays, ``state`` is advanced."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        v = state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        out.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return out
