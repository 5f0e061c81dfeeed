"""Parameterized building blocks shared by the policies and detectors.

All weights are initialized uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Each layer registers its tensors into a flat ``params`` dict owned by the
enclosing model so the optimizer and checkpoints see one namespace.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T


def _init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, params: dict, rng, d_in: int, d_out: int, name: str):
        self.w = T.parameter(_init(rng, (d_in, d_out), d_in), f"{name}.w")
        self.b = T.parameter(_init(rng, (d_out,), d_in), f"{name}.b")
        params[self.w.name] = self.w
        params[self.b.name] = self.b

    def __call__(self, x, tape=None):
        return T.linear(x, self.w, self.b, tape)


class Mlp:
    """Stack of Linear layers with tanh between them (last layer linear)."""

    def __init__(self, params, rng, dims, name):
        self.layers = [Linear(params, rng, dims[i], dims[i + 1], f"{name}.{i}")
                       for i in range(len(dims) - 1)]

    def __call__(self, x, tape=None):
        for i, layer in enumerate(self.layers):
            x = layer(x, tape)
            if i < len(self.layers) - 1:
                x = T.tanh(x, tape)
        return x


class LstmCell:
    """Single recurrent cell; gate order i, f, g, o."""

    def __init__(self, params, rng, d_in: int, hidden: int, name: str):
        self.hidden = hidden
        self.wx = T.parameter(_init(rng, (d_in, 4 * hidden), d_in), f"{name}.wx")
        self.wh = T.parameter(_init(rng, (hidden, 4 * hidden), hidden), f"{name}.wh")
        self.b = T.parameter(_init(rng, (4 * hidden,), hidden), f"{name}.b")
        for p in (self.wx, self.wh, self.b):
            params[p.name] = p

    def initial_state(self):
        return (T.constant(np.zeros(self.hidden)), T.constant(np.zeros(self.hidden)))

    def step(self, x, state, tape=None):
        h, c = state
        return T.lstm_cell(x, h, c, self.wx, self.wh, self.b, tape)

    def run(self, xs, tape=None):
        """xs: (T, d_in) matrix tensor. Returns (T, hidden) of hidden states."""
        state = self.initial_state()
        outs = []
        for x_t in T.split_rows(xs, tape):
            h, c = self.step(x_t, state, tape)
            state = (h, c)
            outs.append(h)
        return T.stack_rows(outs, tape)


class MultiHeadAttention:
    """Per-head q/k/v projections, scaled dot-product per head, concat, output map."""

    def __init__(self, params, rng, dim: int, heads: int, name: str):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        hd = dim // heads
        self.proj = []
        for h in range(heads):
            self.proj.append((
                Linear(params, rng, dim, hd, f"{name}.h{h}.q"),
                Linear(params, rng, dim, hd, f"{name}.h{h}.k"),
                Linear(params, rng, dim, hd, f"{name}.h{h}.v"),
            ))
        self.out = Linear(params, rng, dim, dim, f"{name}.out")

    def __call__(self, q, k, v, causal=False, tape=None):
        parts = []
        for lq, lk, lv in self.proj:
            parts.append(T.attention(lq(q, tape), lk(k, tape), lv(v, tape),
                                     causal=causal, tape=tape))
        return self.out(T.concat(parts, tape), tape)


class AttentionBlock:
    """Self-attention + feed-forward, each with residual and instance norm."""

    def __init__(self, params, rng, dim: int, heads: int, name: str):
        self.attn = MultiHeadAttention(params, rng, dim, heads, f"{name}.attn")
        self.ff = Mlp(params, rng, (dim, dim, dim), f"{name}.ff")

    def __call__(self, x, tape=None, causal=False, memory=None):
        kv = x if memory is None else memory
        x = T.instance_norm(T.add(x, self.attn(x, kv, kv, causal=causal, tape=tape), tape), tape=tape)
        return T.instance_norm(T.add(x, self.ff(x, tape), tape), tape=tape)


def model_blocks(params: dict) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in params.items()}


def load_into(params: dict, blocks: dict[str, np.ndarray]) -> None:
    missing = set(params) - set(blocks)
    extra = set(blocks) - set(params)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, p in params.items():
        if p.data.shape != blocks[name].shape:
            raise ValueError(f"{name}: shape {blocks[name].shape} != {p.data.shape}")
        p.data = np.array(blocks[name], dtype=np.float64)
