"""GRU cell and bidirectional recurrent layer.

The same machinery serves both hierarchy levels: per-epoch modelling over
spectral frames and per-sequence modelling over epoch feature vectors. All
ops accept a single vector [D] or a row-batched matrix [B][D] and run
through the autodiff tape, so gradients flow end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


@dataclass
class GruParams:
    """The nine tensors of one GRU direction: three gates x (input, hidden, bias)."""

    W_sr: Tensor
    W_sz: Tensor
    W_sh: Tensor
    W_hr: Tensor
    W_hz: Tensor
    W_hh: Tensor
    b_r: Tensor
    b_z: Tensor
    b_h: Tensor

    def __post_init__(self):
        h, d = self.W_sr.shape
        for name in ("W_sz", "W_sh"):
            if getattr(self, name).shape != (h, d):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != ({h}, {d})")
        for name in ("W_hr", "W_hz", "W_hh"):
            if getattr(self, name).shape != (h, h):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != ({h}, {h})")
        for name in ("b_r", "b_z", "b_h"):
            if getattr(self, name).shape != (h,):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != ({h},)")

    @property
    def hidden_size(self) -> int:
        return self.W_sr.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_sr.shape[1]


@dataclass
class BiRnnParams:
    """Forward/backward GRU stacks plus the per-step output projection."""

    layers: list[tuple[GruParams, GruParams]]
    W_out: Tensor
    b_out: Tensor

    def __post_init__(self):
        for fwd, bwd in self.layers:
            if fwd.hidden_size != bwd.hidden_size:
                raise ShapeError("forward and backward hidden sizes differ")
        h = self.layers[0][0].hidden_size
        if self.W_out.shape[1] != 2 * h:
            raise ShapeError(f"W_out shape {self.W_out.shape} does not accept 2*{h} features")

    @property
    def forward(self) -> GruParams:
        return self.layers[0][0]

    @property
    def backward(self) -> GruParams:
        return self.layers[0][1]

    @property
    def hidden_size(self) -> int:
        return self.layers[0][0].hidden_size

    @property
    def output_size(self) -> int:
        return self.W_out.shape[0]


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_out, fan_in))


def init_gru_params(input_size: int, hidden_size: int, rng: np.random.Generator,
                    store=None, prefix: str = "gru") -> GruParams:
    """Glorot-uniform weight matrices, zero biases."""
    tensors = {}
    for gate in ("r", "z", "h"):
        tensors[f"W_s{gate}"] = glorot_uniform(rng, hidden_size, input_size)
        tensors[f"W_h{gate}"] = glorot_uniform(rng, hidden_size, hidden_size)
        tensors[f"b_{gate}"] = np.zeros(hidden_size)
    if store is not None:
        made = {n: store.add(f"{prefix}/{n}", a, weight_decay=not n.startswith("b_"))
                for n, a in tensors.items()}
    else:
        made = {n: Tensor(a, requires_grad=True) for n, a in tensors.items()}
    return GruParams(**made)


def init_birnn_params(input_size: int, hidden_size: int, output_size: int,
                      rng: np.random.Generator, store=None, prefix: str = "birnn",
                      depth: int = 1) -> BiRnnParams:
    layers = []
    for k in range(depth):
        d_in = input_size if k == 0 else 2 * hidden_size
        fwd = init_gru_params(d_in, hidden_size, rng, store, f"{prefix}/l{k}/fwd")
        bwd = init_gru_params(d_in, hidden_size, rng, store, f"{prefix}/l{k}/bwd")
        layers.append((fwd, bwd))
    w = glorot_uniform(rng, output_size, 2 * hidden_size)
    b = np.zeros(output_size)
    if store is not None:
        w_t = store.add(f"{prefix}/out/W", w)
        b_t = store.add(f"{prefix}/out/b", b, weight_decay=False)
    else:
        w_t, b_t = Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)
    return BiRnnParams(layers=layers, W_out=w_t, b_out=b_t)


def gru_cell(x, h_prev, p: GruParams) -> Tensor:
    """One GRU step: h = z*h_prev + (1-z)*h_bar.

    r = sigmoid(W_sr x + W_hr h_prev + b_r)
    z = sigmoid(W_sz x + W_hz h_prev + b_z)
    h_bar = tanh(W_sh x + W_hh (r*h_prev) + b_h)
    """
    x, h_prev = ad.as_tensor(x), ad.as_tensor(h_prev)
    vector_in = x.ndim == 1
    if vector_in:
        x = ad.reshape(x, (1, x.size))
        h_prev = ad.reshape(h_prev, (1, h_prev.size))
    if x.shape[1] != p.input_size or h_prev.shape[1] != p.hidden_size:
        raise ShapeError(f"gru_cell: input {x.shape} / state {h_prev.shape} do not match "
                         f"params (D={p.input_size}, H={p.hidden_size})")
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, p.W_sr, transpose_b=True),
                                 ad.matmul(h_prev, p.W_hr, transpose_b=True)), p.b_r))
    z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, p.W_sz, transpose_b=True),
                                 ad.matmul(h_prev, p.W_hz, transpose_b=True)), p.b_z))
    h_bar = ad.tanh(ad.add(ad.add(ad.matmul(x, p.W_sh, transpose_b=True),
                                  ad.matmul(ad.elementwise_mul(r, h_prev), p.W_hh,
                                            transpose_b=True)), p.b_h))
    one_minus_z = ad.add(ad.scale(z, -1.0), 1.0)
    h = ad.add(ad.elementwise_mul(z, h_prev), ad.elementwise_mul(one_minus_z, h_bar))
    return h[0, :] if vector_in else h


def _direction_pass(inputs: list[Tensor], p: GruParams, reverse: bool) -> list[Tensor]:
    batch = inputs[0].shape[0]
    h = ad.as_tensor(np.zeros((batch, p.hidden_size)))
    states: list[Tensor] = []
    order = reversed(inputs) if reverse else inputs
    for x in order:
        h = gru_cell(x, h, p)
        states.append(h)
    return states[::-1] if reverse else states


def bidirectional_states(inputs: list[Tensor], layers) -> list[Tensor]:
    """Per-step [backward ++ forward] hidden states, [B][2H] each.

    With stacked layers, each layer consumes the previous layer's
    concatenated states.
    """
    current = inputs
    for fwd_p, bwd_p in layers:
        fwd_states = _direction_pass(current, fwd_p, reverse=False)
        bwd_states = _direction_pass(current, bwd_p, reverse=True)
        current = [ad.concat([hb, hf], axis=1) for hb, hf in zip(bwd_states, fwd_states)]
    return current


def bidirectional_pass(inputs, p: BiRnnParams) -> list[Tensor]:
    """Run both directions over the sequence and project every step.

    ``inputs`` is a sequence of K vectors [D] (or matrices [B][D]); the
    output is K tensors of size output_size. Initial hidden states are zero
    at both ends; step outputs are W_out [h_back ++ h_fwd] + b_out.
    """
    if len(inputs) == 0:
        raise ValueError("empty sequence")
    tensors = [ad.as_tensor(x) for x in inputs]
    vector_in = tensors[0].ndim == 1
    if vector_in:
        tensors = [ad.reshape(t, (1, t.size)) for t in tensors]
    states = bidirectional_states(tensors, p.layers)
    outputs = [ad.add(ad.matmul(s, p.W_out, transpose_b=True), p.b_out) for s in states]
    if vector_in:
        outputs = [o[0, :] for o in outputs]
    return outputs
