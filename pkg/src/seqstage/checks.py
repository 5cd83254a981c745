"""Analytic-vs-numeric gradient verification for every layer and the
composed model at micro scale.

Each check builds a random instance, evaluates a scalar objective through
the tape, and compares the backward gradients against central finite
differences (eps=1e-5, double precision). The per-layer tolerances are
tighter than the composed model's because fewer roundoff paths stack up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import attention_pool, init_attention_params
from .filterbank import apply_filterbank, make_filterbank_layer
from .model import ModelConfig, init_model_params, objective
from .recurrent import bidirectional_pass, gru_cell, init_gru_params, init_birnn_params


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def micro_config(**overrides) -> ModelConfig:
    """The composed-model check configuration: tiny everywhere."""
    base = dict(seq_len=3, n_filters=4, hidden_size=3, attention_size=3, channels=2,
                n_bins=9, n_frames=5, epoch_feature_size=6, dropout_rate=0.0,
                reg_lambda=1e-3, seed=7)
    base.update(overrides)
    return ModelConfig(**base)


def _check_filterbank(rng) -> GradCheckResult:
    layer = make_filterbank_layer(n_bins=7, n_filters=3)
    layer.raw_weights.data = rng.normal(0.0, 1.0, layer.raw_weights.shape)
    spectrogram = rng.normal(0.0, 1.0, (7, 4))
    err = ad.grad_check(lambda: ad.mean(apply_filterbank(spectrogram, layer)),
                        [layer.raw_weights], eps=1e-5)
    return GradCheckResult("filterbank layer", err, 1e-6)


def _check_gru_cell(rng) -> GradCheckResult:
    p = init_gru_params(3, 2, rng)
    for t in (p.b_r, p.b_z, p.b_h):
        t.data = rng.normal(0.0, 0.5, t.shape)
    x = ad.Tensor(rng.normal(0.0, 1.0, 3), requires_grad=True)
    h = ad.Tensor(rng.normal(0.0, 1.0, 2), requires_grad=True)
    tensors = [p.W_sr, p.W_sz, p.W_sh, p.W_hr, p.W_hz, p.W_hh, p.b_r, p.b_z, p.b_h, x, h]
    err = ad.grad_check(lambda: ad.mean(gru_cell(x, h, p)), tensors, eps=1e-5)
    return GradCheckResult("GRU cell", err, 1e-5)


def _check_bidirectional(rng) -> GradCheckResult:
    p = init_birnn_params(input_size=3, hidden_size=2, output_size=2, rng=rng)
    inputs = [ad.Tensor(rng.normal(0.0, 1.0, 3), requires_grad=True) for _ in range(5)]

    def f():
        outputs = bidirectional_pass(inputs, p)
        total = None
        for out in outputs:
            s = ad.sum_elems(out)
            total = s if total is None else ad.add(total, s)
        return ad.scale(total, 0.1)

    store_tensors = [t for pair in p.layers for gp in pair
                     for t in (gp.W_sr, gp.W_sz, gp.W_sh, gp.W_hr, gp.W_hz, gp.W_hh,
                               gp.b_r, gp.b_z, gp.b_h)]
    err = ad.grad_check(f, store_tensors + [p.W_out, p.b_out] + inputs, eps=1e-5)
    return GradCheckResult("bidirectional pass K=5", err, 1e-5)


def _check_attention(rng) -> GradCheckResult:
    p = init_attention_params(feature_size=4, attention_size=3, rng=rng)
    steps = [ad.Tensor(rng.normal(0.0, 1.0, 4), requires_grad=True) for _ in range(6)]

    def f():
        pooled, _ = attention_pool(steps, p)
        return ad.mean(pooled)

    err = ad.grad_check(f, [p.projection, p.reducer] + steps, eps=1e-5)
    return GradCheckResult("attention pool", err, 1e-6)


def _check_full_model(rng) -> GradCheckResult:
    config = micro_config()
    params = init_model_params(config, np.random.Generator(np.random.Philox(config.seed)))
    images = rng.normal(0.0, 1.0, (2, config.seq_len, config.n_bins, config.n_frames,
                                   config.channels))
    labels = rng.integers(0, config.num_classes, (2, config.seq_len))
    err = ad.grad_check(lambda: objective(images, labels, params, config, mode="train"),
                        params.store, eps=1e-5, rng=np.random.Generator(np.random.Philox(1)))
    return GradCheckResult("full micro model", err, 1e-4)


def gradient_suite(micro_only: bool = False, seed: int = 0) -> list[GradCheckResult]:
    """Run the gradient checks; with ``micro_only`` just the composed model."""
    rng = np.random.Generator(np.random.Philox(seed))
    checks = [_check_full_model] if micro_only else [
        _check_filterbank, _check_gru_cell, _check_bidirectional,
        _check_attention, _check_full_model,
    ]
    return [check(rng) for check in checks]
