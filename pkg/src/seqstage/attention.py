"""Attention pooling over a sequence of recurrent output vectors.

The scorer assigns one scalar per time step; the softmax of the scores
weights a convex combination of the step vectors into a single feature
vector. The default scorer projects each vector to the attention width and
reduces with a learned vector; a pure single-vector scorer is available for
configurations that want the narrower parameterization. Neither form has a
bias or nonlinearity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


@dataclass
class AttentionParams:
    """Scoring weights: optional projection [D][A] plus reducer column [A][1].

    With ``projection`` None the reducer is a [D][1] column applied directly
    to the step vectors (the single-vector scorer).
    """

    projection: Tensor | None
    reducer: Tensor

    def __post_init__(self):
        if self.reducer.ndim != 2 or self.reducer.shape[1] != 1:
            raise ShapeError(f"reducer must be a column matrix, got shape {self.reducer.shape}")
        if self.projection is not None and self.projection.shape[1] != self.reducer.shape[0]:
            raise ShapeError(f"projection {self.projection.shape} does not feed "
                             f"reducer {self.reducer.shape}")


def init_attention_params(feature_size: int, attention_size: int,
                          rng: np.random.Generator, store=None, prefix: str = "attention",
                          two_stage: bool = True) -> AttentionParams:
    from .recurrent import glorot_uniform

    if two_stage:
        proj = glorot_uniform(rng, feature_size, attention_size)
        reduce = glorot_uniform(rng, attention_size, 1)
    else:
        proj = None
        reduce = glorot_uniform(rng, feature_size, 1)
    if store is not None:
        proj_t = None if proj is None else store.add(f"{prefix}/projection", proj)
        reduce_t = store.add(f"{prefix}/reducer", reduce)
    else:
        proj_t = None if proj is None else Tensor(proj, requires_grad=True)
        reduce_t = Tensor(reduce, requires_grad=True)
    return AttentionParams(projection=proj_t, reducer=reduce_t)


def attention_pool(vectors, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Collapse T step vectors into one vector; also return the weights.

    ``vectors`` is a sequence of T tensors, each [D] or [B][D]. Returns
    (pooled, weights): pooled is [D] / [B][D], weights [T] / [B][T] with
    rows summing to 1.
    """
    if len(vectors) == 0:
        raise ValueError("empty sequence")
    steps = [ad.as_tensor(v) for v in vectors]
    vector_in = steps[0].ndim == 1
    if vector_in:
        steps = [ad.reshape(v, (1, v.size)) for v in steps]
    scores = []
    for v in steps:
        projected = v if params.projection is None else ad.matmul(v, params.projection)
        scores.append(ad.matmul(projected, params.reducer))
    alpha = ad.softmax(ad.concat(scores, axis=1), axis=-1)
    pooled = None
    for t, v in enumerate(steps):
        term = ad.elementwise_mul(alpha[:, t:t + 1], v)
        pooled = term if pooled is None else ad.add(pooled, term)
    if vector_in:
        return pooled[0, :], alpha[0, :]
    return pooled, alpha
