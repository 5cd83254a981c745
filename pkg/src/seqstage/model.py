"""The hierarchical sequence-to-sequence staging model, end to end.

A batch of S sequences of L epoch images flows through three levels:

1. unfold to S*L*T spectral columns -> constrained filterbank layers
   (shared across every epoch and sequence),
2. fold to S*L epoch images -> attention-pooled bidirectional GRU
   (shared across epochs) -> one feature vector per epoch,
3. fold to S sequences of L vectors -> sequence-level bidirectional GRU ->
   per-step linear outputs -> per-step softmax posteriors.

The loss is length-normalized cross entropy per sequence, averaged over the
minibatch, plus an L2 penalty on the weight matrices. Training enumerates
every maximal-overlap window of the training recordings, shuffles them with
a counter-based RNG (Philox), and retains the parameters with the best
validation accuracy under aggregated sliding prediction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import autodiff as ad
from .autodiff import (AdamState, EPS_FLOOR, NumericalError, ParameterStore, ShapeError,
                       Tape, Tensor, adam_step)
from .attention import AttentionParams, attention_pool, init_attention_params
from .filterbank import FilterbankLayer, make_filterbank_layer
from .recurrent import BiRnnParams, bidirectional_pass, bidirectional_states, init_birnn_params

logger = logging.getLogger(__name__)

STAGES = ("W", "N1", "N2", "N3", "REM")
NUM_STAGES = 5


@dataclass
class ModelConfig:
    """Architecture, training, and frontend knobs, with desk-scale defaults."""

    seq_len: int = 10
    n_filters: int = 32
    hidden_size: int = 64
    attention_size: int = 64
    channels: int = 3
    n_bins: int = 129
    n_frames: int = 29
    num_classes: int = NUM_STAGES
    epoch_feature_size: int | None = None  # width of per-step epoch features; None = 2*hidden
    dropout_rate: float = 0.25
    reg_lambda: float = 1e-3
    learning_rate: float = 1e-4
    batch_size: int = 32
    train_epochs: int = 10
    validate_every: int = 100
    seed: int = 1
    recurrent_depth: int = 1
    attention_two_stage: bool = True
    win_seconds: float = 2.0
    overlap_fraction: float = 0.5
    nfft: int = 256
    split_fractions: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if self.epoch_feature_size is None:
            self.epoch_feature_size = 2 * self.hidden_size
        self.split_fractions = tuple(float(f) for f in self.split_fractions)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)


@dataclass
class ModelParams:
    """Structured views over one ParameterStore holding every trainable tensor."""

    store: ParameterStore
    filterbanks: list[FilterbankLayer]
    epoch_rnn: BiRnnParams
    attention: AttentionParams
    seq_rnn: BiRnnParams


def init_model_params(config: ModelConfig, rng: np.random.Generator | int) -> ModelParams:
    """Glorot-uniform matrices, zero biases, zero filterbank raw weights."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.Philox(int(rng)))
    store = ParameterStore()
    banks = [make_filterbank_layer(config.n_bins, config.n_filters, c, store)
             for c in range(config.channels)]
    epoch_rnn = init_birnn_params(config.n_filters * config.channels, config.hidden_size,
                                  config.epoch_feature_size, rng, store, "epoch_rnn",
                                  depth=config.recurrent_depth)
    attn = init_attention_params(config.epoch_feature_size, config.attention_size, rng,
                                 store, two_stage=config.attention_two_stage)
    seq_rnn = init_birnn_params(config.epoch_feature_size, config.hidden_size,
                                config.num_classes, rng, store, "seq_rnn",
                                depth=config.recurrent_depth)
    return ModelParams(store=store, filterbanks=banks, epoch_rnn=epoch_rnn,
                       attention=attn, seq_rnn=seq_rnn)


def model_params_from_arrays(config: ModelConfig, arrays: dict[str, np.ndarray]) -> ModelParams:
    params = init_model_params(config, 0)
    params.store.set_arrays(arrays)
    return params


def one_hot(labels: np.ndarray, num_classes: int = NUM_STAGES) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels outside 0..{num_classes - 1}")
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def _stack_batch(images) -> np.ndarray:
    """Accept [S][L][F][T][C] array or a list of [L][F][T][C] sequences."""
    if isinstance(images, np.ndarray):
        if images.ndim != 5:
            raise ShapeError(f"batch must be [S][L][F][T][C], got shape {images.shape}")
        return images.astype(np.float64, copy=False)
    shapes = {np.asarray(seq).shape for seq in images}
    if len(shapes) != 1:
        raise ShapeError(f"mixed sequence shapes in batch: {sorted(shapes)}")
    return np.stack([np.asarray(seq, dtype=np.float64) for seq in images])


def _forward_posteriors(images: np.ndarray, params: ModelParams, config: ModelConfig,
                        mode: str, rng) -> tuple[list[Tensor], Tensor]:
    """Tape-recorded forward. Returns (per-step posteriors [S][K], attention weights)."""
    n_seq, seq_len, n_bins, n_frames, n_chan = images.shape
    if (n_bins, n_frames, n_chan) != (config.n_bins, config.n_frames, config.channels):
        raise ShapeError(f"images {images.shape[2:]} do not match configured "
                         f"({config.n_bins}, {config.n_frames}, {config.channels})")
    n_epochs = n_seq * seq_len

    # Level 1: all epochs' spectral columns through the (tied) filterbanks.
    # Columns are staged frame-major in plain numpy so the tape only carries
    # the (small) filterbank ops, not slices of one huge matrix.
    effective = [layer.effective_weights() for layer in params.filterbanks]
    # Frame-major layout: column (t*n_epochs + e), so each frame's block is a
    # contiguous slice (BLAS fast path).
    column_stacks = [
        np.ascontiguousarray(images[..., c].transpose(2, 3, 0, 1)
                             .reshape(n_bins, n_frames * n_epochs))
        for c in range(n_chan)
    ]
    frame_inputs = []
    for t in range(n_frames):
        blocks = [ad.matmul(eff, stack[:, t * n_epochs:(t + 1) * n_epochs], transpose_a=True)
                  for eff, stack in zip(effective, column_stacks)]
        frame_inputs.append(ad.transpose(ad.concat(blocks, axis=0)))

    # Level 2: fold to epochs; bidirectional GRU over the T frames, batched
    # over all epochs at once, then attention-pool each epoch to one vector.
    step_vectors = bidirectional_pass(frame_inputs, params.epoch_rnn)
    pooled, attn_weights = attention_pool(step_vectors, params.attention)
    pooled = ad.dropout(pooled, config.dropout_rate, mode, rng)

    # Level 3: fold to sequences; sequence-level bidirectional GRU and
    # per-step softmax outputs.
    seq_inputs = [pooled[l::seq_len, :] for l in range(seq_len)]
    states = bidirectional_states(seq_inputs, params.seq_rnn.layers)
    posteriors = []
    for state in states:
        dropped = ad.dropout(state, config.dropout_rate, mode, rng)
        logits = ad.add(ad.matmul(dropped, params.seq_rnn.W_out, transpose_b=True),
                        params.seq_rnn.b_out)
        posteriors.append(ad.softmax(logits, axis=-1))
    return posteriors, attn_weights


def forward(images, params: ModelParams, config: ModelConfig, mode: str = "eval",
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Posterior sequences for a batch, shape [S][L][num_classes]."""
    batch = _stack_batch(images)
    posteriors, _ = _forward_posteriors(batch, params, config, mode, rng)
    return np.stack([p.data for p in posteriors], axis=1)


def attention_weights(images, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Per-epoch attention weights, shape [S][L][T] (eval mode)."""
    batch = _stack_batch(images)
    n_seq, seq_len = batch.shape[:2]
    _, alpha = _forward_posteriors(batch, params, config, "eval", None)
    return alpha.data.reshape(n_seq, seq_len, config.n_frames)


def sequence_loss(pred: np.ndarray, truth: np.ndarray) -> float:
    """Cross entropy averaged over the sequence, log floored at EPS_FLOOR."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth)
    if truth.ndim == 1:
        truth = one_hot(truth, pred.shape[-1])
    return float(-(truth * np.log(np.maximum(pred, EPS_FLOOR))).sum() / pred.shape[0])


def objective(images, labels, params: ModelParams, config: ModelConfig,
              mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Minibatch loss: mean per-sequence cross entropy + (lambda/2)*||weights||^2."""
    batch = _stack_batch(images)
    n_seq, seq_len = batch.shape[:2]
    targets = one_hot(np.asarray(labels), config.num_classes)
    if targets.shape != (n_seq, seq_len, config.num_classes):
        raise ShapeError(f"labels shape {np.asarray(labels).shape} does not match batch")
    posteriors, _ = _forward_posteriors(batch, params, config, mode, rng)
    acc = None
    for l, post in enumerate(posteriors):
        picked = ad.sum_elems(ad.elementwise_mul(ad.log(post, floor=EPS_FLOOR),
                                                 targets[:, l, :]))
        acc = picked if acc is None else ad.add(acc, picked)
    loss = ad.scale(acc, -1.0 / (n_seq * seq_len))
    if config.reg_lambda > 0.0:
        reg = None
        for w in params.store.decayed_tensors():
            sq = ad.sum_of_squares(w)
            reg = sq if reg is None else ad.add(reg, sq)
        loss = ad.add(loss, ad.scale(reg, 0.5 * config.reg_lambda))
    return loss


def make_predictor(params: ModelParams, config: ModelConfig):
    """Eval-mode forward as a plain function of an image batch."""

    def predict(batch_images: np.ndarray) -> np.ndarray:
        return forward(batch_images, params, config, mode="eval")

    return predict


@dataclass
class TrainResult:
    best_arrays: dict
    best_accuracy: float
    best_step: int
    final_arrays: dict
    history: list = field(default_factory=list)
    skipped_recordings: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.history)


def _window_index(data, seq_len: int, skipped: list, what: str) -> list[tuple[int, int]]:
    windows = []
    for ri, (images, labels) in enumerate(data):
        n = len(labels)
        if n < seq_len:
            logger.warning("%s recording %d has %d epochs < sequence length %d; skipped",
                           what, ri, n, seq_len)
            skipped.append((what, ri))
            continue
        windows.extend((ri, start) for start in range(n - seq_len + 1))
    return windows


def _validation_accuracy(valid_data, params: ModelParams, config: ModelConfig) -> float:
    from .evaluation import sliding_predict

    predict = make_predictor(params, config)
    correct = 0
    total = 0
    for images, labels in valid_data:
        if len(labels) < config.seq_len:
            continue
        result = sliding_predict(images, predict, config.seq_len, config.batch_size)
        correct += int((result.labels == np.asarray(labels)).sum())
        total += len(labels)
    if total == 0:
        raise ValueError("no validation recording is as long as the sequence length")
    return correct / total


def train(train_data, valid_data, config: ModelConfig) -> TrainResult:
    """Train from scratch on every maximal-overlap window of the recordings.

    ``train_data`` and ``valid_data`` are lists of (images [n][F][T][C],
    labels [n]) pairs, one per recording. Validation accuracy (aggregated
    sliding prediction over the validation recordings) is computed every
    ``validate_every`` steps and once after the final step; the best
    parameters are retained. Deterministic given config.seed.
    """
    rng = np.random.Generator(np.random.Philox(config.seed))
    params = init_model_params(config, rng)
    adam = AdamState.for_params(params.store, lr=config.learning_rate)
    skipped: list = []
    windows = _window_index(train_data, config.seq_len, skipped, "train")
    if not windows:
        raise ValueError(f"no training recording is as long as seq_len={config.seq_len}")

    history: list[dict] = []
    best_arrays = params.store.get_arrays()
    best_accuracy = -1.0
    best_step = 0
    step = 0

    def validate(at_step: int) -> float:
        nonlocal best_arrays, best_accuracy, best_step
        accuracy = _validation_accuracy(valid_data, params, config)
        if accuracy > best_accuracy:
            best_arrays = params.store.get_arrays()
            best_accuracy = accuracy
            best_step = at_step
        return accuracy

    for _epoch in range(config.train_epochs):
        order = rng.permutation(len(windows))
        for lo in range(0, len(order), config.batch_size):
            chunk = [windows[int(k)] for k in order[lo:lo + config.batch_size]]
            batch_images = np.stack([train_data[ri][0][s:s + config.seq_len] for ri, s in chunk])
            batch_labels = np.stack([np.asarray(train_data[ri][1][s:s + config.seq_len])
                                     for ri, s in chunk])
            params.store.zero_grads()
            with Tape() as tape:
                loss = objective(batch_images, batch_labels, params, config, "train", rng)
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite training loss at step {step + 1}")
            tape.backward(loss)
            adam_step(params.store, None, adam)
            step += 1
            row = {"step": step, "train_loss": float(loss.data), "valid_accuracy": None}
            if valid_data and step % config.validate_every == 0:
                row["valid_accuracy"] = validate(step)
            history.append(row)

    if valid_data and step % config.validate_every != 0:
        history[-1]["valid_accuracy"] = validate(step)
    if best_accuracy < 0.0:
        best_arrays = params.store.get_arrays()
        best_step = step
        best_accuracy = float("nan")
    return TrainResult(best_arrays=best_arrays, best_accuracy=best_accuracy,
                       best_step=best_step, final_arrays=params.store.get_arrays(),
                       history=history, skipped_recordings=skipped)


def save_model(path, arrays: dict, config: ModelConfig) -> None:
    store = ParameterStore()
    for name, value in arrays.items():
        store.add(name, value)
    ad.save_checkpoint(path, store, config.to_dict())


def load_model(path) -> tuple[ModelParams, ModelConfig]:
    arrays, config_dict = ad.load_checkpoint(path)
    config = ModelConfig.from_dict(config_dict)
    return model_params_from_arrays(config, arrays), config
