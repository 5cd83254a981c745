"""Reverse-mode differentiation on numpy arrays, plus optimizer and checkpoint IO.

Everything runs in float64. Primitive ops record themselves on the innermost
active :class:`Tape` (if any) together with a closure computing their exact
local gradient; :meth:`Tape.backward` replays the records in reverse and
leaves accumulated gradients on every ``requires_grad`` tensor. With no tape
active the ops are plain numpy computations, which is what inference uses.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

# Additive/log floor shared by the loss and the spectrogram frontend.
EPS_FLOOR = 1e-12

CHECKPOINT_MAGIC = b"SSNC"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where training cannot safely continue."""


class Tensor:
    """A float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __getitem__(self, key):
        return slice_tensor(self, key)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_ACTIVE_TAPES: list["Tape"] = []


def _tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Entries are (output, inputs, vjp) triples appended in execution order,
    which is a topological order of the data flow. ``backward`` walks the
    entries once in reverse, pushing the loss gradient through each local
    vector-Jacobian product, and is therefore exact for every recorded op.
    A tape is consumed by ``backward``; record a fresh one per step.
    """

    def __init__(self):
        self._entries = []
        self._live: set[int] = set()

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self):
        return len(self._entries)

    def _record(self, out, inputs, vjp):
        """Record one op. ``vjp(g, needs)`` must return one gradient (or None)
        per input; inputs with needs[i] False may be skipped entirely."""
        needs = tuple(t.requires_grad or id(t) in self._live for t in inputs)
        if any(needs):
            self._live.add(id(out))
            self._entries.append((out, inputs, needs, vjp))

    def backward(self, loss: Tensor) -> None:
        """Accumulate dLoss/dt into ``t.grad`` for every requires_grad tensor.

        Intermediate gradients are held in a scratch table keyed by tensor
        identity and dropped as soon as their producers are processed; only
        requires_grad tensors keep a gradient after the call.
        """
        if loss.data.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not any(out is loss for out, _, _, _ in self._entries):
            raise ValueError("loss tensor was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, needs, vjp in reversed(self._entries):
            g = grads.pop(id(out), None)
            holders.pop(id(out), None)
            if g is None:
                continue
            for t, needed, gt in zip(inputs, needs, vjp(g, needs)):
                if not needed or gt is None:
                    continue
                prev = grads.get(id(t))
                # Never accumulate in place: vjps may hand back shared views.
                grads[id(t)] = gt if prev is None else prev + gt
                holders[id(t)] = t
        for key, t in holders.items():
            if t.requires_grad:
                g = grads[key]
                t.grad = g if t.grad is None else t.grad + g
        self._entries.clear()
        self._live.clear()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` back down to the pre-broadcast ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a, b, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    lhs = a.data.T if transpose_a else a.data
    rhs = b.data.T if transpose_b else b.data
    if lhs.ndim != 2 or rhs.ndim != 2 or lhs.shape[1] != rhs.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {lhs.shape} and {rhs.shape}")
    out = Tensor(lhs @ rhs)
    tape = _tape()
    if tape is not None:

        def vjp(g, needs):
            ga = gb = None
            if needs[0]:
                ga = g @ rhs.T
                if transpose_a:
                    ga = ga.T
            if needs[1]:
                gb = lhs.T @ g
                if transpose_b:
                    gb = gb.T
            return ga, gb

        tape._record(out, (a, b), vjp)
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    tape = _tape()
    if tape is not None:

        def vjp(g, needs):
            return (_unbroadcast(g, a.shape) if needs[0] else None,
                    _unbroadcast(g, b.shape) if needs[1] else None)

        tape._record(out, (a, b), vjp)
    return out


def elementwise_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeError(f"elementwise_mul: incompatible shapes {a.shape} and {b.shape}") from None
    tape = _tape()
    if tape is not None:

        def vjp(g, needs):
            return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                    _unbroadcast(g * a.data, b.shape) if needs[1] else None)

        tape._record(out, (a, b), vjp)
    return out


def scale(x, c: float) -> Tensor:
    """Multiply by a python constant (not differentiated through)."""
    x = as_tensor(x)
    c = float(c)
    out = Tensor(x.data * c)
    tape = _tape()
    if tape is not None:
        tape._record(out, (x,), lambda g, needs: (g * c,))
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    tape = _tape()
    if tape is not None:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def vjp(g, needs):
            moved = np.moveaxis(g, axis, 0)
            return tuple(
                np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis) if needs[i] else None
                for i in range(len(sizes))
            )

        tape._record(out, tuple(tensors), vjp)
    return out


def slice_tensor(x, key) -> Tensor:
    """Basic (view) slicing; the gradient scatters back into a zero array."""
    x = as_tensor(x)
    out = Tensor(x.data[key])
    tape = _tape()
    if tape is not None:

        def vjp(g, needs):
            gx = np.zeros_like(x.data)
            gx[key] = g
            return (gx,)

        tape._record(out, (x,), vjp)
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None
    tape = _tape()
    if tape is not None:
        tape._record(out, (x,), lambda g, needs: (g.reshape(x.data.shape),))
    return out


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    out = Tensor(x.data.T)
    tape = _tape()
    if tape is not None:
        tape._record(out, (x,), lambda g, needs: (g.T,))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Overflow-free: sigmoid(x) = (1 + tanh(x/2)) / 2.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = Tensor(s)
    tape = _tape()
    if tape is not None:
        tape._record(out, (x,), lambda g, needs: (g * s * (1.0 - s),))
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    out = Tensor(t)
    tape = _tape()
    if tape is not None:
        tape._record(out, (x,), lambda g, needs: (g * (1.0 - t * t),))
    return out


def softmax(x, axis: int = -1) -> Tensor:
    """Row-wise softmax with max subtraction for overflow safety."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)
    tape = _tape()
    if tape is not None:

        def vjp(g, needs):
            dot = (g * p).sum(axis=axis, keepdims=True)
            return (p * (g - dot),)

        tape._record(out, (x,), vjp)
    return out


def log(x, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` the argument is clamped below at ``floor``."""
    x = as_tensor(x)
    if floor is None:
        if np.any(x.data <= 0):
            raise NumericalError("log of a non-positive value (pass floor= to clamp)")
        arg = x.data
    else:
        arg = np.maximum(x.data, floor)
    out = Tensor(np.log(arg))
    tape = _tape()
    if tape is not None:

        def vjp(g, needs):
            gx = g / arg
            if floor is not None:
                gx = np.where(x.data >= floor, gx, 0.0)
            return (gx,)

        tape._record(out, (x,), vjp)
    return out


def mean(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.asarray(x.data.mean()))
    tape = _tape()
    if tape is not None:
        n = x.data.size

        def vjp(g, needs):
            return (np.full_like(x.data, float(g) / n),)

        tape._record(out, (x,), vjp)
    return out


def sum_elems(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.asarray(x.data.sum()))
    tape = _tape()
    if tape is not None:
        tape._record(out, (x,), lambda g, needs: (np.full_like(x.data, float(g)),))
    return out


def sum_of_squares(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.asarray((x.data * x.data).sum()))
    tape = _tape()
    if tape is not None:
        tape._record(out, (x,), lambda g, needs: (2.0 * float(g) * x.data,))
    return out


def dropout(x, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask)
    tape = _tape()
    if tape is not None:
        tape._record(out, (x,), lambda g, needs: (g * mask,))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Functional alias for :meth:`Tape.backward`."""
    tape.backward(loss)


# ---------------------------------------------------------------------------
# parameter store


class ParameterStore:
    """Ordered, named collection of trainable tensors.

    Insertion order is the canonical order for checkpoints, flattened
    vectors, and optimizer state. ``weight_decay`` marks the tensors that
    the L2 regularizer covers (weight matrices, not biases).
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._decay: dict[str, bool] = {}

    def add(self, name: str, data, weight_decay: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._decay[name] = bool(weight_decay)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def decayed_tensors(self) -> list[Tensor]:
        return [t for n, t in self._params.items() if self._decay[n]]

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_coords(self) -> int:
        return sum(t.size for t in self._params.values())

    def get_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def set_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self._params.items():
            a = np.asarray(arrays[n], dtype=np.float64)
            if a.shape != t.data.shape:
                raise ShapeError(f"parameter {n!r}: stored shape {a.shape} != expected {t.data.shape}")
            t.data = a.copy()


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, params, eps: float = 1e-5, max_coords: int = 200,
               rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` is a zero-argument callable returning a scalar Tensor; it is run
    once under a fresh tape for the analytic side and twice per probed
    coordinate (no tape) for the numeric side, so it must be deterministic.
    ``params`` is a ParameterStore or an iterable of tensors. All coordinates
    are probed unless there are more than ``max_coords``, in which case a
    seeded random subsample of ``max_coords`` is used. Returns the max over
    probed coordinates of |g_a - g_n| / max(1e-8, |g_a| + |g_n|).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    tensors = params.tensors() if isinstance(params, ParameterStore) else list(params)
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data):
        raise NumericalError("grad_check: objective is not finite")
    tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    coords = [(i, j) for i, t in enumerate(tensors) for j in range(t.size)]
    if len(coords) > max_coords:
        if rng is None:
            rng = np.random.Generator(np.random.Philox(0))
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(k)] for k in picked]

    worst = 0.0
    for ti, j in coords:
        t = tensors[ti]
        orig = t.data.flat[j]
        t.data.flat[j] = orig + eps
        fp = float(f().data)
        t.data.flat[j] = orig - eps
        fm = float(f().data)
        t.data.flat[j] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError("grad_check: perturbed objective is not finite")
        g_n = (fp - fm) / (2.0 * eps)
        g_a = float(analytic[ti].flat[j])
        rel = abs(g_a - g_n) / max(1e-8, abs(g_a) + abs(g_n))
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment estimates plus step counter for one parameter list."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        tensors = params.tensors() if isinstance(params, ParameterStore) else list(params)
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                   m=[np.zeros_like(t.data) for t in tensors],
                   v=[np.zeros_like(t.data) for t in tensors])


def adam_step(params, grads, state: AdamState) -> None:
    """One bias-corrected Adam update, in place.

    ``grads`` may be None, in which case each tensor's ``.grad`` is used
    (a missing gradient counts as zero). A non-finite gradient raises
    NumericalError so training aborts instead of silently diverging.
    """
    tensors = params.tensors() if isinstance(params, ParameterStore) else list(params)
    if grads is None:
        grads = [t.grad for t in tensors]
    if len(grads) != len(tensors) or len(state.m) != len(tensors):
        raise ShapeError(f"adam_step: {len(tensors)} params vs {len(grads)} grads "
                         f"vs state of {len(state.m)}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for i, (t, g) in enumerate(zip(tensors, grads)):
        if g is None:
            g = np.zeros_like(t.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != t.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {t.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {i}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        t.data = t.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# checkpoint file: JSON manifest + little-endian float64 blobs


def save_checkpoint(path, store: ParameterStore, config: dict) -> None:
    """Write a manifest (names, shapes, dtype, config) followed by raw blobs."""
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "dtype": "float64",
        "byte_order": "little",
        "params": [{"name": n, "shape": list(t.data.shape)} for n, t in store.items()],
        "config": config,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in store.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back into (name -> array in manifest order, config)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad magic in checkpoint {path}")
    (blob_len,) = struct.unpack("<I", raw[4:8])
    manifest = json.loads(raw[8:8 + blob_len].decode("utf-8"))
    if manifest["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest['format_version']}")
    offset = 8 + blob_len
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"truncated checkpoint {path}: parameter {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"trailing bytes in checkpoint {path}")
    return arrays, manifest["config"]
