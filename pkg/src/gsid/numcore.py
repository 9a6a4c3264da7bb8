"""Dense float64 tensors with a recorded-operation tape for reverse-mode gradients.

Every operation computes eagerly on numpy arrays. When a Tape is active
(via ``with Tape() as tape:``) and any input requires a gradient, the op
appends a backward closure to the tape. ``backward(tape, loss)`` replays the
records in reverse creation order exactly once, accumulating ``.grad`` on
every tensor that requires it. Without an active tape the same functions
work as plain numpy math, which is what the finite-difference checker uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumcoreError(Exception):
    pass


class ShapeError(NumcoreError):
    pass


class TapeError(NumcoreError):
    pass


class NonFiniteError(NumcoreError):
    pass


def _check_finite(arr: np.ndarray, op_name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by '{op_name}'")


class Tensor:
    """A dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape_id")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" '{self.name}'" if self.name else ""
        return f"<Tensor{tag} shape={self.shape} requires_grad={self.requires_grad}>"


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    _next_id = 0

    def __init__(self):
        self.records: list[tuple[Tensor, object]] = []
        Tape._next_id += 1
        self.tape_id = Tape._next_id

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, out: Tensor, backward_fn) -> None:
        out._tape_id = self.tape_id
        self.records.append((out, backward_fn))


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make_out(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn, op_name: str) -> Tensor:
    _check_finite(data, op_name)
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitive operations


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ w.T (+ bias), with w shaped (out_dim, in_dim)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear: x {x.data.shape} incompatible with w {w.data.shape}")
    y = x.data @ w.data.T
    if bias is not None:
        if bias.data.shape != (w.data.shape[0],):
            raise ShapeError(f"linear: bias {bias.data.shape} vs out dim {w.data.shape[0]}")
        y = y + bias.data

    def backward(g, out):
        if x.requires_grad:
            x.accumulate_grad(g @ w.data)
        if w.requires_grad:
            w.accumulate_grad(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    inputs = (x, w) if bias is None else (x, w, bias)
    return _make_out(y, inputs, backward, "linear")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}")

    def backward(g, out):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _make_out(a.data + b.data, (a, b), backward, "add")


def scale(x: Tensor, k: float) -> Tensor:
    def backward(g, out):
        if x.requires_grad:
            x.accumulate_grad(g * k)

    return _make_out(x.data * k, (x,), backward, "scale")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two 2-D tensors along columns."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"concat: {a.data.shape} vs {b.data.shape}")
    na = a.data.shape[1]

    def backward(g, out):
        if a.requires_grad:
            a.accumulate_grad(g[:, :na])
        if b.requires_grad:
            b.accumulate_grad(g[:, na:])

    return _make_out(np.concatenate([a.data, b.data], axis=1), (a, b), backward, "concat")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    def backward(g, out):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            x.accumulate_grad(full)

    return _make_out(x.data[:, start:stop].copy(), (x,), backward, "slice_cols")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    y = np.where(pos, x.data, slope * x.data)

    def backward(g, out):
        if x.requires_grad:
            x.accumulate_grad(np.where(pos, g, slope * g))

    return _make_out(y, (x,), backward, "leaky_relu")


def dropout(x: Tensor, p: float, seed: int, training: bool) -> Tensor:
    """Inverted dropout: kept entries scaled by 1/(1-p); identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise NumcoreError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        def backward_id(g, out):
            if x.requires_grad:
                x.accumulate_grad(g)

        return _make_out(x.data.copy(), (x,), backward_id, "dropout")

    rng = np.random.Generator(np.random.PCG64(seed))
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def backward(g, out):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _make_out(x.data * mask, (x,), backward, "dropout")


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.data.shape[0]} rows")

    def backward(g, out):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, idx, g)
            x.accumulate_grad(full)

    return _make_out(x.data[idx], (x,), backward, "gather_rows")


def scatter_rows(x: Tensor, idx: np.ndarray, num_rows: int) -> Tensor:
    """Rows of x accumulated into a (num_rows, cols) zero tensor at positions idx."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.shape[0] != idx.shape[0]:
        raise ShapeError(f"scatter_rows: {x.data.shape[0]} rows vs {idx.shape[0]} indices")
    y = np.zeros((num_rows,) + x.data.shape[1:], dtype=np.float64)
    np.add.at(y, idx, x.data)

    def backward(g, out):
        if x.requires_grad:
            x.accumulate_grad(g[idx])

    return _make_out(y, (x,), backward, "scatter_rows")


def gather_cols(x: Tensor, idx: np.ndarray) -> Tensor:
    """Columns idx of a (rows, V) tensor, returned as (len(idx), rows)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[1]):
        raise ShapeError(f"gather_cols: index out of range for {x.data.shape[1]} columns")

    def backward(g, out):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full.T, idx, g)
            x.accumulate_grad(full)

    return _make_out(x.data.T[idx].copy(), (x,), backward, "gather_cols")


def dot_rows(x: Tensor, v: Tensor) -> Tensor:
    """Per-row dot product of a 2-D tensor with a vector: (E, n) x (n,) -> (E,)."""
    if x.data.ndim != 2 or v.data.shape != (x.data.shape[1],):
        raise ShapeError(f"dot_rows: {x.data.shape} vs {v.data.shape}")

    def backward(g, out):
        if x.requires_grad:
            x.accumulate_grad(g[:, None] * v.data[None, :])
        if v.requires_grad:
            v.accumulate_grad(g @ x.data)

    return _make_out(x.data @ v.data, (x, v), backward, "dot_rows")


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Each row of x multiplied by the matching entry of vector s."""
    if x.data.ndim != 2 or s.data.shape != (x.data.shape[0],):
        raise ShapeError(f"scale_rows: {x.data.shape} vs {s.data.shape}")

    def backward(g, out):
        if x.requires_grad:
            x.accumulate_grad(g * s.data[:, None])
        if s.requires_grad:
            s.accumulate_grad(np.sum(g * x.data, axis=1))

    return _make_out(x.data * s.data[:, None], (x, s), backward, "scale_rows")


def segment_softmax(scores: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of scores within each segment (max-subtracted for stability)."""
    seg = np.asarray(segments, dtype=np.int64)
    if scores.data.ndim != 1 or seg.shape != scores.data.shape:
        raise ShapeError(f"segment_softmax: scores {scores.data.shape} vs segments {seg.shape}")
    if scores.data.size == 0:
        return _make_out(np.zeros(0), (scores,), lambda g, out: None, "segment_softmax")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, scores.data)
    e = np.exp(scores.data - seg_max[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    alpha = e / denom[seg]

    def backward(g, out):
        if scores.requires_grad:
            dot = np.zeros(num_segments)
            np.add.at(dot, seg, g * alpha)
            scores.accumulate_grad(alpha * (g - dot[seg]))

    return _make_out(alpha, (scores,), backward, "segment_softmax")


def sum_all(x: Tensor) -> Tensor:
    def backward(g, out):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, float(g)))

    return _make_out(np.asarray(x.data.sum()), (x,), backward, "sum_all")


def masked_cross_entropy(
    logits: list[Tensor],
    labels: np.ndarray,
    mask: np.ndarray,
    weights: np.ndarray,
) -> tuple[Tensor, dict]:
    """Mean over masked entries of weighted two-class cross-entropy.

    ``logits`` holds one (N, 2) tensor per monitored parameter; ``labels`` and
    ``mask`` are (N, C) arrays; ``weights`` is a length-C vector. Returns the
    scalar loss tensor plus an aux dict with unweighted per-parameter mean
    losses (used by the loss-balancing schedule) and an ``all_masked`` flag
    raised when the mask is empty, in which case the loss is defined as 0.
    """
    num_params = len(logits)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if labels.shape != mask.shape or labels.shape[1] != num_params or weights.shape != (num_params,):
        raise ShapeError(
            f"masked_cross_entropy: labels {labels.shape}, mask {mask.shape}, "
            f"weights {weights.shape}, {num_params} logit blocks"
        )
    n_masked = mask.sum()
    aux = {"per_param_loss": np.zeros(num_params), "masked_count": float(n_masked), "all_masked_out": n_masked == 0}

    probs: list[np.ndarray] = []
    ce_cols: list[np.ndarray] = []
    for c in range(num_params):
        z = logits[c].data
        if z.shape != (labels.shape[0], 2):
            raise ShapeError(f"masked_cross_entropy: logits[{c}] shape {z.shape}")
        zmax = z.max(axis=1, keepdims=True)
        logsum = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        picked = z[np.arange(z.shape[0]), labels[:, c].astype(np.int64)]
        ce = logsum - picked
        probs.append(np.exp(z - logsum[:, None]))
        ce_cols.append(ce)
        mc = mask[:, c].sum()
        aux["per_param_loss"][c] = float((ce * mask[:, c]).sum() / mc) if mc > 0 else 0.0

    if n_masked == 0:
        total = 0.0
    else:
        total = sum(float((ce_cols[c] * mask[:, c]).sum() * weights[c]) for c in range(num_params)) / n_masked

    def backward(g, out):
        if n_masked == 0:
            return
        for c in range(num_params):
            if not logits[c].requires_grad:
                continue
            onehot = np.zeros_like(probs[c])
            onehot[np.arange(onehot.shape[0]), labels[:, c].astype(np.int64)] = 1.0
            d = (probs[c] - onehot) * (weights[c] * mask[:, c] / n_masked)[:, None]
            logits[c].accumulate_grad(d * float(g))

    out = _make_out(np.asarray(total), tuple(logits), backward, "masked_cross_entropy")
    return out, aux


# ---------------------------------------------------------------------------
# reverse pass, optimizer, verification


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate gradients for everything reachable from loss on this tape."""
    if loss.data.ndim != 0:
        raise TapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if loss._tape_id != tape.tape_id:
        raise TapeError("backward: loss tensor was not recorded on this tape")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.records):
        if out.grad is None:
            continue
        fn(out.grad, out)


@dataclass
class AdamState:
    """Adam moments with bias correction and decoupled weight decay."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5

    @classmethod
    def for_params(cls, params: list[Tensor], **kwargs) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **kwargs,
        )


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState, lr: float) -> None:
    """One in-place Adam update; None gradients are treated as zero."""
    if len(params) != len(state.m):
        raise NumcoreError("adam_step: state does not match parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for i, p in enumerate(params):
        g = grads[i] if grads[i] is not None else np.zeros_like(p.data)
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
        _check_finite(p.data, "adam_step")


def finite_difference_check(
    f,
    params: list[Tensor],
    h: float = 1e-5,
    max_coords_per_param: int = 8,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients of f() and central differences.

    ``f`` must rebuild the scalar loss from the current parameter values on
    every call, returning a Tensor. The analytic gradient comes from one taped
    run; sampled coordinates are then perturbed by +-h and re-evaluated
    without a tape. The relative error for a coordinate is
    |analytic - central| / (|analytic| + |central| + 1e-12).
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data):
        raise NumcoreError("finite_difference_check: non-finite loss")
    backward(tape, loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = rng.permutation(n)[: min(n, max_coords_per_param)]
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = float(f().data)
            flat[c] = orig - h
            fm = float(f().data)
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumcoreError("finite_difference_check: non-finite perturbed loss")
            central = (fp - fm) / (2 * h)
            a = analytic[i].reshape(-1)[c]
            err = abs(a - central) / (abs(a) + abs(central) + 1e-12)
            worst = max(worst, err)
    return worst
