"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Values live on an explicit :class:`Tape`. Leaves are created with
``tape.leaf(array)``; constants (no gradient) with :func:`const`. Every
primitive op computes its forward value eagerly and records a
vector-Jacobian closure on the tape, so the record order is already
topological. ``backward(tape, loss)`` accumulates gradients additively
across fan-out into the ``.grad`` slot of every tensor that influenced
the loss. A tape can be walked backward once; build a fresh tape per
training step (or call ``tape.reset()``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError


class Tensor:
    """A float64 ndarray plus a gradient slot, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "grad", "label")

    def __init__(self, data, tape: "Tape | None" = None, label: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.grad: np.ndarray | None = None
        self.label = label

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.tape is None:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        tag = f" label={self.label!r}" if self.label else ""
        return f"Tensor(shape={self.data.shape}{tag})"


class Tape:
    """Ordered record of primitive ops; one backward pass per reset."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []
        self._leaves: list[Tensor] = []
        self._spent = False

    def leaf(self, data, label: str | None = None) -> Tensor:
        t = Tensor(data, tape=self, label=label)
        self._leaves.append(t)
        return t

    def record(self, out: Tensor, vjp) -> None:
        self._nodes.append((out, vjp))

    def backward(self, loss: Tensor) -> None:
        if loss.tape is not self:
            raise UsageError("loss tensor is not recorded on this tape")
        if loss.ndim != 0:
            raise UsageError(f"loss must be a scalar, got shape {loss.shape}")
        if self._spent:
            raise UsageError(
                "backward() already ran on this tape; call reset() or build a new tape"
            )
        self._spent = True
        loss.grad = np.ones((), dtype=np.float64)
        for out, vjp in reversed(self._nodes):
            if out.grad is not None:
                vjp(out.grad)

    def reset(self) -> None:
        """Zero every gradient slot and allow a new backward pass."""
        for out, _ in self._nodes:
            out.grad = None
        for leaf in self._leaves:
            leaf.grad = None
        self._spent = False


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def const(data) -> Tensor:
    """A tensor that participates in the forward pass but receives no gradient."""
    return Tensor(data, tape=None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else const(x)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise UsageError("operands were recorded on different tapes")
    return tape


def _emit(data: np.ndarray, tape: Tape | None, vjps) -> Tensor:
    """vjps: list of (parent, fn grad_out -> grad_parent)."""
    out = Tensor(data, tape=tape)
    if tape is not None:

        def vjp(g: np.ndarray) -> None:
            for parent, fn in vjps:
                if parent.tape is not None:
                    parent._accumulate(fn(g))

        tape.record(out, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g back down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data + b.data,
        _tape_of(a, b),
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data - b.data,
        _tape_of(a, b),
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(-g, b.shape))],
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data * b.data,
        _tape_of(a, b),
        [
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ],
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data / b.data,
        _tape_of(a, b),
        [
            (a, lambda g: _unbroadcast(g / b.data, a.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        ],
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, _tape_of(a), [(a, lambda g: -g)])


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data
    if a.ndim == 2 and b.ndim == 2:
        vjps = [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)]
    elif a.ndim == 2 and b.ndim == 1:
        vjps = [(a, lambda g: np.outer(g, b.data)), (b, lambda g: a.data.T @ g)]
    elif a.ndim == 1 and b.ndim == 2:
        vjps = [(a, lambda g: b.data @ g), (b, lambda g: np.outer(a.data, g))]
    elif a.ndim == 1 and b.ndim == 1:
        vjps = [(a, lambda g: g * b.data), (b, lambda g: g * a.data)]
    else:
        raise ConfigurationError(
            f"matmul supports 1D/2D operands, got shapes {a.shape} and {b.shape}"
        )
    return _emit(data, _tape_of(a, b), vjps)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def make_vjp(i):
        return lambda g: np.split(g, splits, axis=axis)[i]

    return _emit(
        np.concatenate([t.data for t in tensors], axis=axis),
        _tape_of(*tensors),
        [(t, make_vjp(i)) for i, t in enumerate(tensors)],
    )


def narrow(a, start: int, length: int, axis: int = -1) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def vjp(g):
        out = np.zeros(a.shape, dtype=np.float64)
        out[idx] = g
        return out

    return _emit(a.data[idx], _tape_of(a), [(a, vjp)])


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data.reshape(shape), _tape_of(a), [(a, lambda g: g.reshape(a.shape))])


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data.sum(), _tape_of(a), [(a, lambda g: np.full(a.shape, float(g)))])


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign to avoid overflow in exp
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _emit(s, _tape_of(a), [(a, lambda g: g * s * (1.0 - s))])


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _emit(t, _tape_of(a), [(a, lambda g: g * (1.0 - t * t))])


def relu(a) -> Tensor:
    a = as_tensor(a)
    # derivative at exactly 0 is defined as 0
    mask = a.data > 0.0
    return _emit(np.where(mask, a.data, 0.0), _tape_of(a), [(a, lambda g: g * mask)])


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _emit(e, _tape_of(a), [(a, lambda g: g * e)])


def log(a) -> Tensor:
    a = as_tensor(a)
    return _emit(np.log(a.data), _tape_of(a), [(a, lambda g: g / a.data)])


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    r = np.sqrt(a.data)
    return _emit(r, _tape_of(a), [(a, lambda g: g / (2.0 * r))])


def square(a) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data * a.data, _tape_of(a), [(a, lambda g: g * 2.0 * a.data)])


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through inside the interval."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit(np.clip(a.data, lo, hi), _tape_of(a), [(a, lambda g: g * inside)])


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activate(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {kind!r}, expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(x)


def affine(x, w, b) -> Tensor:
    """w @ x + b for a 1D x, or x @ w.T + b row-wise for a 2D batch x."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    m, n = w.shape
    if x.ndim == 1:
        if x.shape != (n,) or b.shape != (m,):
            raise ConfigurationError(
                f"affine shapes disagree: w {w.shape}, x {x.shape}, b {b.shape}"
            )
        return add(matmul(w, x), b)
    if x.ndim != 2 or x.shape[1] != n or b.shape != (m,):
        raise ConfigurationError(
            f"affine shapes disagree: w {w.shape}, x {x.shape}, b {b.shape}"
        )
    return add(matmul(x, transpose(w)), b)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data.T, _tape_of(a), [(a, lambda g: g.T)])


REL_ERR_FLOOR = 1e-8


def rel_err(a: float, b: float) -> float:
    """|a-b| / max(|a|, |b|, 1e-8); 0 when both vanish."""
    return abs(a - b) / max(abs(a), abs(b), REL_ERR_FLOOR)


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    analytic_at_worst: float
    fd_at_worst: float
    per_param: dict

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol

    def __str__(self) -> str:
        lines = [
            f"max relative error {self.max_rel_err:.3e} "
            f"at {self.worst_param}{list(self.worst_index)} "
            f"(analytic {self.analytic_at_worst:.6e}, fd {self.fd_at_worst:.6e})"
        ]
        for name, err in sorted(self.per_param.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def _forward_value(f, arrays: dict) -> tuple[float, Tape, dict]:
    tape = Tape()
    leaves = {k: tape.leaf(v, label=k) for k, v in arrays.items()}
    out = f(leaves)
    if not isinstance(out, Tensor) or out.ndim != 0:
        raise UsageError("finite_diff_check expects f to return a scalar Tensor")
    return float(out.data), tape, leaves


def finite_diff_check(f, params: dict, step: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of f against central finite differences.

    f receives a dict name -> leaf Tensor (fresh tape per call) and returns a
    scalar Tensor. Raises UsageError when two evaluations at the same point
    disagree, since finite differences are meaningless for nondeterministic f.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    v0, tape, leaves = _forward_value(f, arrays)
    v1, _, _ = _forward_value(f, arrays)
    if v0 != v1:
        raise UsageError(
            f"f is not deterministic: two evaluations gave {v0!r} and {v1!r}"
        )

    # analytic gradients via one reverse sweep
    tape2 = Tape()
    leaves2 = {k: tape2.leaf(v, label=k) for k, v in arrays.items()}
    out = f(leaves2)
    tape2.backward(out)
    analytic = {
        k: (t.grad if t.grad is not None else np.zeros(t.shape)) for k, t in leaves2.items()
    }

    worst = (0.0, "", (), 0.0, 0.0)
    per_param: dict[str, float] = {}
    for name, base in arrays.items():
        param_worst = 0.0
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp, _, _ = _forward_value(f, arrays)
            flat[i] = orig - step
            fm, _, _ = _forward_value(f, arrays)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * step)
            an = float(analytic[name].reshape(-1)[i])
            err = rel_err(fd, an)
            if err > param_worst:
                param_worst = err
            if err > worst[0]:
                worst = (err, name, np.unravel_index(i, base.shape), an, fd)
        per_param[name] = param_worst

    return GradCheckReport(
        max_rel_err=worst[0],
        worst_param=worst[1],
        worst_index=worst[2],
        analytic_at_worst=worst[3],
        fd_at_worst=worst[4],
        per_param=per_param,
    )
