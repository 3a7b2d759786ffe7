"""Small reverse-mode autodiff kernel over float64 numpy arrays.

Operations record themselves on the active :class:`Tape` (if any). Gradients
are kept on the tape rather than on shared parameter tensors, so several
threads can run forward/backward passes against the same parameters.

>>> W = Tensor([[1.0, 2.0], [3.0, 4.0]])
>>> x = Tensor([1.0, 1.0])
>>> with Tape() as tape:
...     y = total(linear(W, x))
>>> tape.backward(y)
>>> tape.grad(x).tolist()
[4.0, 6.0]
"""

from __future__ import annotations

import contextvars
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .exceptions import ContractViolation, DimensionError

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: Optional[str] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Records operations executed while it is the active tape.

    Recorded nodes keep their tensors alive, so gradients keyed by ``id`` stay
    valid for the lifetime of the tape. Use one tape per backward pass.
    """

    def __init__(self):
        self._nodes = []
        self._grads: dict = {}
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        """``backward(g_out)`` must return one gradient (or None) per input."""
        self._nodes.append((out, tuple(inputs), backward))

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._grads:
            raise ContractViolation("backward already ran on this tape")
        grads = self._grads
        grads[id(loss)] = np.ones_like(loss.value)
        for out, inputs, fn in reversed(self._nodes):
            g = grads.get(id(out))
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None:
                    continue
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi

    def grad(self, tensor: Tensor) -> np.ndarray:
        g = self._grads.get(id(tensor))
        return np.zeros_like(tensor.value) if g is None else g

    def accumulate_into(self, tensors: Iterable[Tensor]) -> None:
        """Add tape gradients into each tensor's own ``grad`` buffer."""
        for t in tensors:
            g = self.grad(t)
            t.grad = g.copy() if t.grad is None else t.grad + g


def _record(out: Tensor, inputs, backward) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _record(Tensor(a.value + b.value), (a, b), lambda g: (g, g))


def add_rows(m: Tensor, v: Tensor) -> Tensor:
    """Add vector ``v`` to every row of matrix ``m``."""
    if m.value.ndim != 2 or v.shape != (m.shape[1],):
        raise DimensionError(f"add_rows: shapes {m.shape} and {v.shape} incompatible")
    return _record(Tensor(m.value + v.value), (m, v), lambda g: (g, g.sum(axis=0)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    return _record(Tensor(av * bv), (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    return _record(Tensor(a.value * c), (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return _record(Tensor(y), (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)
    return _record(Tensor(y), (a,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(x):
    # split by sign to avoid exp overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log(a: Tensor) -> Tensor:
    av = a.value
    return _record(Tensor(np.log(av)), (a,), lambda g: (g / av,))


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(Tensor(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def sum_squares(a: Tensor) -> Tensor:
    av = a.value
    return _record(Tensor(np.dot(av.ravel(), av.ravel())), (a,), lambda g: (2.0 * float(g) * av,))


def pick(a: Tensor, index) -> Tensor:
    """Scalar element ``a[index]``."""
    shape = a.shape

    def backward(g):
        ga = np.zeros(shape)
        ga[index] = g
        return (ga,)

    return _record(Tensor(a.value[index]), (a,), backward)


# --------------------------------------------------------------------------
# shape manipulation


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(Tensor(y), tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors as matrix rows."""
    tensors = list(tensors)
    y = np.stack([t.value for t in tensors])
    return _record(Tensor(y), tensors, lambda g: tuple(g))


def tile_rows(v: Tensor, n: int) -> Tensor:
    y = np.broadcast_to(v.value, (n,) + v.shape).copy()
    return _record(Tensor(y), (v,), lambda g: (g.sum(axis=0),))


def gather_rows(m: Tensor, index) -> Tensor:
    """Rows ``m[index]``; used for embedding lookup and candidate selection."""
    index = np.asarray(index, dtype=np.intp)
    shape = m.shape

    def backward(g):
        gm = np.zeros(shape)
        np.add.at(gm, index, g)
        return (gm,)

    return _record(Tensor(m.value[index]), (m,), backward)


def row(m: Tensor, i: int) -> Tensor:
    shape = m.shape

    def backward(g):
        gm = np.zeros(shape)
        gm[i] = g
        return (gm,)

    return _record(Tensor(m.value[i]), (m,), backward)


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 1-D and 2-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not agree")
    y = av @ bv

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:  # matrix @ vector
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:  # vector @ matrix
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return _record(Tensor(y), (a, b), backward)


def linear(W: Tensor, x: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``W x + b``; if ``x`` is a matrix its rows are treated as inputs."""
    Wv, xv = W.value, x.value
    if Wv.ndim != 2 or xv.ndim not in (1, 2) or xv.shape[-1] != Wv.shape[1]:
        raise DimensionError(f"linear: W {W.shape} and x {x.shape} do not agree")
    if b is not None and b.shape != (Wv.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match W {W.shape}")
    y = xv @ Wv.T if xv.ndim == 2 else Wv @ xv
    if b is not None:
        y = y + b.value
    inputs = (W, x) if b is None else (W, x, b)

    def backward(g):
        if xv.ndim == 2:
            grads = (g.T @ xv, g @ Wv)
            gb = g.sum(axis=0)
        else:
            grads = (np.outer(g, xv), Wv.T @ g)
            gb = g
        return grads if b is None else grads + (gb,)

    return _record(Tensor(y), inputs, backward)


# --------------------------------------------------------------------------
# softmax


def masked_softmax(scores: Tensor, mask=None) -> Tensor:
    """Softmax over the entries where ``mask`` is true; exactly 0 elsewhere."""
    s = scores.value
    if s.ndim != 1:
        raise DimensionError(f"masked_softmax expects a vector, got {scores.shape}")
    if mask is None:
        mask = np.ones(s.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != s.shape:
        raise DimensionError(f"masked_softmax: mask {mask.shape} vs scores {s.shape}")
    if not mask.any():
        raise ContractViolation("masked_softmax needs at least one unmasked entry")
    sup = s[mask]
    e = np.exp(sup - sup.max())
    y = np.zeros_like(s)
    y[mask] = e / e.sum()

    def backward(g):
        return (y * (g - np.dot(g, y)),)

    return _record(Tensor(y), (scores,), backward)


# --------------------------------------------------------------------------
# dropout


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractViolation("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(Tensor(x.value * keep), (x,), lambda g: (g * keep,))


# --------------------------------------------------------------------------
# GRU


@dataclass
class GruCellParams:
    """Weights of one GRU cell; every gate reads ``[x; h]``."""

    input_dim: int
    hidden_dim: int
    W_z: Tensor
    b_z: Tensor
    W_r: Tensor
    b_r: Tensor
    W_h: Tensor
    b_h: Tensor

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int, prefix: str = "") -> "GruCellParams":
        def z(*shape, name):
            return Tensor(np.zeros(shape), prefix + name)

        n = input_dim + hidden_dim
        return cls(
            input_dim, hidden_dim,
            z(hidden_dim, n, name="W_z"), z(hidden_dim, name="b_z"),
            z(hidden_dim, n, name="W_r"), z(hidden_dim, name="b_r"),
            z(hidden_dim, n, name="W_h"), z(hidden_dim, name="b_h"),
        )

    @classmethod
    def random(cls, input_dim, hidden_dim, rng, prefix: str = "") -> "GruCellParams":
        cell = cls.zeros(input_dim, hidden_dim, prefix)
        bound = 1.0 / np.sqrt(hidden_dim)
        for W in (cell.W_z, cell.W_r, cell.W_h):
            W.value[...] = rng.uniform(-bound, bound, W.shape)
        return cell

    def tensors(self) -> list[Tensor]:
        return [self.W_z, self.b_z, self.W_r, self.b_r, self.W_h, self.b_h]

    def check(self) -> None:
        n = self.input_dim + self.hidden_dim
        for W in (self.W_z, self.W_r, self.W_h):
            if W.shape != (self.hidden_dim, n):
                raise DimensionError(f"GRU weight {W.name} has shape {W.shape}, expected {(self.hidden_dim, n)}")
        for b in (self.b_z, self.b_r, self.b_h):
            if b.shape != (self.hidden_dim,):
                raise DimensionError(f"GRU bias {b.name} has shape {b.shape}")


def gru_cell(p: GruCellParams, x: Tensor, h: Tensor) -> Tensor:
    """One GRU step: ``h' = (1 - z) * h + z * tanh(W_h [x; r * h] + b_h)``."""
    xv, hv = x.value, h.value
    if xv.shape != (p.input_dim,) or hv.shape != (p.hidden_dim,):
        raise DimensionError(
            f"gru_cell: x {x.shape}, h {h.shape} for cell ({p.input_dim}, {p.hidden_dim})"
        )
    n_in = p.input_dim
    Wz, Wr, Wh = p.W_z.value, p.W_r.value, p.W_h.value
    xh = np.concatenate([xv, hv])
    z = _sigmoid(Wz @ xh + p.b_z.value)
    r = _sigmoid(Wr @ xh + p.b_r.value)
    xrh = np.concatenate([xv, r * hv])
    c = np.tanh(Wh @ xrh + p.b_h.value)
    out = (1.0 - z) * hv + z * c

    def backward(g):
        gz = g * (c - hv) * z * (1.0 - z)
        gc = g * z * (1.0 - c * c)
        gxrh = Wh.T @ gc
        gr = gxrh[n_in:] * hv * r * (1.0 - r)
        gxh = Wz.T @ gz + Wr.T @ gr
        gx = gxh[:n_in] + gxrh[:n_in]
        gh = g * (1.0 - z) + gxh[n_in:] + gxrh[n_in:] * r
        return (
            gx, gh,
            np.outer(gz, xh), gz,
            np.outer(gr, xh), gr,
            np.outer(gc, xrh), gc,
        )

    inputs = (x, h, p.W_z, p.b_z, p.W_r, p.b_r, p.W_h, p.b_h)
    return _record(Tensor(out), inputs, backward)


def gru_sequence(p: GruCellParams, xs: Tensor, reverse: bool = False, h0: Optional[Tensor] = None) -> list[Tensor]:
    """Run a cell over the rows of ``xs``; states are returned in input order."""
    h = h0 if h0 is not None else Tensor(np.zeros(p.hidden_dim))
    n = xs.shape[0]
    order = range(n - 1, -1, -1) if reverse else range(n)
    states: list = [None] * n
    for t in order:
        h = gru_cell(p, row(xs, t), h)
        states[t] = h
    return states


# --------------------------------------------------------------------------
# finite differences


@dataclass
class GradCheckReport:
    checked: int = 0
    max_error: float = 0.0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` with central differences.

    ``f`` must be deterministic (no dropout). Error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``. Tensors larger than
    ``max_coords`` are checked on a random subsample of coordinates.
    """
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    report = GradCheckReport()
    rng = rng if rng is not None else np.random.default_rng(0)
    for k, p in enumerate(params):
        analytic = tape.grad(p)
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        for i in coords:
            old = flat[i]
            flat[i] = old + eps
            up = float(f().value)
            flat[i] = old - eps
            down = float(f().value)
            flat[i] = old
            numeric = (up - down) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(1.0, abs(a))
            report.checked += 1
            report.max_error = max(report.max_error, err)
            if err > tol:
                name = p.name or f"param[{k}]"
                report.violations.append((name, int(i), a, numeric, err))
    return report


# --------------------------------------------------------------------------
# checkpoint container


def save_arrays(directory, arrays: Mapping[str, np.ndarray], extra: Optional[dict] = None) -> None:
    """Write ``arrays.bin`` (raw little-endian float64) and ``arrays.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(directory / "arrays.bin", "wb") as fh:
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(data.tobytes())
            entries.append({"name": name, "shape": list(data.shape), "offset": offset})
            offset += data.nbytes
    manifest = {"dtype": "<f8", "arrays": entries}
    if extra:
        manifest.update(extra)
    (directory / "arrays.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_arrays(directory) -> tuple[dict, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "arrays.json").read_text())
    raw = (directory / "arrays.bin").read_bytes()
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return arrays, manifest
