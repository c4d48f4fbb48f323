"""Define-by-run reverse-mode differentiation over :mod:`ssmctb.tensor` operations.

Every forward pass builds a fresh :class:`Tape`.  Parameters enter the tape
through :meth:`Tape.param`; each primitive appends one node holding its input
ids and a vector-Jacobian closure.  :func:`backward` walks the nodes in
reverse and returns a gradient for every registered parameter.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T


class Tape:
    """Ordered record of primitive applications (topological by construction)."""

    def __init__(self) -> None:
        self.nodes: list[tuple[int, tuple[int | None, ...], Callable]] = []
        self.params: dict[str, "Var"] = {}
        self._next_id = 0

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def param(self, name: str, value) -> "Var":
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        v = Var(T.as_tensor(value), self)
        self.params[name] = v
        return v

    def params_from(self, store: Mapping[str, np.ndarray]) -> dict[str, "Var"]:
        return {k: self.param(k, v) for k, v in store.items()}

    def record(self, value: np.ndarray, parents: Sequence["Var | np.ndarray"], vjp: Callable) -> "Var":
        out = Var(value, self)
        ids = tuple(p.id if isinstance(p, Var) else None for p in parents)
        self.nodes.append((out.id, ids, vjp))
        return out


class Var:
    """A tensor value tied to one tape."""

    __slots__ = ("value", "id", "tape")
    __array_priority__ = 1000  # make ndarray <op> Var dispatch to Var

    def __init__(self, value: np.ndarray, tape: Tape) -> None:
        self.value = value
        self.tape = tape
        self.id = tape._new_id()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)

    def reshape(self, *shape):
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return reshape(self, shape)


# -- helpers ----------------------------------------------------------------

def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else T.as_tensor(x)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _emit(out: np.ndarray, parents, vjp) -> "Var | np.ndarray":
    tape = _tape_of(*parents)
    if tape is None:
        return out
    for p in parents:
        if isinstance(p, Var) and p.tape is not tape:
            raise ValueError("operands belong to different tapes")
    return tape.record(out, parents, vjp)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise --------------------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    out = T.add(av, bv)
    return _emit(out, (a, b), lambda g: (unbroadcast(g, av.shape), unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    out = T.add(av, -bv)
    return _emit(out, (a, b), lambda g: (unbroadcast(g, av.shape), unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    out = T.mul(av, bv)
    return _emit(out, (a, b), lambda g: (unbroadcast(g * bv, av.shape), unbroadcast(g * av, bv.shape)))


def square(a):
    av = value(a)
    return _emit(av * av, (a,), lambda g: (2.0 * av * g,))


def relu(a):
    av = value(a)
    out = T.relu(av)
    # derivative at exactly 0 is taken as 0
    return _emit(out, (a,), lambda g: (g * (av > 0),))


def sigmoid(a):
    out = T.sigmoid(value(a))
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


# -- reductions and shape ops -------------------------------------------------

def total(a):
    av = value(a)
    return _emit(np.asarray(av.sum()), (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def mean(a, axes: Sequence[int] | int | None = None, keepdims: bool = False):
    av = value(a)
    out = T.mean_over_axes(av, axes, keepdims)
    count = av.size // max(out.size, 1)

    def vjp(g):
        g = np.asarray(g)
        if axes is not None and not keepdims:
            ax = (axes,) if isinstance(axes, int) else tuple(axes)
            ax = tuple(sorted(i % av.ndim for i in ax))
            for i in ax:
                g = np.expand_dims(g, i)
        return (np.broadcast_to(g, av.shape) / count,)

    return _emit(out, (a,), vjp)


def reshape(a, shape: Sequence[int]):
    av = value(a)
    out = T.reshape(av, shape)
    return _emit(out, (a,), lambda g: (g.reshape(av.shape),))


def transpose(a, axes: Sequence[int] | None = None):
    av = value(a)
    axes = tuple(reversed(range(av.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = T.transpose(av, axes)
    return _emit(out, (a,), lambda g: (np.transpose(g, inv),))


def swap_last(a):
    nd = value(a).ndim
    axes = list(range(nd))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def stack(xs: Sequence, axis: int = 0):
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))

    return _emit(out, tuple(xs), vjp)


def pad_zero(a, pads):
    av = value(a)
    out = T.pad_zero(av, pads)
    widths = [(p, p) if isinstance(p, (int, np.integer)) else tuple(p) for p in pads]
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, av.shape))
    return _emit(out, (a,), lambda g: (g[sl],))


def adaptive_avg_pool(a, target: Sequence[int]):
    av = value(a)
    out = T.adaptive_avg_pool(av, target)
    nsp = len(target)
    first = av.ndim - 1 - nsp

    def vjp(g):
        for i, t in enumerate(target):
            ax = first + i
            m = T.pool_matrix(av.shape[ax], t)
            g = np.moveaxis(np.tensordot(m.T, g, axes=([1], [ax])), 0, ax)
        return (g,)

    return _emit(out, (a,), vjp)


def upsample_nearest(a, factor: int, dims: int):
    """Repeat each spatial cell ``factor`` times along the ``dims`` axes before channels."""
    av = value(a)
    out = av
    first = av.ndim - 1 - dims
    for ax in range(first, first + dims):
        out = np.repeat(out, factor, axis=ax)

    def vjp(g):
        shape = list(av.shape[:first])
        for ax in range(first, first + dims):
            shape += [av.shape[ax], factor]
        shape.append(av.shape[-1])
        red = tuple(first + 2 * i + 1 for i in range(dims))
        return (g.reshape(shape).sum(axis=red),)

    return _emit(out, (a,), vjp)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    av, bv = value(a), value(b)
    out = T.matmul(av, bv)

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return unbroadcast(ga, av.shape), unbroadcast(gb, bv.shape)

    return _emit(out, (a, b), vjp)


def mix_rows(a, b):
    """Like :func:`matmul`, but the forward sums ignore the order along the shared axis."""
    av, bv = value(a), value(b)
    out = T.mix_rows(av, bv)

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return unbroadcast(ga, av.shape), unbroadcast(gb, bv.shape)

    return _emit(out, (a, b), vjp)


def softmax_rows(a):
    s = T.softmax_rows(value(a))
    return _emit(s, (a,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def layer_norm(a, gamma, beta, eps: float = 1e-5):
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    av, gv, bv = value(a), value(gamma), value(beta)
    mu = av.mean(axis=-1, keepdims=True)
    xc = av - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gv + bv

    def vjp(g):
        gx = g * gv
        n = av.shape[-1]
        ga = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
        return ga, unbroadcast(g * xhat, gv.shape), unbroadcast(g, bv.shape)

    return _emit(out, (a, gamma, beta), vjp)


def conv(x, w, offsets: np.ndarray, stride: int = 1):
    """Convolution over an arbitrary set of kernel offsets.

    ``x`` is ``(N, *spatial, cin)``, ``w`` is ``(K, cin, cout)`` and
    ``offsets`` is a ``K x D`` integer array of taps relative to the kernel
    centre.  Offsets must be symmetric about the centre; the input is
    zero-padded by the largest absolute offset on every side, so with stride 1
    the output has the input's spatial extents.  No bias.
    """
    xv, wv = value(x), value(w)
    offsets = np.asarray(offsets, dtype=np.int64)
    K, D = offsets.shape
    if xv.ndim != D + 2:
        raise ValueError(f"input rank {xv.ndim} does not match {D} spatial dims plus batch and channels")
    if wv.shape[:2] != (K, xv.shape[-1]):
        raise ValueError(f"weight shape {wv.shape} does not fit {K} taps over {xv.shape[-1]} channels")
    pad = int(np.abs(offsets).max()) if K else 0
    n, cin, cout = xv.shape[0], xv.shape[-1], wv.shape[-1]
    sp = xv.shape[1:-1]
    osp = tuple((s - 1) // stride + 1 for s in sp)
    xp = np.pad(xv, [(0, 0)] + [(pad, pad)] * D + [(0, 0)])

    def tap_slice(off):
        return (slice(None),) + tuple(
            slice(pad + o, pad + o + stride * (m - 1) + 1, stride) for o, m in zip(off, osp)
        ) + (slice(None),)

    slices = [tap_slice(off) for off in offsets]
    cols = np.empty((n, *osp, K, cin))
    for k, sl in enumerate(slices):
        cols[..., k, :] = xp[sl]
    cols2 = cols.reshape(-1, K * cin)
    w2 = wv.reshape(K * cin, cout)
    out = (cols2 @ w2).reshape(n, *osp, cout)

    def vjp(g):
        g2 = g.reshape(-1, cout)
        gw = (cols2.T @ g2).reshape(wv.shape)
        gcols = (g2 @ w2.T).reshape(n, *osp, K, cin)
        gxp = np.zeros_like(xp)
        for k, sl in enumerate(slices):
            gxp[sl] += gcols[..., k, :]
        inner = (slice(None),) + tuple(slice(pad, pad + s) for s in sp) + (slice(None),)
        return gxp[inner], gw

    return _emit(out, (x, w), vjp)


def mse(a, b):
    return mean(square(sub(a, b)))


# -- backward -----------------------------------------------------------------

def backward(output: Var, tape: Tape | None = None) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``output`` w.r.t. every parameter registered on its tape.

    Parameters the output does not depend on get a zero gradient.
    """
    if not isinstance(output, Var):
        raise TypeError("backward needs a Var produced on a tape")
    tape = tape or output.tape
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {output.id: np.ones_like(output.value)}
    for out_id, parent_ids, vjp in reversed(tape.nodes):
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for pid, pg in zip(parent_ids, vjp(g)):
            if pid is None:
                continue
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = np.array(pg, dtype=np.float64)
    out = {}
    for name, v in tape.params.items():
        g = grads.get(v.id)
        out[name] = np.zeros_like(v.value) if g is None else np.asarray(g, dtype=np.float64).reshape(v.shape)
    return out


def value_and_grad(f: Callable[[dict[str, Var]], Var], params: Mapping[str, np.ndarray]):
    tape = Tape()
    out = f(tape.params_from(params))
    grads = backward(out, tape)
    return out.value.item(), grads


# -- finite-difference check --------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_path: str | None = None
    worst_index: tuple[int, ...] | None = None
    failure: str | None = None
    checked: int = 0
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failure is None

    def passed(self, tol: float = 1e-4) -> bool:
        return self.ok and self.max_rel_error < tol


def grad_check(
    f: Callable[[dict[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    max_elements: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` with central differences.

    The error per element is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``; the
    report carries the maximum.  ``max_elements`` caps the probes per
    parameter (sampled with ``seed``); by default every element is probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = {k: T.as_tensor(v).copy() for k, v in params.items()}

    def evaluate(store) -> float:
        tape = Tape()
        return np.asarray(value(f(tape.params_from(store)))).item()

    f0, grads = value_and_grad(f, base)
    if not np.isfinite(f0):
        return GradCheckReport(float("inf"), failure="f is not finite at the base point")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0)
    for name, arr in base.items():
        flat_idx = np.arange(arr.size)
        if max_elements is not None and arr.size > max_elements:
            flat_idx = np.sort(rng.choice(arr.size, size=max_elements, replace=False))
        worst = 0.0
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + step
            fp = evaluate(base)
            arr[idx] = orig - step
            fm = evaluate(base)
            arr[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                report.failure = f"non-finite f while probing {name}{list(idx)}"
                report.worst_path = name
                report.max_rel_error = float("inf")
                return report
            g_fd = (fp - fm) / (2.0 * step)
            g_ad = float(grads[name][idx])
            err = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
            report.checked += 1
            worst = max(worst, err)
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst_path = name
                report.worst_index = tuple(int(i) for i in idx)
        report.per_param[name] = worst
    return report


def numeric_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    x = T.as_tensor(x).copy()
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = fn(x)
        x[idx] = orig - step
        fm = fn(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * step)
    return g

