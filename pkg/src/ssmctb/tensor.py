"""Dense float64 arrays and the primitive operations the rest of the package builds on.

A tensor here is simply a C-contiguous ``numpy.ndarray`` of dtype float64 with
the channel axis last (``h x w x c`` or ``h x w x r x c``).  The functions in
this module are pure: they never modify their inputs.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

Tensor = np.ndarray

SSTB_MAGIC = b"SSTB0001"


def as_tensor(a) -> Tensor:
    """Return ``a`` as a contiguous float64 array (copying only when needed)."""
    return np.ascontiguousarray(a, dtype=np.float64)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``.

    Rank-2 operands give the standard product; leading batch axes on either
    operand are carried along as in ``numpy.matmul``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


def sorted_sum(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Sum along ``axis`` after sorting, so the result ignores the order of the terms."""
    return np.sort(as_tensor(a), axis=axis).sum(axis=axis, keepdims=keepdims)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max.

    The normaliser is an order-independent sum, so permuting a row permutes
    the output bit for bit.
    """
    a = as_tensor(a)
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / sorted_sum(e, axis=-1, keepdims=True)


def mix_rows(w: Tensor, v: Tensor) -> Tensor:
    """``w @ v`` over the last two axes with order-independent sums over the shared axis.

    Used to mix token values with attention weights: reordering the tokens
    reorders the result exactly instead of up to rounding.
    """
    w, v = as_tensor(w), as_tensor(v)
    if w.shape[-1] != v.shape[-2]:
        raise ValueError(f"mix_rows inner extents differ: {w.shape} @ {v.shape}")
    terms = w[..., :, :, None] * v[..., None, :, :]
    return sorted_sum(terms, axis=-2)


def relu(a: Tensor) -> Tensor:
    return np.maximum(as_tensor(a), 0.0)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _check_broadcast(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return a + b


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return a * b


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    return np.ascontiguousarray(np.transpose(as_tensor(a), axes))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if -1 not in shape and int(np.prod(shape)) != a.size:
        raise ValueError(f"cannot reshape {a.shape} ({a.size} elements) to {shape}")
    return a.reshape(shape)


def mean_over_axes(a: Tensor, axes: Sequence[int] | int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if isinstance(axes, int):
        axes = (axes,)
    return np.asarray(a.mean(axis=None if axes is None else tuple(axes), keepdims=keepdims))


def pad_zero(a: Tensor, pads: Sequence[int | tuple[int, int]]) -> Tensor:
    """Surround ``a`` with zeros; ``pads[i]`` is either ``n`` or ``(before, after)``."""
    a = as_tensor(a)
    if len(pads) != a.ndim:
        raise ValueError(f"need one pad entry per axis ({a.ndim}), got {len(pads)}")
    widths = [(p, p) if isinstance(p, (int, np.integer)) else tuple(p) for p in pads]
    if any(lo < 0 or hi < 0 for lo, hi in widths):
        raise ValueError("pad amounts must be nonnegative")
    return np.pad(a, widths)


def pool_bounds(n: int, t: int) -> np.ndarray:
    """Boundaries splitting ``range(n)`` into ``t`` contiguous near-equal intervals."""
    if not 1 <= t <= n:
        raise ValueError(f"cannot pool extent {n} to {t}")
    return (np.arange(t + 1) * n) // t


def pool_matrix(n: int, t: int) -> np.ndarray:
    """``t x n`` averaging matrix of the floor split used by :func:`adaptive_avg_pool`."""
    b = pool_bounds(n, t)
    m = np.zeros((t, n))
    for j in range(t):
        m[j, b[j]:b[j + 1]] = 1.0 / (b[j + 1] - b[j])
    return m


def adaptive_avg_pool(a: Tensor, target: Sequence[int]) -> Tensor:
    """Average-pool the spatial axes of ``a`` down to ``target``.

    ``a`` is ``(*batch, *spatial, c)`` where the spatial axes are the
    ``len(target)`` axes immediately before the channel axis.  Axis ``i`` is
    cut into ``target[i]`` contiguous intervals whose lengths differ by at most
    one; every output cell is the mean of its interval product.
    """
    a = as_tensor(a)
    target = tuple(int(t) for t in target)
    nsp = len(target)
    if a.ndim < nsp + 1:
        raise ValueError(f"tensor of shape {a.shape} has fewer than {nsp} spatial axes plus channels")
    first = a.ndim - 1 - nsp
    for i, t in enumerate(target):
        n = a.shape[first + i]
        if t > n or t < 1:
            raise ValueError(f"target extent {t} invalid for source extent {n} on axis {first + i}")
    out = a
    for i, t in enumerate(target):
        ax = first + i
        b = pool_bounds(out.shape[ax], t)
        # interval means reduce every channel identically, whatever its position
        cells = [np.take(out, np.arange(b[j], b[j + 1]), axis=ax).mean(axis=ax, keepdims=True) for j in range(t)]
        out = np.concatenate(cells, axis=ax)
    return np.ascontiguousarray(out)


# -- SSTB1 binary format ----------------------------------------------------

def write_sstb(path: str | Path, a: Tensor) -> None:
    """Write ``a`` as SSTB1: magic, u32 rank, u64 extents, little-endian f64 payload."""
    a = as_tensor(a)
    with open(path, "wb") as fh:
        fh.write(SSTB_MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.astype("<f8", copy=False).tobytes(order="C"))


def read_sstb(path: str | Path) -> Tensor:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != SSTB_MAGIC:
        raise ValueError(f"{path}: not an SSTB1 file")
    (rank,) = struct.unpack_from("<I", raw, 8)
    shape = struct.unpack_from(f"<{rank}Q", raw, 12)
    offset = 12 + 8 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(raw) - offset != 8 * count:
        raise ValueError(f"{path}: payload holds {len(raw) - offset} bytes, expected {8 * count}")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(shape)
