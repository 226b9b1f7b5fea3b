"""Vectorized forward-mode automatic differentiation.

A :class:`Dual` carries a value array together with a tangent array that has
one extra trailing axis, one slot per seed direction. Seeding the identity
matrix on a length-n input therefore yields the full Jacobian in a single
pass, and seeding a subset of columns yields the matching Jacobian columns.

Duals interoperate with numpy: ``np.sin(d)``, ``A @ d``, ``d ** 3`` and the
arithmetic operators all propagate tangents. Comparisons act on the value
only, which makes piecewise-constant selectors contribute zero derivative.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual",
    "value",
    "tangent",
    "is_dual",
    "stack",
    "concatenate",
    "seed",
    "jacobian",
]


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def value(x):
    """Value part of ``x``; plain arrays pass through."""
    return x.val if isinstance(x, Dual) else x


def tangent(x, n_seeds: int):
    """Tangent part of ``x`` with shape ``shape(x) + (n_seeds,)``."""
    if isinstance(x, Dual):
        return x.der
    return np.zeros(np.shape(x) + (n_seeds,))


def _parts(x):
    if isinstance(x, Dual):
        return x.val, x.der
    return np.asarray(x, dtype=float), None


class Dual:
    """Array value with forward-mode tangents along a trailing seed axis."""

    __slots__ = ("val", "der")
    __array_priority__ = 100

    def __init__(self, val, der):
        val = np.asarray(val, dtype=float)
        der = np.asarray(der, dtype=float)
        if der.shape[:-1] != val.shape:
            raise ValueError(
                f"tangent shape {der.shape} incompatible with value shape {val.shape}"
            )
        self.val = val
        self.der = der

    # -- array protocol -------------------------------------------------

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def size(self):
        return self.val.size

    @property
    def n_seeds(self) -> int:
        return self.der.shape[-1]

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, n_seeds={self.n_seeds})"

    def __float__(self):
        return float(self.val)

    def __getitem__(self, idx):
        if idx is Ellipsis or (isinstance(idx, tuple) and Ellipsis in idx):
            raise IndexError("Ellipsis indexing is not supported on Dual")
        return Dual(self.val[idx], self.der[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        val = self.val.reshape(shape)
        return Dual(val, self.der.reshape(val.shape + (self.n_seeds,)))

    def ravel(self):
        return self.reshape(-1)

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.val.sum(), self.der.reshape(-1, self.n_seeds).sum(axis=0))
        axis = axis % self.ndim
        return Dual(self.val.sum(axis=axis), self.der.sum(axis=axis))

    @property
    def T(self):
        if self.ndim <= 1:
            return self
        return Dual(self.val.T, np.swapaxes(self.der, 0, 1))

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __pow__(self, other):
        return _pow(self, other)

    def __rpow__(self, other):
        return _pow(other, self)

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __pos__(self):
        return self

    def __abs__(self):
        return _unary(np.abs, np.sign)(self)

    def __matmul__(self, other):
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    # comparisons see only the value, so branches carry no derivative
    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs.get("out") is not None:
            return NotImplemented
        handler = _UFUNCS.get(ufunc)
        if handler is None:
            if ufunc in _VALUE_ONLY:
                return ufunc(*(value(x) for x in inputs), **kwargs)
            return NotImplemented
        return handler(*inputs)


def _combine(val, *terms):
    """Sum tangent terms, broadcasting to ``val.shape + (n,)``."""
    terms = [t for t in terms if t is not None]
    n = terms[0].shape[-1]
    out = np.zeros(val.shape + (n,))
    for t in terms:
        out += t
    return Dual(val, out)


def _binary(a, b, fval, da, db):
    av, ad = _parts(a)
    bv, bd = _parts(b)
    val = fval(av, bv)
    ta = None if ad is None else ad * np.asarray(da(av, bv, val))[..., None]
    tb = None if bd is None else bd * np.asarray(db(av, bv, val))[..., None]
    return _combine(val, ta, tb)


def _add(a, b):
    return _binary(a, b, np.add, lambda a, b, v: 1.0, lambda a, b, v: 1.0)


def _sub(a, b):
    return _binary(a, b, np.subtract, lambda a, b, v: 1.0, lambda a, b, v: -1.0)


def _mul(a, b):
    return _binary(a, b, np.multiply, lambda a, b, v: b, lambda a, b, v: a)


def _div(a, b):
    return _binary(
        a, b, np.divide, lambda a, b, v: 1.0 / b, lambda a, b, v: -a / (b * b)
    )


def _pow(a, b):
    def da(av, bv, val):
        return bv * np.power(av, bv - 1.0)

    def db(av, bv, val):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(av > 0, val * np.log(np.where(av > 0, av, 1.0)), 0.0)

    return _binary(a, b, np.power, da, db)


def _unary(f, df):
    def apply(x):
        v, d = _parts(x)
        out = f(v)
        return Dual(out, d * np.asarray(df(v))[..., None])

    return apply


def _matmul(a, b):
    av, ad = _parts(a)
    bv, bd = _parts(b)
    val = av @ bv
    ta = tb = None
    if ad is not None:
        if av.ndim == 1:
            ta = bv @ ad if bv.ndim == 1 else bv.T @ ad
        elif bv.ndim == 1:
            ta = np.einsum("pnk,n->pk", ad, bv)
        else:
            ta = np.einsum("pnk,nm->pmk", ad, bv)
    if bd is not None:
        if bv.ndim == 1:
            tb = av @ bd
        else:
            tb = np.einsum("...n,nmk->...mk", av, bd)
    return _combine(np.asarray(val), ta, tb)


def _maximum(a, b):
    av, ad = _parts(a)
    bv, bd = _parts(b)
    pick_a = av >= bv
    val = np.where(pick_a, av, bv)
    ta = None if ad is None else ad * pick_a[..., None]
    tb = None if bd is None else bd * (~pick_a)[..., None]
    return _combine(val, ta, tb)


def _minimum(a, b):
    return -_maximum(-a if isinstance(a, Dual) else -np.asarray(a, float),
                     -b if isinstance(b, Dual) else -np.asarray(b, float))


_UFUNCS = {
    np.add: _add,
    np.subtract: _sub,
    np.multiply: _mul,
    np.divide: _div,
    np.power: _pow,
    np.matmul: _matmul,
    np.maximum: _maximum,
    np.minimum: _minimum,
    np.negative: lambda x: -x,
    np.positive: lambda x: x,
    np.sin: _unary(np.sin, np.cos),
    np.cos: _unary(np.cos, lambda v: -np.sin(v)),
    np.tan: _unary(np.tan, lambda v: 1.0 / np.cos(v) ** 2),
    np.arctan: _unary(np.arctan, lambda v: 1.0 / (1.0 + v * v)),
    np.arcsin: _unary(np.arcsin, lambda v: 1.0 / np.sqrt(1.0 - v * v)),
    np.arccos: _unary(np.arccos, lambda v: -1.0 / np.sqrt(1.0 - v * v)),
    np.exp: _unary(np.exp, np.exp),
    np.expm1: _unary(np.expm1, np.exp),
    np.log: _unary(np.log, lambda v: 1.0 / v),
    np.log1p: _unary(np.log1p, lambda v: 1.0 / (1.0 + v)),
    np.sqrt: _unary(np.sqrt, lambda v: 0.5 / np.sqrt(v)),
    np.square: _unary(np.square, lambda v: 2.0 * v),
    np.tanh: _unary(np.tanh, lambda v: 1.0 - np.tanh(v) ** 2),
    np.sinh: _unary(np.sinh, np.cosh),
    np.cosh: _unary(np.cosh, np.sinh),
    np.absolute: _unary(np.abs, np.sign),
}

_VALUE_ONLY = {
    np.greater, np.greater_equal, np.less, np.less_equal, np.equal,
    np.not_equal, np.heaviside, np.sign, np.floor, np.ceil, np.isfinite,
    np.isnan, np.isinf,
}


def stack(items, axis: int = 0):
    """``np.stack`` that promotes to :class:`Dual` when any item is one."""
    n = next((x.n_seeds for x in items if isinstance(x, Dual)), None)
    if n is None:
        return np.stack([np.asarray(x, dtype=float) for x in items], axis=axis)
    vals = [value(x) for x in items]
    val = np.stack(vals, axis=axis)
    ax = axis if axis >= 0 else axis - 1
    der = np.stack([tangent(x, n) for x in items], axis=ax)
    return Dual(val, der)


def concatenate(items, axis: int = 0):
    n = next((x.n_seeds for x in items if isinstance(x, Dual)), None)
    if n is None:
        return np.concatenate([np.asarray(x, dtype=float) for x in items], axis=axis)
    val = np.concatenate([np.asarray(value(x), dtype=float) for x in items], axis=axis)
    ax = axis if axis >= 0 else axis - 1
    der = np.concatenate([tangent(x, n) for x in items], axis=ax)
    return Dual(val, der)


def seed(x, columns=None) -> Dual:
    """Seed a 1-D vector with unit tangents on the selected columns."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    cols = np.arange(n) if columns is None else np.asarray(columns)
    der = np.zeros((n, cols.size))
    der[cols, np.arange(cols.size)] = 1.0
    return Dual(x, der)


def jacobian(fun, x, chunk: int | None = None) -> np.ndarray:
    """Jacobian of a vector function by forward-mode seeding.

    Columns are computed in blocks of ``chunk`` seeds. Every column is an
    independent tangent propagation, so the result does not depend on the
    block size.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    chunk = n if chunk is None else max(1, int(chunk))
    cols = []
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        out = fun(seed(x, idx))
        cols.append(np.atleast_2d(tangent(out, idx.size)).reshape(-1, idx.size))
    return np.concatenate(cols, axis=1)
