"""Second-order jets: a value together with its first and second partials.

Every field the generator acts on is carried around as an :class:`EvalJet`.
Arithmetic on jets applies the product and chain rules, so the partials of
composite closed-form expressions come out exact (to rounding) without any
finite differencing.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


@dataclass(frozen=True)
class EvalJet:
    """Value and partial derivatives of a function of ``(x, y)``.

    All fields are floats or numpy arrays of a common shape.
    """

    value: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dxx: np.ndarray
    dyy: np.ndarray
    dxy: np.ndarray

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, c, like=None) -> "EvalJet":
        c = np.asarray(c, dtype=float)
        if like is not None:
            c = np.broadcast_to(c, np.shape(like)).astype(float)
        zero = np.zeros_like(c)
        return cls(c, zero, zero, zero, zero, zero)

    @classmethod
    def coord_x(cls, x) -> "EvalJet":
        x = np.asarray(x, dtype=float)
        zero = np.zeros_like(x)
        return cls(x, np.ones_like(x), zero, zero, zero, zero)

    @classmethod
    def coord_y(cls, y) -> "EvalJet":
        y = np.asarray(y, dtype=float)
        zero = np.zeros_like(y)
        return cls(y, zero, np.ones_like(y), zero, zero, zero)

    # -- algebra ------------------------------------------------------------
    def _lift(self, other) -> "EvalJet":
        if isinstance(other, EvalJet):
            return other
        return EvalJet.constant(other, like=self.value)

    def __add__(self, other):
        o = self._lift(other)
        return EvalJet(*(getattr(self, f.name) + getattr(o, f.name) for f in fields(self)))

    __radd__ = __add__

    def __neg__(self):
        return EvalJet(*(-getattr(self, f.name) for f in fields(self)))

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, EvalJet):
            c = np.asarray(other, dtype=float)
            return EvalJet(*(c * getattr(self, f.name) for f in fields(self)))
        u, v = self, other
        return EvalJet(
            u.value * v.value,
            u.dx * v.value + u.value * v.dx,
            u.dy * v.value + u.value * v.dy,
            u.dxx * v.value + 2.0 * u.dx * v.dx + u.value * v.dxx,
            u.dyy * v.value + 2.0 * u.dy * v.dy + u.value * v.dyy,
            u.dxy * v.value + u.dx * v.dy + u.dy * v.dx + u.value * v.dxy,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, EvalJet):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def compose(self, f, df, d2f) -> "EvalJet":
        """Jet of ``F(u)`` given ``F(u)``, ``F'(u)``, ``F''(u)`` at ``u = self.value``."""
        u = self
        return EvalJet(
            np.asarray(f, dtype=float),
            df * u.dx,
            df * u.dy,
            d2f * u.dx**2 + df * u.dxx,
            d2f * u.dy**2 + df * u.dyy,
            d2f * u.dx * u.dy + df * u.dxy,
        )

    def power(self, p: float) -> "EvalJet":
        u = self.value
        return self.compose(u**p, p * u ** (p - 1.0), p * (p - 1.0) * u ** (p - 2.0))

    def reciprocal(self) -> "EvalJet":
        u = self.value
        return self.compose(1.0 / u, -1.0 / u**2, 2.0 / u**3)

    def sqrt(self) -> "EvalJet":
        return self.power(0.5)

    # -- helpers ------------------------------------------------------------
    def where(self, mask, other: "EvalJet") -> "EvalJet":
        """Pick ``self`` where ``mask`` holds, ``other`` elsewhere."""
        return EvalJet(*(np.where(mask, getattr(self, f.name), getattr(other, f.name)) for f in fields(self)))

    def take(self, index) -> "EvalJet":
        return EvalJet(*(np.asarray(getattr(self, f.name))[index] for f in fields(self)))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def shape(self):
        return np.shape(self.value)


def abs_y_jet(y) -> EvalJet:
    """Jet of ``|y|``; uses ``sgn(0) = 1`` for the (unused) derivative at the axis."""
    y = np.asarray(y, dtype=float)
    zero = np.zeros_like(y)
    sgn = np.where(y >= 0.0, 1.0, -1.0)
    return EvalJet(np.abs(y), zero, sgn, zero, zero, zero)


def stack_jets(jets) -> EvalJet:
    """Concatenate 1-d jets along their only axis."""
    return EvalJet(
        *(np.concatenate([np.atleast_1d(getattr(j, f.name)) for j in jets]) for f in fields(EvalJet))
    )


def fill_jet(n: int, index_jets) -> EvalJet:
    """Scatter ``(index, jet)`` pairs into a length-``n`` jet (NaN where unset)."""
    out = {f.name: np.full(n, np.nan) for f in fields(EvalJet)}
    for idx, jet in index_jets:
        for name in out:
            out[name][idx] = getattr(jet, name)
    return EvalJet(**out)
