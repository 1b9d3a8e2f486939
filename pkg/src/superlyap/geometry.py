"""Deterministic flow, orbit geometry, scaling maps and region membership.

The noiseless system ``x' = x^2 - y^2, y' = 2xy`` is the complex ODE
``z' = z^2`` and is solved in closed form.  Everything else in this module
is elementary plane geometry built on top of that flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class GeometryError(ValueError):
    """Raised for invalid geometric queries."""


class OnXAxis(GeometryError):
    """The orbit of a point on the x-axis is the axis itself, not a circle."""


@dataclass(frozen=True)
class Point:
    """A state ``(x, y)`` of the planar system."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y})")

    @property
    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def __iter__(self):
        yield self.x
        yield self.y


@dataclass(frozen=True)
class BlowUp:
    """Marker returned by :func:`det_flow` past the explosion time ``t_star``."""

    t_star: float


def as_point(z) -> Point:
    if isinstance(z, Point):
        return z
    x, y = z
    return Point(float(x), float(y))


# ---------------------------------------------------------------------------
# deterministic flow
# ---------------------------------------------------------------------------
def det_flow_xy(x0, y0, t):
    """Vectorised closed-form flow ``z_t = z0 / (1 - z0 t)``.

    No blow-up handling; callers must stay before ``1/x0`` on the positive
    axis.
    """
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    d = (1.0 - x0 * t) ** 2 + (y0 * t) ** 2
    x = (x0 - (x0**2 + y0**2) * t) / d
    y = y0 / d
    return x, y


def det_flow(z0, t: float) -> Union[Point, BlowUp]:
    """Exact solution of the noiseless system started at ``z0``.

    Parameters
    ----------
    z0 : Point or pair
        Initial condition.
    t : float
        Time, ``t >= 0``.

    Returns
    -------
    Point or BlowUp
        ``BlowUp(1/x0)`` when ``z0`` lies on the positive x-axis and
        ``t >= 1/x0``; otherwise the state at time ``t``.
    """
    z0 = as_point(z0)
    if t < 0:
        raise GeometryError("det_flow requires t >= 0")
    if z0.y == 0.0 and z0.x > 0.0 and t >= 1.0 / z0.x:
        return BlowUp(1.0 / z0.x)
    x, y = det_flow_xy(z0.x, z0.y, t)
    return Point(float(x), float(y))


def orbit_circle(z0) -> dict:
    """Circle through ``z0`` carrying its deterministic orbit.

    Returns
    -------
    dict
        ``{"center": Point(0, r0^2/(2 y0)), "radius": r0^2/(2|y0|)}``.

    Raises
    ------
    OnXAxis
        If ``y0 == 0``.
    """
    z0 = as_point(z0)
    if z0.y == 0.0:
        raise OnXAxis("orbit of a point on the x-axis is the x-axis")
    r2 = z0.x**2 + z0.y**2
    return {"center": Point(0.0, r2 / (2.0 * z0.y)), "radius": r2 / (2.0 * abs(z0.y))}


def return_time(z0, R: float, tol: float = 1e-10) -> float:
    """First time the deterministic orbit of ``z0`` enters the ball of radius ``R``.

    Uses bisection on the closed form ``|z_t|^2 = r0^2 / D(t)`` with
    ``D(t) = (1 - x0 t)^2 + (y0 t)^2``.  The result never exceeds ``2/R``.
    """
    z0 = as_point(z0)
    if R <= 0:
        raise GeometryError("R must be positive")
    if z0.y == 0.0 and z0.x > 0.0:
        raise GeometryError("orbits on the positive x-axis blow up instead of returning")
    r0 = z0.norm
    if r0 <= R:
        return 0.0
    x0, y0 = z0.x, z0.y

    def outside(t):
        return r0 * r0 > R * R * ((1.0 - x0 * t) ** 2 + (y0 * t) ** 2)

    # D(t) is a convex quadratic, so the first entry lies before its
    # minimiser (or is the root of the negative-axis branch); bracket by doubling.
    hi = 1.0 / R
    while outside(hi):
        hi *= 2.0
        if hi > 1e12:
            raise GeometryError("return time bracket failed")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if outside(mid):
            lo = mid
        else:
            hi = mid
    return hi


def blowup_time(z0) -> float:
    """Explosion time of the noiseless system (``inf`` off the positive axis)."""
    z0 = as_point(z0)
    if z0.y == 0.0 and z0.x > 0.0:
        return 1.0 / z0.x
    return math.inf


# ---------------------------------------------------------------------------
# scalings
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ScalingMap:
    """``S1: (x,y,lam) -> (l x, l^{-1/2} y, l^3 lam)``, ``S2: (x,y,lam) -> (l x, l y, lam)``."""

    kind: str
    ell: float

    def __post_init__(self):
        if self.kind not in ("S1", "S2"):
            raise GeometryError(f"unknown scaling kind {self.kind!r}")
        if not self.ell > 0:
            raise GeometryError("ell must be positive")

    def apply_xy(self, x, y, lam=1.0):
        ell = self.ell
        if self.kind == "S1":
            return ell * x, y / np.sqrt(ell), ell**3 * lam
        return ell * x, ell * y, lam


def scale(smap: ScalingMap, z, lam: float = 1.0):
    """Apply a scaling map to ``(z, lam)``; returns ``(Point, lam')``."""
    if lam < 0:
        raise GeometryError("lambda must be non-negative")
    z = as_point(z)
    x, y, lam2 = smap.apply_xy(z.x, z.y, lam)
    return Point(float(x), float(y)), float(lam2)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------
REGION_KINDS = (
    "Pplus",
    "Pminus",
    "O",
    "R1",
    "R2",
    "R3",
    "R2sub1",
    "R2sub2",
    "BoundaryB1",
    "BoundaryB2",
)

_REQUIRED = {
    "Pplus": ("p", "x0", "y0"),
    "Pminus": ("p", "x0", "y0"),
    "O": ("x0", "y0", "lam"),
    "R1": ("alpha",),
    "R2": ("alpha", "lam"),
    "R3": ("alpha",),
    "R2sub1": ("alpha",),
    "R2sub2": ("alpha",),
    "BoundaryB1": ("alpha",),
    "BoundaryB2": ("alpha",),
}

# relative slack used for boundary (equality) sets and closures
_BTOL = 1e-12


@dataclass(frozen=True)
class Region:
    """Symbolic planar region with a total, deterministic membership test.

    Parameters
    ----------
    kind : str
        One of :data:`REGION_KINDS`.
    params : dict
        Named real parameters (``p, x0, y0`` for the wedge sets ``P``,
        ``x0, y0, lam`` for ``O``, ``alpha`` and optionally ``lam`` for the
        composite regions).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _REQUIRED:
            raise GeometryError(f"unknown region kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "R2":
            p.setdefault("lam", 1.0)
        missing = [k for k in _REQUIRED[self.kind] if k not in p]
        if missing:
            raise GeometryError(f"region {self.kind} missing parameters {missing}")
        for key in ("x0", "y0", "alpha"):
            if key in p and not p[key] > 0:
                raise GeometryError(f"{key} must be positive")
        if "lam" in p and p["lam"] < 0:
            raise GeometryError("lam must be non-negative")
        object.__setattr__(self, "params", {k: float(v) for k, v in p.items()})

    # JSON round trip --------------------------------------------------------
    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> "Region":
        return cls(obj["kind"], dict(obj.get("params", {})))

    # membership --------------------------------------------------------------
    def mask(self, x, y) -> np.ndarray:
        """Vectorised membership for coordinate arrays."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return _MASKS[self.kind](x, y, **self.params)

    def contains(self, z) -> bool:
        z = as_point(z)
        return bool(self.mask(z.x, z.y))


def _p_set(sign, x, y, p, x0, y0):
    # P^{+/-}_p(x0,y0) = { +/- x >= x0, |x|^p |y| <= x0^p y0 }
    sx = sign * x
    with np.errstate(divide="ignore", invalid="ignore"):
        lhs = np.where(sx > 0, np.abs(x) ** p, np.inf) * np.abs(y)
    rhs = x0**p * y0
    return (sx >= x0) & (lhs <= rhs * (1 + _BTOL))


def pplus_mask(x, y, p, x0, y0):
    return _p_set(1.0, x, y, p, x0, y0)


def pminus_mask(x, y, p, x0, y0):
    return _p_set(-1.0, x, y, p, x0, y0)


def o_mask(x, y, x0, y0, lam):
    # (x^2 + lam y^2)/|y| >= (x0^2 + lam y0^2)/y0, multiplied through by |y|
    c = (x0**2 + lam * y0**2) / y0
    return x**2 + lam * y**2 >= c * np.abs(y) * (1 - _BTOL)


def r1_mask(x, y, alpha):
    return pminus_mask(x, y, -1.0, alpha / 2.0, 1.0)


def r3_mask(x, y, alpha):
    return pplus_mask(x, y, 0.5, 2.0 * alpha, 1.0)


def _p_interior(sign, x, y, p, x0, y0):
    sx = sign * x
    with np.errstate(divide="ignore", invalid="ignore"):
        lhs = np.where(sx > 0, np.abs(x) ** p, np.inf) * np.abs(y)
    return (sx > x0 * (1 + _BTOL)) & (lhs < x0**p * y0 * (1 - _BTOL))


def r2_mask(x, y, alpha, lam=1.0):
    # closure of  P+_{1/2}(a sqrt(lam),1)^c  n  O(a sqrt(lam),1,lam)  n  P-_{-1}(a sqrt(lam),1)^c:
    # complements of the P sets are taken open, then closed by dropping strictness.
    a = alpha * math.sqrt(lam) if lam > 0 else alpha
    not_p3 = ~_p_interior(1.0, x, y, 0.5, a, 1.0)
    not_p1 = ~_p_interior(-1.0, x, y, -1.0, a, 1.0)
    return not_p3 & not_p1 & o_mask(x, y, a, 1.0, lam)


def r2sub1_mask(x, y, alpha):
    # right wedge of R2: x >= alpha, alpha |y| <= x
    return r2_mask(x, y, alpha) & (x >= alpha) & (alpha * np.abs(y) <= x * (1 + _BTOL))


def r2sub2_mask(x, y, alpha):
    # closure(R2 minus P+_{-1}(alpha,1)); P+_{-1}(alpha,1) = {x >= alpha, |y| <= x/alpha}
    return r2_mask(x, y, alpha) & ~_p_interior(1.0, x, y, -1.0, alpha, 1.0)


def boundary_b1_mask(x, y, alpha):
    return (x <= -alpha) & np.isclose(alpha * np.abs(y), np.abs(x), rtol=1e-10, atol=0.0)


def boundary_b2_mask(x, y, alpha):
    return (x >= alpha) & np.isclose(x * y**2, 2.0 * alpha, rtol=1e-10, atol=0.0)


_MASKS = {
    "Pplus": pplus_mask,
    "Pminus": pminus_mask,
    "O": o_mask,
    "R1": r1_mask,
    "R2": r2_mask,
    "R3": r3_mask,
    "R2sub1": r2sub1_mask,
    "R2sub2": r2sub2_mask,
    "BoundaryB1": boundary_b1_mask,
    "BoundaryB2": boundary_b2_mask,
}


def contains(region: Region, z) -> bool:
    """Exact (closed) membership of ``z`` in ``region``."""
    return region.contains(z)


# ---------------------------------------------------------------------------
# reference decompositions
# ---------------------------------------------------------------------------
def to_reference(region: Region, z) -> dict:
    """Decompose ``z`` as a scaling of a point on a reference compactum.

    Returns
    -------
    dict
        ``{"map": ScalingMap, "ell": float, "ref": Point, "lam": float}`` with
        ``scale(map, ref, lam)`` reproducing ``(z, 1)``.

    Notes
    -----
    * ``R3``: ``ell = x/(2 alpha)``, ``ref = (2 alpha, sqrt(ell) y)`` under S1.
    * ``R2sub1``: ``ell = (x/(alpha |y|))^(2/3)``, ``ref = (alpha b, +/- b)``
      with ``b = alpha^{-1/3} (x y^2)^{1/3}`` and ``lam = ell^{-3}`` under S1.
    * ``R2sub2``: radial S2 map onto the circle of radius ``2(alpha^2+1)``.
    * ``R1``: radial S2 map onto the circle of radius ``sqrt(alpha^2+4)``.
    """
    z = as_point(z)
    if not region.contains(z):
        raise GeometryError(f"{z} is not in region {region.kind}")
    alpha = region.params.get("alpha")
    x, y = z.x, z.y
    if region.kind == "R3":
        ell = x / (2.0 * alpha)
        return {"map": ScalingMap("S1", ell), "ell": ell, "ref": Point(2.0 * alpha, math.sqrt(ell) * y), "lam": 1.0}
    if region.kind == "R2sub1":
        ell = (x / (alpha * abs(y))) ** (2.0 / 3.0)
        b = alpha ** (-1.0 / 3.0) * (x * y * y) ** (1.0 / 3.0)
        ref = Point(alpha * b, math.copysign(b, y))
        return {"map": ScalingMap("S1", ell), "ell": ell, "ref": ref, "lam": ell**-3}
    if region.kind in ("R2sub2", "R1"):
        target = 2.0 * (alpha**2 + 1.0) if region.kind == "R2sub2" else math.sqrt(alpha**2 + 4.0)
        ell = z.norm / target
        return {"map": ScalingMap("S2", ell), "ell": ell, "ref": Point(x / ell, y / ell), "lam": 1.0}
    raise GeometryError(f"no reference decomposition for region {region.kind}")
