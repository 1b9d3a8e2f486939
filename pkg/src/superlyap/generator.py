"""Generator of the SDE, its limiting operators, and super-Lyapunov margins."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jets import EvalJet


@dataclass(frozen=True)
class OperatorKind:
    """Which differential operator to apply.

    ``name`` is one of ``"FullL"``, ``"DiffusiveA"``, ``"TransportT"`` and
    ``"TransportTLambda"`` (which reads ``lam``).
    """

    name: str
    lam: float = 1.0

    def __post_init__(self):
        if self.name not in ("FullL", "DiffusiveA", "TransportT", "TransportTLambda"):
            raise ValueError(f"unknown operator {self.name!r}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


FULL_L = OperatorKind("FullL")
DIFFUSIVE_A = OperatorKind("DiffusiveA")
TRANSPORT_T = OperatorKind("TransportT")


def transport_lambda(lam: float) -> OperatorKind:
    return OperatorKind("TransportTLambda", lam)


def apply(op: OperatorKind, params, jet: EvalJet, z) -> np.ndarray:
    """Apply ``op`` to a field given by its jet at ``z``.

    Parameters
    ----------
    op : OperatorKind
    params : object
        Anything with ``sigma_x`` and ``sigma_y`` attributes.
    jet : EvalJet
        Field and partials evaluated at ``z``.
    z : Point, pair or (n, 2) array

    Notes
    -----
    ``L = (x^2-y^2) d_x + 2xy d_y + sx d_xx + sy d_yy``,
    ``A = x^2 d_x + 2xy d_y + sy d_yy``,
    ``T_lam = (x^2 - lam y^2) d_x + 2xy d_y``.
    """
    from .lyapunov import coords

    x, y = coords(z)
    if op.name == "FullL":
        return (x * x - y * y) * jet.dx + 2 * x * y * jet.dy + params.sigma_x * jet.dxx + params.sigma_y * jet.dyy
    if op.name == "DiffusiveA":
        return x * x * jet.dx + 2 * x * y * jet.dy + params.sigma_y * jet.dyy
    lam = 1.0 if op.name == "TransportT" else op.lam
    return (x * x - lam * y * y) * jet.dx + 2 * x * y * jet.dy


def margin(params, jet: EvalJet, z, M: float, b: float, gamma: float | None = None) -> np.ndarray:
    """Super-Lyapunov margin ``-(L V) - M V^gamma + b`` (non-negative when certified).

    ``gamma`` defaults to ``params.gamma`` (so a :class:`LyapunovSpec` can be
    passed directly as ``params``).
    """
    g = params.gamma if gamma is None else gamma
    LV = apply(FULL_L, params, jet, z)
    with np.errstate(over="ignore"):
        return -LV - M * np.power(jet.value, g) + b


def fd_jet(f, z, h: float | None = None) -> EvalJet:
    """Central-difference jet of a scalar field ``f(x, y)`` (vectorised).

    The step is ``max(1, |x|, |y|) * eps^{1/3}`` unless ``h`` is given.
    """
    from .lyapunov import coords

    x, y = coords(z)
    if h is None:
        h = np.maximum(1.0, np.maximum(np.abs(x), np.abs(y))) * np.finfo(float).eps ** (1 / 3)
    f0 = f(x, y)
    fxp, fxm = f(x + h, y), f(x - h, y)
    fyp, fym = f(x, y + h), f(x, y - h)
    fpp, fpm = f(x + h, y + h), f(x + h, y - h)
    fmp, fmm = f(x - h, y + h), f(x - h, y - h)
    return EvalJet(
        np.asarray(f0, dtype=float),
        (fxp - fxm) / (2 * h),
        (fyp - fym) / (2 * h),
        (fxp - 2 * f0 + fxm) / h**2,
        (fyp - 2 * f0 + fym) / h**2,
        (fpp - fpm - fmp + fmm) / (4 * h * h),
    )
