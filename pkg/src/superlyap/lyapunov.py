"""Local Lyapunov pieces, mollified patching and the global function ``V``.

The three local functions are

* ``v1 = (x^2 + y^2)^{delta/2}`` on the priming region ``R1``,
* ``v2``, the explicit solution of the transport equation ``T_lam v2 = -h`` on
  ``R2``,
* ``v3 = x^dhat [(c1/dhat + c2) g(sqrt(x) y) - c1/dhat]`` on the diffusive
  region ``R3``, with ``g`` from :mod:`superlyap.bvp`.

They are glued with the bump-function partition ``phi`` into one ``C^2``
function.  All evaluations return :class:`~superlyap.jets.EvalJet` objects.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .bvp import BvpSolution, solve_g_bvp
from .geometry import Point, r1_mask, r2_mask, r3_mask
from .jets import EvalJet, abs_y_jet

DEFAULT_DELTA = 0.2
DEFAULT_CTIL1 = 0.1
DEFAULT_CTIL2 = 0.8


class InfeasibleError(ValueError):
    """Constants cannot be chosen; ``diagnostic`` names the failing condition."""

    def __init__(self, msg, diagnostic=None):
        super().__init__(msg)
        self.diagnostic = dict(diagnostic or {})


class DispatchError(RuntimeError):
    """A point outside the radius ``rho`` is not covered by any region."""


@dataclass(frozen=True)
class LyapunovSpec:
    """Constants of the global super-Lyapunov function.

    ``M`` and ``b`` stay ``None`` until a certification run fills them in.
    """

    delta: float = DEFAULT_DELTA
    alpha: float = 3.0
    rho: float = 20.0
    ctil1: float = DEFAULT_CTIL1
    ctil2: float = DEFAULT_CTIL2
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    M: float | None = None
    b: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta < 0.4:
            raise InfeasibleError("delta must lie in (0, 2/5)", {"delta": self.delta})
        for name in ("alpha", "rho", "ctil1", "ctil2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_x < 0 or self.sigma_y < 0:
            raise ValueError("noise intensities must be non-negative")

    @property
    def delta_hat(self) -> float:
        return 2.5 * self.delta + 1.5

    @property
    def gamma(self) -> float:
        return (5 * self.delta + 5) / (5 * self.delta + 3)

    @property
    def c1(self) -> float:
        return self.ctil1 * self.alpha ** (-(self.delta + 1) / 2)

    @property
    def c2(self) -> float:
        return self.ctil2 * self.alpha ** (-(self.delta + 1) / 2)

    def with_(self, **kw) -> "LyapunovSpec":
        return replace(self, **kw)

    def to_json(self) -> dict:
        out = asdict(self)
        out.update(delta_hat=self.delta_hat, gamma=self.gamma, c1=self.c1, c2=self.c2)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "LyapunovSpec":
        names = {"delta", "alpha", "rho", "ctil1", "ctil2", "sigma_x", "sigma_y", "M", "b"}
        return cls(**{k: v for k, v in obj.items() if k in names})


def coords(z):
    """Coordinate arrays from a :class:`Point`, a pair, or an ``(n, 2)`` array.

    Only an ndarray is read row-wise; any other sequence is ``(x, y)``.
    """
    if isinstance(z, Point):
        return np.asarray(z.x, dtype=float), np.asarray(z.y, dtype=float)
    if isinstance(z, np.ndarray) and z.ndim == 2 and z.shape[1] == 2:
        return z[:, 0].astype(float), z[:, 1].astype(float)
    x, y = z
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def bvp_for(spec: LyapunovSpec) -> BvpSolution:
    """The native-interval BVP solution matching ``spec``."""
    return solve_g_bvp(spec.delta, spec.sigma_y, alpha=spec.alpha)


# ---------------------------------------------------------------------------
# local functions
# ---------------------------------------------------------------------------
def v1(spec: LyapunovSpec, z) -> EvalJet:
    """``(x^2 + y^2)^{delta/2}`` with its partials."""
    x, y = coords(z)
    if np.any((x == 0) & (y == 0)):
        raise ValueError("v1 is not differentiable at the origin")
    X, Y = EvalJet.coord_x(x), EvalJet.coord_y(y)
    return (X * X + Y * Y).power(spec.delta / 2)


def v2(spec: LyapunovSpec, z, lam: float = 1.0) -> EvalJet:
    """Explicit transport solution.

    ``((x^2 + lam y^2)/|y|)^delta [x/|y| + alpha sqrt(lam) + sqrt(lam) (alpha^2+1)^{-delta/2}]``;
    ``lam = 0`` gives the limit ``|x|^{2 delta} x / |y|^{delta+1}``.
    """
    x, y = coords(z)
    if np.any(y == 0):
        raise ValueError("v2 is singular on the x-axis")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    d, a = spec.delta, spec.alpha
    X = EvalJet.coord_x(x)
    AY = abs_y_jet(y)
    inv_ay = AY.reciprocal()
    s = math.sqrt(lam)
    if lam == 0.0:
        return (X * X).power(d) * X * inv_ay.power(d + 1)
    Y = EvalJet.coord_y(y)
    ratio = (X * X + lam * (Y * Y)) * inv_ay
    bracket = X * inv_ay + (a * s + s * (a * a + 1) ** (-d / 2))
    return ratio.power(d) * bracket


def transport_source(spec: LyapunovSpec, z, lam: float = 1.0) -> np.ndarray:
    """``h = ((x^2 + lam y^2)/|y|)^{delta+1}``, the right-hand side of ``T_lam v2 = -h``."""
    x, y = coords(z)
    return ((x * x + lam * y * y) / np.abs(y)) ** (spec.delta + 1)


def v3(spec: LyapunovSpec, g: BvpSolution, z, check: bool = True) -> EvalJet:
    """Diffusive-region solution ``x^dhat [(c1/dhat + c2) g(sqrt(x) y) - c1/dhat]``."""
    x, y = coords(z)
    if abs(g.L - math.sqrt(2 * spec.alpha)) > 1e-9 * g.L:
        raise ValueError("BVP interval does not match sqrt(2 alpha)")
    if check and not np.all(r3_mask(x, y, spec.alpha)):
        raise ValueError("v3 evaluated outside R3")
    dh = spec.delta_hat
    X, Y = EvalJet.coord_x(x), EvalJet.coord_y(y)
    w = X.sqrt() * Y
    gv, dg, d2g = g.derivatives(np.clip(w.value, -g.L, g.L))
    G = w.compose(gv, dg, d2g)
    return X.power(dh) * (G * (spec.c1 / dh + spec.c2) - spec.c1 / dh)


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------
def _psi(t):
    t = np.asarray(t, dtype=float)
    u = 2.0 * t - 1.0
    inside = np.abs(u) < 1.0
    out = np.zeros_like(u)
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def _dpsi(t):
    t = np.asarray(t, dtype=float)
    u = 2.0 * t - 1.0
    inside = np.abs(u) < 1.0
    out = np.zeros_like(u)
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui**2)) * (-4.0 * ui / (1.0 - ui**2) ** 2)
    return out


@functools.lru_cache(maxsize=1)
def _mollifier_table(n: int = 4001):
    # cumulative Gauss-Legendre integration of psi on a uniform grid of [0, 1/2],
    # extended by the symmetry phi(t) = 1 - phi(1 - t)
    t = np.linspace(0.0, 0.5, n)
    nodes, weights = np.polynomial.legendre.leggauss(10)
    lo, hi = t[:-1], t[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    pts = mid[:, None] + half[:, None] * nodes[None, :]
    cells = (_psi(pts.ravel()).reshape(pts.shape) * weights).sum(axis=1) * half
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    m = 2.0 * cum[-1]
    tt = np.concatenate([t, 1.0 - t[-2::-1]])
    phi = np.concatenate([cum / m, 1.0 - cum[-2::-1] / m])
    return m, CubicHermiteSpline(tt, phi, _psi(tt) / m)


def mollifier_mass() -> float:
    """Normalising constant ``m = int_0^1 psi``."""
    return _mollifier_table()[0]


def mollifier(t):
    """Smooth step ``phi`` with ``phi' = psi/m`` and ``phi'' = psi'/m``.

    Returns
    -------
    tuple of ndarray
        ``(phi, dphi, d2phi)``; ``phi = 0`` for ``t <= 0`` and ``1`` for ``t >= 1``.
    """
    m, spline = _mollifier_table()
    t = np.asarray(t, dtype=float)
    phi = np.where(t <= 0.0, 0.0, np.where(t >= 1.0, 1.0, spline(np.clip(t, 0.0, 1.0))))
    return phi, _psi(t) / m, _dpsi(t) / m


def patch_weights(spec: LyapunovSpec, z):
    """``h1 = 2 + alpha |y| / x`` and ``h2 = 2 - x y^2 / alpha`` as jets."""
    x, y = coords(z)
    X = EvalJet.coord_x(x)
    Y = EvalJet.coord_y(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        h1 = abs_y_jet(y) * spec.alpha / X + 2.0
    h2 = 2.0 - X * (Y * Y) / spec.alpha
    return h1, h2


def _blend(weight: EvalJet, va: EvalJet, vb: EvalJet) -> EvalJet:
    """``vb + phi(weight) (va - vb)``."""
    phi = weight.compose(*mollifier(weight.value))
    return vb + phi * (va - vb)


# ---------------------------------------------------------------------------
# global function
# ---------------------------------------------------------------------------
ZONES = ("inner", "R1core", "R1R2", "R2core", "R2R3", "R3core")


def zone_masks(spec: LyapunovSpec, x, y):
    """Boolean masks of the five dispatch zones (no radius restriction)."""
    a = spec.alpha
    in1, in2, in3 = r1_mask(x, y, a), r2_mask(x, y, a), r3_mask(x, y, a)
    return {
        "R1core": in1 & ~in2,
        "R1R2": in1 & in2,
        "R2core": in2 & ~in1 & ~in3,
        "R2R3": in2 & in3,
        "R3core": in3 & ~in2,
    }


class GlobalLyapunov:
    """The patched function ``V`` for a spec and matching BVP solution.

    Parameters
    ----------
    spec : LyapunovSpec
    g : BvpSolution, optional
        Solved on ``[-sqrt(2 alpha), sqrt(2 alpha)]``; solved on demand if omitted.
    n_circle : int
        Samples used to find the filler constant ``c0 = min V~`` on ``|z| = 2 rho``.
    """

    def __init__(self, spec: LyapunovSpec, g: BvpSolution | None = None, n_circle: int = 20000):
        self.spec = spec
        self.g = g if g is not None else bvp_for(spec)
        theta = np.linspace(-np.pi, np.pi, n_circle, endpoint=False)
        r = 2.0 * spec.rho
        self.c0 = float(np.min(self.tilde(r * np.cos(theta), r * np.sin(theta)).value))

    # -- pieces ---------------------------------------------------------------
    def zones(self, x, y) -> np.ndarray:
        """Zone label per point; ``"inner"`` inside ``rho``."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        lab = np.full(x.shape, "", dtype=object)
        for name, mask in zone_masks(self.spec, x, y).items():
            lab[mask & (lab == "")] = name
        lab[np.hypot(x, y) < self.spec.rho] = "inner"
        return lab

    def tilde(self, x, y) -> EvalJet:
        """Piecewise function ``V~`` (valid for ``|z| >= rho``)."""
        spec = self.spec
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        masks = zone_masks(spec, x, y)
        covered = np.zeros(x.shape, bool)
        for m in masks.values():
            covered |= m
        if not np.all(covered):
            i = int(np.flatnonzero(~covered)[0])
            raise DispatchError(f"point ({x[i]}, {y[i]}) lies in no region; rho too small")
        out = EvalJet(*(np.full(x.shape, np.nan) for _ in range(6)))
        # zones are checked in dispatch order so boundary points get one value
        taken = np.zeros(x.shape, bool)
        for name in ("R1core", "R1R2", "R2core", "R2R3", "R3core"):
            idx = masks[name] & ~taken
            if not np.any(idx):
                continue
            taken |= idx
            xs, ys = x[idx], y[idx]
            if name in ("R1R2", "R2core", "R2R3") and np.any(ys == 0):
                raise DispatchError("dispatch routed an x-axis point to v2")
            jet = self._piece(name, xs, ys)
            out = _scatter(out, idx, jet)
        return out

    def _piece(self, name, x, y) -> EvalJet:
        spec = self.spec
        if name == "R1core":
            return v1(spec, (x, y))
        if name == "R2core":
            return v2(spec, (x, y))
        if name == "R3core":
            return v3(spec, self.g, (x, y), check=False)
        h1, h2 = patch_weights(spec, (x, y))
        if name == "R1R2":
            return _blend(h1, v1(spec, (x, y)), v2(spec, (x, y)))
        return _blend(h2, v3(spec, self.g, (x, y), check=False), v2(spec, (x, y)))

    def piece(self, name, z) -> EvalJet:
        """Evaluate the formula of one zone regardless of membership (seam checks)."""
        x, y = coords(z)
        return self._piece(name, np.atleast_1d(x), np.atleast_1d(y))

    # -- full V ---------------------------------------------------------------
    def jet(self, z) -> EvalJet:
        x, y = coords(z)
        x, y = np.atleast_1d(x), np.atleast_1d(y)
        rho = self.spec.rho
        r = np.hypot(x, y)
        out = EvalJet.constant(np.full(x.shape, self.c0))
        outer = r >= rho
        if np.any(outer):
            xs, ys = x[outer], y[outer]
            vt = self.tilde(xs, ys)
            shell = r[outer] < 2 * rho
            if np.any(shell):
                X, Y = EvalJet.coord_x(xs[shell]), EvalJet.coord_y(ys[shell])
                s = (X * X + Y * Y).sqrt() / rho - 1.0
                phi = s.compose(*mollifier(s.value))
                blended = phi * (vt.take(shell) - self.c0) + self.c0
                vt = _scatter(vt, shell, blended)
            out = _scatter(out, outer, vt)
        return out

    def value(self, z) -> np.ndarray:
        return self.jet(z).value

    __call__ = value


def _scatter(base: EvalJet, mask, jet: EvalJet) -> EvalJet:
    vals = {}
    for name, arr in base.as_dict().items():
        arr = np.array(arr, dtype=float, copy=True)
        arr[mask] = getattr(jet, name)
        vals[name] = arr
    return EvalJet(**vals)


def global_V(spec: LyapunovSpec, g: BvpSolution | None, z) -> EvalJet:
    """Evaluate the global function (builds a :class:`GlobalLyapunov` per call)."""
    return GlobalLyapunov(spec, g).jet(z)


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------
def q(b, delta: float, ctil1: float, ctil2: float):
    """Limit of ``v3/v2 - 1`` at ``a = 2 alpha`` in the zero-diffusion limit.

    ``2^{delta/2+1/2} [(c~1/dhat + c~2)|b|^{2/5} - (c~1/dhat)|b|^{delta+1}] - 1``.
    """
    dh = 2.5 * delta + 1.5
    b = np.abs(np.asarray(b, dtype=float))
    k = 2 ** (delta / 2 + 0.5)
    return k * ((ctil1 / dh + ctil2) * b**0.4 - (ctil1 / dh) * b ** (delta + 1)) - 1.0


def q_tilde(b, delta: float, ctil1: float, ctil2: float):
    """Limit of the normalised transverse-derivative gap ``b d_y(v3 - v2)``.

    ``-(delta + 3/5) 2^{delta/2+1/2} (c~1/dhat + c~2)|b|^{2/5} + delta + 1``.
    """
    dh = 2.5 * delta + 1.5
    b = np.abs(np.asarray(b, dtype=float))
    return -(delta + 0.6) * 2 ** (delta / 2 + 0.5) * (ctil1 / dh + ctil2) * b**0.4 + delta + 1.0


def alpha_floor(delta: float, sigma_y: float, margin: float = 0.1) -> float:
    """Smallest ``alpha`` with ``sigma_y (delta+1)(delta+2)/alpha <= 1 - margin``."""
    return sigma_y * (delta + 1) * (delta + 2) / (1.0 - margin)


def overlap_sign_checks(spec: LyapunovSpec, g: BvpSolution, n: int = 200) -> dict:
    """Sign conditions on the ``R2 n R3`` reference segment ``a = 2 alpha``.

    Checks ``v3 - v2 > 0`` and ``b d_y(v3 - v2) > 0`` with ``v2`` at ``lam = 0``
    for ``|b|`` in ``[2^{-1/2}, 1]`` (both signs of ``b``).
    """
    b = np.linspace(2**-0.5, 1.0, n)
    b = np.concatenate([b, -b])
    x = np.full_like(b, 2 * spec.alpha)
    j3 = v3(spec, g, (x, b), check=False)
    j2 = v2(spec, (x, b), lam=0.0)
    gap = j3.value - j2.value
    slope = b * (j3.dy - j2.dy)
    return {
        "gap_min": float(np.min(gap / j2.value)),
        "slope_min": float(np.min(slope / j2.value)),
        "ok": bool(np.all(gap > 0) and np.all(slope > 0)),
    }


def feasibility(delta: float, ctil1: float, ctil2: float) -> dict:
    qv = float(q(2**-0.5, delta, ctil1, ctil2))
    qt = float(q_tilde(1.0, delta, ctil1, ctil2))
    return {"q": qv, "q_tilde": qt, "ok": qv > 0 and qt > 0}


def choose_constants(
    delta: float = DEFAULT_DELTA,
    sigma_x: float = 1.0,
    sigma_y: float = 1.0,
    ctil1: float = DEFAULT_CTIL1,
    ctil2: float = DEFAULT_CTIL2,
    alpha_min: float = 0.0,
    margin: float = 0.1,
    alpha_growth: float = 1.25,
    max_alpha_steps: int = 60,
    rho0: float | None = None,
    rho_cap_factor: float = 2.0**20,
    certify_fn=None,
    certify_kw: dict | None = None,
):
    """Pick ``alpha`` and ``rho`` and certify.

    Parameters
    ----------
    delta, sigma_x, sigma_y, ctil1, ctil2 : float
        Model and shape constants.
    alpha_min : float
        User floor for ``alpha``.
    margin : float
        Safety margin in ``sigma_y (delta+1)(delta+2)/alpha <= 1 - margin``.
    alpha_growth : float
        Factor applied to ``alpha`` while the overlap sign checks fail.
    rho0 : float, optional
        Initial radius; default ``1.05 (alpha^2 + 1)``.
    rho_cap_factor : float
        ``rho`` doubles until certified, up to ``rho0 * rho_cap_factor``.  When
        a doubling leaves a negative normalised margin essentially unchanged
        the failure is scale invariant, so ``alpha`` grows instead and the
        radius search restarts.
    certify_fn : callable, optional
        ``certify_fn(spec, g, **certify_kw) -> report`` with a ``certified``
        attribute; defaults to :func:`superlyap.verifier.certify`.  Pass
        ``False`` to skip the radius loop.

    Returns
    -------
    tuple
        ``(spec, g, report, log)``; ``report`` is ``None`` when certification
        is skipped.

    Raises
    ------
    InfeasibleError
        When ``delta`` is out of range, the shape constants violate the
        ``q``/``q~`` conditions, or a tuning cap is hit.
    """
    if not 0.0 < delta < 0.4:
        raise InfeasibleError("delta must lie in (0, 2/5) so that dhat < 5/2", {"delta": delta})
    if not sigma_y > 0:
        raise InfeasibleError("sigma_y must be positive to build v3", {"sigma_y": sigma_y})
    feas = feasibility(delta, ctil1, ctil2)
    if not feas["ok"]:
        raise InfeasibleError("shape constants violate q(2^-1/2) > 0 or q~(1) > 0", feas)
    log = {"feasibility": feas, "alpha_steps": [], "rho_steps": []}
    alpha = max(alpha_min, alpha_floor(delta, sigma_y, margin))
    log["alpha_floor"] = alpha
    for _ in range(max_alpha_steps):
        spec = LyapunovSpec(delta, alpha, 1.0, ctil1, ctil2, sigma_x, sigma_y)
        g = bvp_for(spec)
        checks = overlap_sign_checks(spec, g)
        log["alpha_steps"].append({"alpha": alpha, **checks})
        if checks["ok"]:
            break
        alpha *= alpha_growth
    else:
        raise InfeasibleError("overlap sign checks never held", log)
    if certify_fn is False:
        rho = rho0 if rho0 is not None else 1.05 * (alpha**2 + 1.0)
        return spec.with_(rho=rho), g, None, log
    if certify_fn is None:
        from .verifier import certify as certify_fn
    steps = len(log["alpha_steps"])
    while True:
        rho = rho0 if rho0 is not None else 1.05 * (alpha**2 + 1.0)
        cap = rho * rho_cap_factor
        spec = spec.with_(rho=rho)
        prev = None
        while True:
            report = certify_fn(spec, g, **(certify_kw or {}))
            norm = min(z.worst_normalized for z in report.zones.values())
            log["rho_steps"].append(
                {"alpha": alpha, "rho": spec.rho, "certified": report.certified, "worst": report.worst_margin, "worst_normalized": norm}
            )
            if report.certified:
                log["alpha"], log["rho"] = alpha, spec.rho
                return report.spec, g, report, log
            # margins are scale invariant to leading order: if doubling rho does
            # not lift a negative normalised margin, only a larger alpha can help
            if prev is not None and norm < 0 and norm - prev < 0.1 * abs(prev):
                break
            if spec.rho * 2 > cap:
                raise InfeasibleError("rho tuning cap reached without certification", log)
            prev = norm
            spec = spec.with_(rho=spec.rho * 2)
        steps += 1
        if steps >= max_alpha_steps:
            raise InfeasibleError("alpha tuning cap reached without certification", log)
        alpha *= alpha_growth
        spec = LyapunovSpec(delta, alpha, 1.0, ctil1, ctil2, sigma_x, sigma_y)
        g = bvp_for(spec)
        log["alpha_steps"].append({"alpha": alpha, "reason": "stagnant normalised margin", **overlap_sign_checks(spec, g)})
