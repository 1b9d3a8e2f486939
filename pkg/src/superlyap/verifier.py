"""Grid certification of the global super-Lyapunov inequality.

The margins ``-(L V) - M V^gamma`` are swept over the five dispatch zones at
radii ``[2 rho, 1e4 rho]``.  Each zone is parameterised through its
reference compactum: polar arcs where the S2 scaling governs, and an
``x``-level times transverse-coordinate grid in the thin wedges along the
positive axis where the S1 scaling governs.  The results are floating-point
evidence, not interval-arithmetic proofs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bvp import BvpSolution
from .generator import DIFFUSIVE_A, FULL_L, TRANSPORT_T, apply
from .geometry import r2sub1_mask
from .lyapunov import (
    ZONES,
    GlobalLyapunov,
    LyapunovSpec,
    bvp_for,
    transport_source,
    v1,
    v2,
    v3,
    zone_masks,
)

OUTER_ZONES = ZONES[1:]
GRID_TOL = 0.05
M_FRACTION = 0.5


class GridError(ValueError):
    """Invalid grid request (e.g. radius below ``2 rho`` or empty slice)."""


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------
def build_grid(spec: LyapunovSpec, zone: str, r_lo: float, r_hi: float, n_radial: int, n_angular: int):
    """Points of one dispatch zone with radii in ``[r_lo, r_hi]``.

    Parameters
    ----------
    spec : LyapunovSpec
    zone : str
        ``"R1core"``, ``"R1R2"``, ``"R2core"``, ``"R2R3"`` or ``"R3core"``;
        the region names ``"R1"`` and ``"R3"`` are accepted as aliases for
        the full priming and diffusive regions.
    r_lo, r_hi : float
        Radial range; ``r_lo`` must be at least ``2 rho``.
    n_radial, n_angular : int
        Number of (log-spaced) radial levels and transverse samples per level.

    Returns
    -------
    ndarray, shape (n, 2)
        Only points that really lie in the zone are returned.
    """
    if r_lo < 2 * spec.rho * (1 - 1e-12):
        raise GridError(f"r_lo = {r_lo} is below 2 rho = {2 * spec.rho}")
    if not r_hi >= r_lo:
        raise GridError("r_hi must be at least r_lo")
    a = spec.alpha
    r = np.geomspace(r_lo, r_hi, n_radial)
    if zone in ("R1", "R1core", "R1R2"):
        lo, hi = {"R1": (0.0, 2 / a), "R1core": (0.0, 1 / a), "R1R2": (1 / a, 2 / a)}[zone]
        t = np.linspace(-1.0, 1.0, n_angular)
        slope = np.sign(t) * (lo + (hi - lo) * np.abs(t)) if zone == "R1R2" else t * hi
        if zone == "R1R2":
            # both branches of the overlap wedge, |y|/|x| in [1/a, 2/a]
            s = np.linspace(lo, hi, n_angular)
            slope = np.concatenate([s, -s])
        theta = np.pi - np.arctan(slope)
        R, TH = np.meshgrid(r, theta, indexing="ij")
        pts = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
    elif zone in ("R3", "R3core", "R2R3"):
        x = r
        if zone == "R2R3":
            s = np.linspace(1.0, 2.0, n_angular)  # s = x y^2 / alpha
            X, S = np.meshgrid(x, np.concatenate([s, s]), indexing="ij")
            sign = np.concatenate([np.ones_like(s), -np.ones_like(s)])[None, :]
            Y = sign * np.sqrt(S * a / X)
        else:
            bmax = math.sqrt(a) if zone == "R3core" else math.sqrt(2 * a)
            bb = np.linspace(-bmax, bmax, n_angular)
            X, B = np.meshgrid(x, bb, indexing="ij")
            Y = B / np.sqrt(X)
        pts = np.column_stack([X.ravel(), Y.ravel()])
    elif zone == "R2core":
        # polar arc from the upper edge of the right wedge round to the R1 overlap
        th_lo, th_hi = math.atan(1 / a), math.pi - math.atan(2 / a)
        th = np.linspace(th_lo, th_hi, n_angular)
        th = np.concatenate([th, -th])
        R, TH = np.meshgrid(r, th, indexing="ij")
        arc = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
        # right wedge: at x-level, |y| log-spaced from sqrt(2 alpha / x) to x / alpha
        t = np.linspace(0.0, 1.0, n_angular)
        X, T = np.meshgrid(r, t, indexing="ij")
        ylo, yhi = np.sqrt(2 * a / X), X / a
        Y = ylo * (yhi / ylo) ** T
        wedge = np.column_stack([np.concatenate([X.ravel(), X.ravel()]), np.concatenate([Y.ravel(), -Y.ravel()])])
        pts = np.vstack([arc, wedge])
    else:
        raise GridError(f"unknown zone {zone!r}")
    x, y = pts[:, 0], pts[:, 1]
    if zone == "R1":
        from .geometry import r1_mask

        keep = r1_mask(x, y, a)
    elif zone == "R3":
        from .geometry import r3_mask

        keep = r3_mask(x, y, a)
    else:
        keep = zone_masks(spec, x, y)[zone]
    # radius window applies to |z|; the S1 wedges are indexed by x ~ |z|
    rr = np.hypot(x, y)
    keep &= rr >= r_lo * (1 - 1e-12)
    pts = pts[keep]
    if pts.shape[0] == 0:
        raise GridError(f"empty grid for zone {zone}")
    return pts


def disk_grid(radius: float, n: int = 400) -> np.ndarray:
    """Polar grid of the closed disk plus the origin."""
    r = np.linspace(0.0, radius, n)[1:]
    th = np.linspace(-np.pi, np.pi, 2 * n, endpoint=False)
    R, TH = np.meshgrid(r, th, indexing="ij")
    pts = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
    return np.vstack([[0.0, 0.0], pts])


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------
@dataclass
class ZoneResult:
    zone: str
    n_points: int
    worst_margin: float
    worst_normalized: float
    argmin: tuple
    argmin_in_R2sub1: bool
    m_sup: float

    def to_json(self) -> dict:
        return {
            "zone": self.zone,
            "n_points": self.n_points,
            "worst_margin": self.worst_margin,
            "worst_normalized": self.worst_normalized,
            "argmin": list(self.argmin),
            "argmin_in_R2sub1": self.argmin_in_R2sub1,
            "m_sup": self.m_sup,
        }


@dataclass
class VerificationReport:
    """Outcome of :func:`certify`.

    ``certified`` holds iff every zone's worst margin is positive, ``M > 0``,
    the seam and residual checks pass, and the margins are stable under grid
    doubling.
    """

    spec: LyapunovSpec
    model: dict
    zones: dict
    M: float
    M_sup: float
    m1: float
    b: float
    gamma: float
    seam_max: float
    residuals: dict
    grid_change: float
    grid_sensitive: bool
    n_points: int
    certified: bool
    notes: list = field(default_factory=list)
    bvp: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict, repr=False)

    @property
    def worst_margin(self) -> float:
        return min(z.worst_margin for z in self.zones.values())

    @property
    def worst_zone(self) -> str:
        return min(self.zones.values(), key=lambda z: z.worst_margin).zone

    def to_json(self) -> dict:
        return {
            "spec": self.spec.to_json(),
            "model": self.model,
            "certified": self.certified,
            "M": self.M,
            "M_sup": self.M_sup,
            "m1": self.m1,
            "b": self.b,
            "gamma": self.gamma,
            "worst_margin": self.worst_margin,
            "worst_zone": self.worst_zone,
            "zones": {k: v.to_json() for k, v in self.zones.items()},
            "seam_max": self.seam_max,
            "residuals": self.residuals,
            "grid_change": self.grid_change,
            "grid_sensitive": self.grid_sensitive,
            "n_points": self.n_points,
            "bvp": self.bvp,
            "notes": self.notes
            + ["margins are floating-point evidence on a finite grid, not an interval-arithmetic proof"],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "region", "LV", "V", "margin"])
            for zone, d in self.samples.items():
                for row in zip(d["x"], d["y"], d["LV"], d["V"], d["margin"]):
                    w.writerow([f"{row[0]:.17g}", f"{row[1]:.17g}", zone] + [f"{v:.17g}" for v in row[2:]])


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------
def _bisect_M(neg_LV, Vg, upper, iters=40):
    """Largest ``M`` in ``[0, upper]`` with ``neg_LV - M Vg >= 0`` everywhere (bisection)."""
    if np.any(neg_LV < 0):
        return 0.0
    lo, hi = 0.0, upper
    if np.all(neg_LV - hi * Vg >= 0):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.all(neg_LV - mid * Vg >= 0):
            lo = mid
        else:
            hi = mid
    return lo


def _sweep(V: GlobalLyapunov, model, n_radial, n_angular, r_hi_factor):
    spec = V.spec
    out = {}
    for zone in OUTER_ZONES:
        pts = build_grid(spec, zone, 2 * spec.rho, r_hi_factor * spec.rho, n_radial, n_angular)
        jet = V.jet(pts)
        LV = apply(FULL_L, model, jet, pts)
        out[zone] = {"x": pts[:, 0], "y": pts[:, 1], "LV": LV, "V": jet.value}
    return out


def _zone_results(spec, sweep, M, gamma):
    res = {}
    for zone, d in sweep.items():
        Vg = d["V"] ** gamma
        marg = -d["LV"] - M * Vg
        d["margin"] = marg
        i = int(np.argmin(marg))
        x, y = float(d["x"][i]), float(d["y"][i])
        res[zone] = ZoneResult(
            zone,
            int(marg.size),
            float(marg[i]),
            float(np.min(marg / Vg)),
            (x, y),
            bool(r2sub1_mask(np.array(x), np.array(y), spec.alpha)),
            float(np.min(-d["LV"] / Vg)),
        )
    return res


def _ms(sweep, gamma, m1):
    neg = np.concatenate([-d["LV"] for d in sweep.values()])
    Vg = np.concatenate([d["V"] ** gamma for d in sweep.values()])
    return _bisect_M(neg, Vg, m1)


def residual_checks(spec: LyapunovSpec, g: BvpSolution, n: int = 10000, seed: int = 0) -> dict:
    """Relative PDE residuals of the transport and diffusive equations on random samples."""
    rng = np.random.default_rng(seed)
    a = spec.alpha
    # transport region: polar samples outside the disk where R2 is unbounded
    r = np.geomspace(2 * (a * a + 1), 1e6, n)
    th = rng.uniform(np.arctan(1 / a), np.pi - np.arctan(1 / a), n) * rng.choice([-1, 1], n)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    jet2 = v2(spec, pts)
    h = transport_source(spec, pts)
    res_t = float(np.max(np.abs(apply(TRANSPORT_T, spec, jet2, pts) + h) / h))
    # diffusive region: x-levels times w = sqrt(x) y in [-sqrt(2 alpha), sqrt(2 alpha)]
    x = np.geomspace(2 * a, 1e6, n)
    w = rng.uniform(-1, 1, n) * math.sqrt(2 * a)
    pts3 = np.column_stack([x, w / np.sqrt(x)])
    jet3 = v3(spec, g, pts3, check=False)
    src = spec.c1 * x ** (spec.delta_hat + 1)
    scale3 = np.abs(x * x * jet3.dx) + np.abs(2 * pts3[:, 0] * pts3[:, 1] * jet3.dy) + np.abs(spec.sigma_y * jet3.dyy) + src
    res_d = float(np.max(np.abs(apply(DIFFUSIVE_A, spec, jet3, pts3) + src) / scale3))
    return {"transport": res_t, "diffusive": res_d, "bvp_tolerance": g.tolerance}


def certify(
    spec: LyapunovSpec,
    g: BvpSolution | None = None,
    n_radial: int = 160,
    n_angular: int = 81,
    r_hi_factor: float = 1e4,
    model=None,
    check_grid: bool = True,
    n_disk: int = 300,
) -> VerificationReport:
    """Certify ``L V <= -M V^gamma + b`` on a grid.

    Parameters
    ----------
    spec : LyapunovSpec
        Constants of ``V``; ``M`` and ``b`` are ignored and recomputed.
    g : BvpSolution, optional
        BVP solution matching ``spec``.
    n_radial, n_angular : int
        Grid density per zone (``R2core`` uses twice ``n_angular``).
    r_hi_factor : float
        Outer radius in units of ``rho``.
    model : object, optional
        ``sigma_x``/``sigma_y`` of the dynamics being certified; defaults to the
        spec's own.  A different model certifies the same ``V`` against other
        dynamics (e.g. without noise).
    check_grid : bool
        Repeat the sweep with doubled densities and require < 5% change.
    n_disk : int
        Radial resolution of the disk grid used for ``b``.

    Returns
    -------
    VerificationReport
    """
    g = g if g is not None else bvp_for(spec)
    V = GlobalLyapunov(spec, g)
    model = model if model is not None else spec
    gamma = spec.gamma
    m1 = spec.alpha * spec.delta / (2 * math.sqrt(spec.alpha**2 + 4))
    sweep = _sweep(V, model, n_radial, n_angular, r_hi_factor)
    M_sup = _ms(sweep, gamma, m1)
    M = M_FRACTION * M_sup
    zones = _zone_results(spec, sweep, M, gamma)
    notes = [f"M is {M_FRACTION} times the bisected supremum so the worst grid margin is strictly positive"]

    grid_change, sensitive = 0.0, False
    if check_grid:
        fine = _sweep(V, model, 2 * n_radial, 2 * n_angular - 1, r_hi_factor)
        M_fine = M_FRACTION * _ms(fine, gamma, m1)
        zf = _zone_results(spec, fine, M_fine, gamma)
        changes = []
        for k in zones:
            a, b_ = zones[k].worst_margin, zf[k].worst_margin
            changes.append(abs(a - b_) / max(abs(a), abs(b_), 1e-300))
        changes.append(abs(M_fine - M) / max(M, M_fine, 1e-300))
        grid_change = float(max(changes))
        sensitive = grid_change >= GRID_TOL
        if sensitive:
            notes.append("grid-sensitive: doubling the grid changed margins by more than 5%")

    # b absorbs the disk |z| <= 2 rho where only smoothness is claimed
    disk = disk_grid(2 * spec.rho, n_disk)
    jd = V.jet(disk)
    b = float(max(0.0, np.max(apply(FULL_L, model, jd, disk) + M * jd.value**gamma)))

    seams = check_seams(spec, g, V=V)
    resid = residual_checks(spec, g, n=2000)
    structural = seams["ok"] and resid["transport"] < 1e-8 and resid["diffusive"] < 10 * g.tolerance
    n_points = int(sum(z.n_points for z in zones.values()))
    certified = bool(M > 0 and all(z.worst_margin > 0 for z in zones.values()) and structural and not sensitive)
    return VerificationReport(
        spec=spec.with_(M=M, b=b),
        model={"sigma_x": float(model.sigma_x), "sigma_y": float(model.sigma_y)},
        zones=zones,
        M=M,
        M_sup=M_sup,
        m1=m1,
        b=b,
        gamma=gamma,
        seam_max=seams["max_discrepancy"],
        residuals=resid,
        grid_change=grid_change,
        grid_sensitive=sensitive,
        n_points=n_points,
        certified=certified,
        notes=notes,
        bvp=g.metadata(),
        samples=sweep,
    )


# ---------------------------------------------------------------------------
# seams
# ---------------------------------------------------------------------------
def _rel(a, b, floor):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_seams(spec: LyapunovSpec, g: BvpSolution | None = None, n: int = 100, V: GlobalLyapunov | None = None) -> dict:
    """Compare one-sided jets across every patch seam and test the convex sandwich.

    Seams: ``h1 = 1`` (``V1`` vs ``v1``), ``h1 = 0`` (``V1`` vs ``v2``),
    ``h2 = 1`` (``V2`` vs ``v3``), ``h2 = 0`` (``V2`` vs ``v2``), and the filler
    edge ``|z| = 2 rho`` (``V`` vs ``V~``).
    """
    V = V if V is not None else GlobalLyapunov(spec, g)
    a = spec.alpha
    x = -np.geomspace(2 * spec.rho, 1e4 * spec.rho, n // 2)
    xr = -x
    sgn = np.where(np.arange(n // 2) % 2 == 0, 1.0, -1.0)
    seams = {
        "h1=1": ("R1R2", "R1core", np.column_stack([x, sgn * np.abs(x) / a])),
        "h1=0": ("R1R2", "R2core", np.column_stack([x, sgn * 2 * np.abs(x) / a])),
        "h2=1": ("R2R3", "R3core", np.column_stack([xr, sgn * np.sqrt(a / xr)])),
        "h2=0": ("R2R3", "R2core", np.column_stack([xr, sgn * np.sqrt(2 * a / xr)])),
    }
    report = {}
    worst = 0.0
    for name, (blend, side, pts) in seams.items():
        jb, js = V.piece(blend, pts), V.piece(side, pts)
        floor = 1e-300
        d = max(float(np.max(_rel(getattr(jb, f), getattr(js, f), floor))) for f in ("value", "dx", "dy", "dxx", "dyy", "dxy"))
        report[name] = d
        worst = max(worst, d)
    # filler edge
    th = np.linspace(-np.pi, np.pi, n, endpoint=False)
    circle = np.column_stack([2 * spec.rho * np.cos(th), 2 * spec.rho * np.sin(th)]) * (1 + 1e-15)
    jv, jt = V.jet(circle), V.tilde(circle[:, 0], circle[:, 1])
    d = max(float(np.max(_rel(getattr(jv, f), getattr(jt, f), 1e-300))) for f in ("value", "dx", "dy"))
    report["filler"] = d
    worst = max(worst, d)
    # sandwich inside the overlaps
    sandwich_ok = True
    for blend, lo_piece, hi_piece, pts in (
        ("R1R2", "R1core", "R2core", np.column_stack([x, sgn * 1.5 * np.abs(x) / a])),
        ("R2R3", "R3core", "R2core", np.column_stack([xr, sgn * np.sqrt(1.5 * a / xr)])),
    ):
        vb = V.piece(blend, pts).value
        va, vc = V.piece(lo_piece, pts).value, V.piece(hi_piece, pts).value
        lo, hi = np.minimum(va, vc), np.maximum(va, vc)
        tol = 1e-12 * hi
        sandwich_ok &= bool(np.all((vb >= lo - tol) & (vb <= hi + tol)))
    return {"seams": report, "max_discrepancy": worst, "sandwich": sandwich_ok, "ok": bool(worst <= 1e-6 and sandwich_ok)}
