"""Empirical probes of moment bounds, mixing and the invariant measure.

Everything here is Monte-Carlo on top of :mod:`superlyap.sde`.  The TV
quantities are histogram proxies on a fixed grid, not estimates of the true
total-variation distance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, stats

from .lyapunov import GlobalLyapunov, LyapunovSpec
from .sde import IntegratorConfig, ModelParams, rng_for, run_ensemble

DEFAULT_WINDOW = (-6.0, 6.0, -6.0, 6.0)


# ---------------------------------------------------------------------------
# moment bounds
# ---------------------------------------------------------------------------
def k_t(spec, M: float, b: float, t: float) -> float:
    """Uniform bound ``K_t`` on ``E_z V(Z_t)``.

    ``K_t = max{(2b/M)^{1/gamma}, (M (gamma-1) t / 2)^{-1/(gamma-1)}}``.

    Parameters
    ----------
    spec : LyapunovSpec or float
        Source of ``gamma`` (a bare number is taken as ``gamma``).
    M, b : float
        Super-Lyapunov constants, ``M > 0`` and ``b >= 0``.
    t : float
        Positive time; ``inf`` gives the limit ``(2b/M)^{1/gamma}``.
    """
    gamma = float(spec) if np.isscalar(spec) else spec.gamma
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    if not M > 0 or b < 0:
        raise ValueError("need M > 0 and b >= 0")
    if not t > 0:
        raise ValueError("K_t is defined for t > 0 only")
    floor = (2 * b / M) ** (1 / gamma)
    if math.isinf(t):
        return floor
    return max(floor, (M * (gamma - 1) * t / 2) ** (-1 / (gamma - 1)))


@dataclass
class MomentCheck:
    z0: tuple
    t: float
    N: int
    estimate: float
    std_error: float
    K_t: float
    threshold: float
    passed: bool
    failures: int

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def moment_bound_check(
    spec: LyapunovSpec,
    report,
    z0,
    t: float,
    N: int,
    config: IntegratorConfig | None = None,
    V: GlobalLyapunov | None = None,
    slack: float = 0.1,
) -> MomentCheck:
    """Compare the ensemble mean of ``V(Z_t)`` from ``z0`` with ``K_t``.

    Passes when ``mean <= K_t (1 + 3 SE/mean + slack)``.  ``report`` must be a
    certified :class:`~superlyap.verifier.VerificationReport` for ``spec``.
    """
    if not getattr(report, "certified", False):
        raise ValueError("moment bound needs a certified report")
    K = k_t(spec, report.M, report.b, t)
    V = V or GlobalLyapunov(spec)
    config = config or IntegratorConfig()
    params = ModelParams(spec.sigma_x, spec.sigma_y)
    ens = run_ensemble(params, config, z0, t, N, functionals={"V": lambda x, y: V.value(np.column_stack([x, y]))})
    s = ens.summary()
    est, se = s["V_mean"], s["V_se"]
    thr = K * (1 + 3 * se / est + slack) if est > 0 else K * (1 + slack)
    fails = int(np.sum(ens.exploded))
    return MomentCheck(tuple(np.asarray(z0, float).tolist()), t, N, est, se, K, thr, bool(est <= thr and fails == 0), fails)


# ---------------------------------------------------------------------------
# occupation histograms
# ---------------------------------------------------------------------------
@dataclass
class OccupationHistogram:
    """Counts of visited states on a rectangular window.

    ``total`` counts every recorded sample, including those outside the
    window and from exploded paths, so ``in_window + out_window == total``.
    """

    window: tuple = DEFAULT_WINDOW
    bins: tuple = (200, 200)
    burn_in: float = 0.0
    counts: np.ndarray = None
    total: int = 0
    right_half: int = 0

    def __post_init__(self):
        x0, x1, y0, y1 = self.window
        if not (x1 > x0 and y1 > y0):
            raise ValueError("empty window")
        if self.counts is None:
            self.counts = np.zeros(self.bins, dtype=np.int64)

    @property
    def edges(self):
        x0, x1, y0, y1 = self.window
        return np.linspace(x0, x1, self.bins[0] + 1), np.linspace(y0, y1, self.bins[1] + 1)

    @property
    def widths(self):
        x0, x1, y0, y1 = self.window
        return (x1 - x0) / self.bins[0], (y1 - y0) / self.bins[1]

    @property
    def in_window(self) -> int:
        return int(self.counts.sum())

    @property
    def out_window(self) -> int:
        return int(self.total - self.in_window)

    def empty(self) -> "OccupationHistogram":
        return OccupationHistogram(self.window, self.bins, self.burn_in)

    def add(self, x, y, m: int | None = None) -> None:
        """Record states ``(x, y)``; ``m`` is the number of paths sampled (defaults to ``len(x)``)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        c, _, _ = np.histogram2d(x, y, bins=self.edges)
        self.counts += c.astype(np.int64)
        self.total += int(x.size if m is None else m)
        self.right_half += int(np.sum(x >= 0))

    def merge(self, other: "OccupationHistogram") -> "OccupationHistogram":
        if other.window != self.window or tuple(other.bins) != tuple(self.bins):
            raise ValueError("histograms on different grids")
        return OccupationHistogram(
            self.window, self.bins, self.burn_in, self.counts + other.counts, self.total + other.total, self.right_half + other.right_half
        )

    def mass(self) -> np.ndarray:
        """Bin probabilities (they sum to the in-window fraction)."""
        return self.counts / max(self.total, 1)

    def density(self) -> np.ndarray:
        wx, wy = self.widths
        return self.mass() / (wx * wy)

    @property
    def right_half_mass(self) -> float:
        return self.right_half / max(self.total, 1)

    def coarsen(self, fx: int, fy: int | None = None) -> np.ndarray:
        """Counts summed over ``fx x fy`` blocks of bins."""
        fy = fx if fy is None else fy
        nx, ny = self.bins
        if nx % fx or ny % fy:
            raise ValueError("coarsening factor must divide the bin counts")
        return self.counts.reshape(nx // fx, fx, ny // fy, fy).sum(axis=(1, 3))

    def write_csv(self, path) -> None:
        ex, ey = self.edges
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_lo", "x_hi", "y_lo", "y_hi", "count", "density"])
            d = self.density()
            for i in range(self.bins[0]):
                for j in range(self.bins[1]):
                    w.writerow([ex[i], ex[i + 1], ey[j], ey[j + 1], int(self.counts[i, j]), f"{d[i, j]:.10g}"])

    def summary(self) -> dict:
        return {
            "window": list(self.window),
            "bins": list(self.bins),
            "burn_in": self.burn_in,
            "total": self.total,
            "in_window": self.in_window,
            "out_window": self.out_window,
            "right_half_mass": self.right_half_mass,
        }


def median_return_time(params: ModelParams, config: IntegratorConfig, z0, N: int = 200, radius: float = 1.0, t_cap: float = 50.0) -> float:
    """Empirical median of the first time ``|Z_t| <= radius`` from ``z0``."""
    h = config.h0
    ens_cfg = replace(config, seed=config.seed + 7919)
    x, y = np.broadcast_to(np.asarray(z0, float), (N, 2)).T.copy()
    hit = np.where(np.hypot(x, y) <= radius, 0.0, np.inf)
    from .sde import advance

    rng = rng_for(ens_cfg.seed, "paths", 0)
    t = 0.0
    while np.any(np.isinf(hit)) and t < t_cap:
        dw = rng.standard_normal((2, N)) * math.sqrt(h)
        x, y, e = advance(params, ens_cfg, x, y, h, dw[0], dw[1], rng)
        t += h
        hit[np.isinf(hit) & (np.hypot(x, y) <= radius)] = t
    return float(np.median(hit))


def invariant_histogram(
    params: ModelParams,
    config: IntegratorConfig,
    t_end: float,
    burn_in: float | None = None,
    N: int = 1000,
    z0=(-1.0, 0.5),
    window: tuple = DEFAULT_WINDOW,
    bins: tuple = (200, 200),
) -> OccupationHistogram:
    """Occupation measure of ``N`` paths on ``[burn_in, t_end]``.

    ``N = 1`` is the single-long-path mode.  The default burn-in is ten times
    the empirical median return time to the unit disk from ``z0``.
    """
    if not params.sigma_y > 0:
        raise ValueError("the process is not ergodic without noise in y")
    if burn_in is None:
        burn_in = 10 * median_return_time(params, config, z0)
    if not burn_in < t_end:
        raise ValueError("burn-in must end before t_end")
    occ = OccupationHistogram(tuple(window), tuple(bins), float(burn_in))
    ens = run_ensemble(params, config, z0, t_end, N, occupation=occ)
    return ens.occupation


# ---------------------------------------------------------------------------
# TV decay
# ---------------------------------------------------------------------------
def _bin_index(pts, window, bins):
    """Flat bin index per point; points outside the window share one extra bin."""
    x0, x1, y0, y1 = window
    nx, ny = bins
    i = np.floor((pts[:, 0] - x0) / (x1 - x0) * nx).astype(np.int64)
    j = np.floor((pts[:, 1] - y0) / (y1 - y0) * ny).astype(np.int64)
    inside = (i >= 0) & (i < nx) & (j >= 0) & (j < ny) & np.isfinite(pts).all(axis=1)
    return np.where(inside, i * ny + j, nx * ny)


def _tv(ia, ib, nb, wa=None, wb=None, weights=None):
    pa = np.bincount(ia, weights=wa, minlength=nb) / (ia.size if wa is None else wa.sum())
    pb = np.bincount(ib, weights=wb, minlength=nb) / (ib.size if wb is None else wb.sum())
    d = np.abs(pa - pb)
    if weights is not None:
        d = d * weights
    return 0.5 * float(d.sum())


@dataclass
class TVSeries:
    times: list
    tv: list
    se: list
    weighted: list = field(default_factory=list)
    undersampled: list = field(default_factory=list)
    slope: float = float("nan")
    nonincreasing: bool = False
    beta: float = 0.0

    def to_json(self) -> dict:
        return dict(self.__dict__)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "tv", "se", "weighted", "undersampled_fraction"])
            for k, t in enumerate(self.times):
                wv = self.weighted[k] if self.weighted else ""
                w.writerow([t, self.tv[k], self.se[k], wv, self.undersampled[k]])


def tv_decay(
    params: ModelParams,
    config: IntegratorConfig,
    init_a,
    init_b,
    checkpoints=(1.0, 2.0, 4.0, 8.0),
    N: int = 10000,
    window: tuple = DEFAULT_WINDOW,
    bins: tuple = (200, 200),
    n_boot: int = 200,
    beta: float = 0.0,
    V=None,
    min_count: int = 5,
) -> TVSeries:
    """Histogram TV proxy between two ensembles at each checkpoint.

    The proxy is half the L1 distance between bin frequencies on a common
    grid, with all out-of-window mass lumped into one extra bin.  Standard
    errors come from a path bootstrap.  With ``beta > 0`` the weighted
    version uses ``1 + beta V`` at bin centres (and at the worst corner of the
    window for the outside bin) as a proxy for the weighted metric.

    ``undersampled`` is the fraction of occupied bins with fewer than
    ``min_count`` samples in the pooled ensembles.
    """
    if not params.sigma_y > 0:
        raise ValueError("TV decay needs noise in y")
    times = sorted(float(c) for c in checkpoints)
    ea = run_ensemble(params, config, init_a, times[-1], N, checkpoints=times)
    eb = run_ensemble(params, replace(config, seed=config.seed + 1), init_b, times[-1], N, checkpoints=times)
    nb = bins[0] * bins[1] + 1
    wts = None
    if beta > 0:
        if V is None:
            raise ValueError("weighted proxy needs V")
        ex = np.linspace(window[0], window[1], bins[0] + 1)
        ey = np.linspace(window[2], window[3], bins[1] + 1)
        cx, cy = np.meshgrid(0.5 * (ex[1:] + ex[:-1]), 0.5 * (ey[1:] + ey[:-1]), indexing="ij")
        vc = V.value(np.column_stack([cx.ravel(), cy.ravel()]))
        corners = np.array([[window[i], window[j]] for i in (0, 1) for j in (2, 3)])
        wts = 1 + beta * np.append(vc, V.value(corners).max())
    rng = rng_for(config.seed, "init", 99)
    out = TVSeries(times, [], [], beta=beta)
    for t in times:
        ia = _bin_index(ea.snapshots[t], window, bins)
        ib = _bin_index(eb.snapshots[t], window, bins)
        out.tv.append(_tv(ia, ib, nb))
        if wts is not None:
            out.weighted.append(_tv(ia, ib, nb, weights=wts))
        boots = [_tv(ia[rng.integers(0, ia.size, ia.size)], ib[rng.integers(0, ib.size, ib.size)], nb) for _ in range(n_boot)]
        out.se.append(float(np.std(boots, ddof=1)))
        pooled = np.bincount(np.concatenate([ia, ib]), minlength=nb)[:-1]
        occ = pooled[pooled > 0]
        out.undersampled.append(float(np.mean(occ < min_count)) if occ.size else 1.0)
    tv = np.array(out.tv)
    se = np.array(out.se)
    out.nonincreasing = bool(np.all(np.diff(tv) <= 2 * np.hypot(se[1:], se[:-1])))
    pos = tv > 0
    if pos.sum() >= 2:
        out.slope = float(np.polyfit(np.array(times)[pos], np.log(tv[pos]), 1)[0])
    return out


# ---------------------------------------------------------------------------
# minorization
# ---------------------------------------------------------------------------
def start_grid(R: float, n: int = 5) -> np.ndarray:
    """``n x n`` grid on the square inscribed in the disk ``|z| <= R``."""
    s = np.linspace(-R / math.sqrt(2), R / math.sqrt(2), n)
    gx, gy = np.meshgrid(s, s, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass
class MinorizationResult:
    inf_mass: float
    ci: tuple
    argmin: tuple
    table: list
    zero_hit_starts: list
    mode: str = "fraction"

    def to_json(self) -> dict:
        return dict(self.__dict__)

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def minorization_probe(
    params: ModelParams,
    config: IntegratorConfig,
    R: float = 5.0,
    z_star=(-3.0, 1.0),
    radius: float = 0.5,
    T: float = 5.0,
    N: int = 1000,
    grid: int = 5,
    mode: str = "fraction",
    confidence: float = 0.95,
) -> MinorizationResult:
    """Fraction of paths near ``z_star`` at time ``T`` for each start on a grid.

    ``mode="kde"`` replaces the hit fraction by a Gaussian KDE (Silverman
    bandwidth) density at ``z_star`` times the area of the neighbourhood; its
    interval is then the binomial one of the raw fraction.
    """
    if not params.sigma_y > 0:
        raise ValueError("minorization needs noise in y")
    zs = np.asarray(z_star, dtype=float)
    if params.sigma_x == 0 and zs[0] >= 0:
        raise ValueError("with sigma_x = 0 the target must lie in the left half-plane")
    if mode not in ("fraction", "kde"):
        raise ValueError("mode must be 'fraction' or 'kde'")
    starts = start_grid(R, grid)
    ens = run_ensemble(params, config, np.repeat(starts, N, axis=0), T, starts.shape[0] * N)
    term = ens.terminal.reshape(starts.shape[0], N, 2)
    table, zero = [], []
    for k, z0 in enumerate(starts):
        pts = term[k]
        ok = np.isfinite(pts).all(axis=1)
        hits = int(np.sum(np.hypot(pts[ok, 0] - zs[0], pts[ok, 1] - zs[1]) <= radius))
        ci = stats.binomtest(hits, N).proportion_ci(confidence, method="exact")
        frac = hits / N
        if mode == "kde":
            try:
                kde = stats.gaussian_kde(pts[ok].T, bw_method="silverman")
                frac = float(kde(zs)[0]) * math.pi * radius**2
            except (np.linalg.LinAlgError, ValueError):
                frac = 0.0
        table.append({"start": z0.tolist(), "hits": hits, "mass": frac, "ci": [float(ci.low), float(ci.high)]})
        if hits == 0:
            zero.append(z0.tolist())
    k = int(np.argmin([r["mass"] for r in table]))
    return MinorizationResult(table[k]["mass"], tuple(table[k]["ci"]), tuple(table[k]["start"]), table, zero, mode)


# ---------------------------------------------------------------------------
# comparison principle
# ---------------------------------------------------------------------------
def comparison_check(f, t, phi, dphi=None, psi0: float | None = None, tol: float = 1e-8, probe=None) -> bool:
    """Check ``phi(t) <= psi(t)`` where ``psi' = f(psi)``, ``psi(0) = phi(0)``.

    Parameters
    ----------
    f : callable
        Right-hand side, required to be nonincreasing on the probed range.
    t, phi : array_like
        Increasing sample times starting at 0 and the sub-solution values.
    dphi : array_like, optional
        Derivatives of ``phi``; when given, ``dphi <= f(phi)`` is checked too.
    psi0 : float, optional
        Initial value of ``psi``; must equal ``phi(0)``.
    probe : array_like, optional
        Points at which monotonicity of ``f`` is checked (default: a grid over
        the range of ``phi`` and ``psi``).

    Raises
    ------
    ValueError
        If a precondition fails.
    """
    t = np.asarray(t, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ValueError("times must start at 0 and increase")
    psi0 = float(phi[0]) if psi0 is None else float(psi0)
    if abs(phi[0] - psi0) > tol * max(1.0, abs(psi0)):
        raise ValueError("phi(0) must equal psi(0)")
    sol = integrate.solve_ivp(lambda s, u: [f(u[0])], (0.0, t[-1]), [psi0], t_eval=t, rtol=1e-10, atol=1e-12)
    if not sol.success:
        raise ValueError(f"comparison ODE failed: {sol.message}")
    psi = sol.y[0]
    if probe is None:
        lo, hi = min(phi.min(), psi.min()), max(phi.max(), psi.max())
        probe = np.linspace(lo, hi, 200) if hi > lo else np.array([lo])
    fp = np.array([f(u) for u in np.sort(np.asarray(probe, float))])
    if np.any(np.diff(fp) > tol * np.maximum(1.0, np.abs(fp[1:]))):
        raise ValueError("f must be nonincreasing")
    if dphi is not None:
        fv = np.array([f(u) for u in phi])
        if np.any(np.asarray(dphi, float) > fv + tol * np.maximum(1.0, np.abs(fv))):
            raise ValueError("phi is not a sub-solution")
    return bool(np.all(phi <= psi + tol * np.maximum(1.0, np.abs(psi))))
