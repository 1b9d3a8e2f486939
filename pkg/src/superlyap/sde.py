"""Simulation of the planar SDE, the hat system and the linear exit process.

The full system is

    dX = (X^2 - Y^2) dt + sqrt(2 sx) dW1,    dY = 2 X Y dt + sqrt(2 sy) dW2.

Its drift is quadratic, so the default scheme is tamed Euler-Maruyama with
step halving: a step ``h`` is split (with Brownian-bridge refinement of the
noise) until ``h |b(z)| <= 1 + rel |z|``.  The time-changed process
``dZ = (5/2) Z dT + sqrt(2 sy) dW`` is sampled exactly.

Random numbers come from counter-based Philox streams keyed by
``(seed, purpose, chunk)``, so ensembles do not depend on thread count.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

PURPOSES = {"init": 0, "paths": 1, "exit": 2, "hat": 3, "bridge": 4, "strong": 5}
CHUNK = 4096


class IntegrationError(RuntimeError):
    """Raised for invalid inputs (e.g. NaN states) under the ``raise`` policy."""


@dataclass(frozen=True)
class ModelParams:
    """Noise intensities of the planar SDE."""

    sigma_x: float = 1.0
    sigma_y: float = 1.0

    def __post_init__(self):
        if self.sigma_x < 0 or self.sigma_y < 0:
            raise ValueError("noise intensities must be non-negative")

    @property
    def elliptic(self) -> bool:
        return self.sigma_x > 0 and self.sigma_y > 0

    @property
    def hypoelliptic(self) -> bool:
        return self.sigma_x == 0 and self.sigma_y > 0

    @property
    def deterministic(self) -> bool:
        return self.sigma_x == 0 and self.sigma_y == 0

    def to_json(self) -> dict:
        return {**asdict(self), "elliptic": self.elliptic, "hypoelliptic": self.hypoelliptic}


@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator settings.

    Attributes
    ----------
    h0 : float
        Base step.
    mode : {"tamed", "euler"}
        ``"euler"`` disables taming (for failure demonstrations).
    adaptive : bool
        Halve steps until ``h |drift| <= 1 + rel * |z|``.
    rel : float
        Relative displacement allowance. The taming denominator uses the same
        scale, ``1 + h |drift| / (1 + rel |z|)``. ``rel=0`` gives the classical
        scheme whose drift displacement is at most 1 per step; a positive value
        keeps the cost of a large excursion bounded by a number of steps per
        orbit instead of its length.
    max_halvings : int
        Depth limit of the halving; deeper requests count as explosions.
    t_max : float
        Hard cap on simulated time.
    blowup_radius : float
        Paths with ``|z|`` beyond this (or non-finite) are flagged as exploded.
    nan_policy : {"flag", "raise"}
    seed : int
    chunk : int
        Paths per RNG stream.
    threads : int or None
        Worker threads (``None``: one per core).
    """

    h0: float = 5e-3
    mode: str = "tamed"
    adaptive: bool = True
    rel: float = 0.05
    max_halvings: int = 40
    t_max: float = 1e4
    blowup_radius: float = 1e50
    nan_policy: str = "flag"
    seed: int = 0
    chunk: int = CHUNK
    threads: int | None = None

    def __post_init__(self):
        if not self.h0 > 0:
            raise ValueError("h0 must be positive")
        if self.rel < 0:
            raise ValueError("rel must be non-negative")
        if self.mode not in ("tamed", "euler"):
            raise ValueError("mode must be 'tamed' or 'euler'")
        if self.nan_policy not in ("flag", "raise"):
            raise ValueError("nan_policy must be 'flag' or 'raise'")

    def to_json(self) -> dict:
        return asdict(self)


def rng_for(seed: int, purpose: str, chunk: int = 0) -> np.random.Generator:
    """Independent Philox stream for ``(seed, purpose, chunk)``."""
    ss = np.random.SeedSequence([int(seed), PURPOSES[purpose], int(chunk)])
    return np.random.Generator(np.random.Philox(ss))


def drift(x, y):
    return x * x - y * y, 2.0 * x * y


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------
def _scale(rel, x, y):
    return 1.0 + rel * np.hypot(x, y) if rel else 1.0


def _tamed_update(params, mode, x, y, h, dwx, dwy, rel=0.0):
    bx, by = drift(x, y)
    if mode == "tamed":
        fac = h / (1.0 + h * np.hypot(bx, by) / _scale(rel, x, y))
    else:
        fac = h
    return (
        x + fac * bx + math.sqrt(2 * params.sigma_x) * dwx,
        y + fac * by + math.sqrt(2 * params.sigma_y) * dwy,
    )


def advance(params: ModelParams, config: IntegratorConfig, x, y, h: float, dwx, dwy, rng=None):
    """Advance arrays of states over one step ``h`` with Brownian increments ``dw``.

    When ``config.adaptive`` is set each path is subdivided into dyadic
    pieces with ``h_i |b| <= 1 + rel |z|``; intermediate Brownian values come from the
    exact bridge given the remaining increment.

    Returns
    -------
    x, y : ndarray
    exploded : ndarray of bool
    """
    x = np.array(x, dtype=float, copy=True)
    y = np.array(y, dtype=float, copy=True)
    n = x.size
    exploded = ~(np.isfinite(x) & np.isfinite(y))
    if np.any(exploded) and config.nan_policy == "raise":
        raise IntegrationError("non-finite state")
    t_rem = np.full(n, float(h))
    wx = np.array(dwx, dtype=float, copy=True).reshape(n)
    wy = np.array(dwy, dtype=float, copy=True).reshape(n)
    active = np.flatnonzero(~exploded)
    h_min = h / 2.0**config.max_halvings
    while active.size:
        xa, ya = x[active], y[active]
        tr = t_rem[active]
        if config.adaptive:
            b = np.hypot(*drift(xa, ya))
            with np.errstate(divide="ignore"):
                k = np.ceil(np.log2(np.maximum(tr * b / _scale(config.rel, xa, ya), 1.0)))
            hs = tr / 2.0**k
            too_deep = hs < h_min * (1 - 1e-12)
        else:
            hs = tr
            too_deep = np.zeros(active.size, bool)
        split = hs < tr * (1 - 1e-15)
        dx, dy = wx[active], wy[active]
        if np.any(split):
            if rng is None:
                rng = rng_for(config.seed, "bridge")
            frac = np.where(split, hs / tr, 1.0)
            sd = np.sqrt(np.where(split, hs * (tr - hs) / tr, 0.0))
            dx = dx * frac + sd * rng.standard_normal(active.size)
            dy = dy * frac + sd * rng.standard_normal(active.size)
        xn, yn = _tamed_update(params, config.mode, xa, ya, hs, dx, dy, config.rel)
        x[active], y[active] = xn, yn
        wx[active] -= dx
        wy[active] -= dy
        t_rem[active] = np.where(split, tr - hs, 0.0)
        bad = too_deep | ~(np.isfinite(xn) & np.isfinite(yn)) | (np.hypot(xn, yn) > config.blowup_radius)
        if np.any(bad):
            if config.nan_policy == "raise" and np.any(~np.isfinite(xn[bad])):
                raise IntegrationError("non-finite state produced")
            exploded[active[bad]] = True
        keep = (t_rem[active] > 0) & ~bad
        active = active[keep]
    return x, y, exploded


def step_full(params: ModelParams, config: IntegratorConfig, z, h: float, noise, rng=None):
    """One (possibly subdivided) tamed Euler step from ``z``.

    Parameters
    ----------
    z : Point, pair or (n, 2) array
    h : float
        Step, positive.
    noise : pair
        Standard normal draws ``(N1, N2)``; the increments are ``sqrt(h) N``.
    rng : Generator, optional
        Source for bridge refinements when the step is subdivided.

    Returns
    -------
    (x, y) with the shapes of the input coordinates.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    from .lyapunov import coords

    x, y = coords(z)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise IntegrationError("NaN or infinite input state")
    shape = np.shape(x)
    n1, n2 = (np.asarray(v, dtype=float) for v in noise)
    sh = math.sqrt(h)
    xn, yn, _ = advance(params, config, np.ravel(x), np.ravel(y), h, np.ravel(n1) * sh, np.ravel(n2) * sh, rng)
    return xn.reshape(shape), yn.reshape(shape)


def integrate_with_increments(params, config, z0, dW, h):
    """Integrate ``(n, 2)`` starts with prescribed increments ``dW[k, i, j]``."""
    z0 = np.asarray(z0, dtype=float)
    x, y = z0[:, 0].copy(), z0[:, 1].copy()
    rng = rng_for(config.seed, "bridge", 1)
    exploded = np.zeros(x.size, bool)
    for k in range(dW.shape[0]):
        x, y, e = advance(params, config, x, y, h, dW[k, :, 0], dW[k, :, 1], rng)
        exploded |= e
    return x, y, exploded


def integrate_path(params: ModelParams, config: IntegratorConfig, z0, t_end: float, record_every: int = 1):
    """Single path with its trajectory; stops early on explosion.

    Returns
    -------
    dict
        ``t, x, y`` arrays and ``blowup`` (time of the explosion flag or ``None``).
    """
    from .lyapunov import coords

    x0, y0 = coords(z0)
    rng = rng_for(config.seed, "paths", 0)
    x, y = np.array([float(x0)]), np.array([float(y0)])
    ts, xs, ys = [0.0], [x[0]], [y[0]]
    h = config.h0
    n = int(math.ceil(min(t_end, config.t_max) / h - 1e-12))
    blow = None
    for k in range(n):
        hk = min(h, t_end - k * h)
        dw = rng.standard_normal(2) * math.sqrt(hk)
        x, y, e = _advance_timed(params, config, x, y, hk, dw, rng)
        t = k * h + (hk if e[0] is None else e[0])
        if e[0] is not None:
            blow = t
        if (k + 1) % record_every == 0 or blow is not None or k == n - 1:
            ts.append(t)
            xs.append(x[0])
            ys.append(y[0])
        if blow is not None:
            break
    return {"t": np.array(ts), "x": np.array(xs), "y": np.array(ys), "blowup": blow}


def _advance_timed(params, config, x, y, h, dw, rng):
    """Scalar variant of :func:`advance` that also reports when an explosion happened."""
    t_rem, wx, wy = h, dw[0], dw[1]
    h_min = h / 2.0**config.max_halvings
    xv, yv = float(x[0]), float(y[0])
    while t_rem > 0:
        hs = t_rem
        if config.adaptive:
            b = math.hypot(xv * xv - yv * yv, 2 * xv * yv) / _scale(config.rel, xv, yv)
            while hs * b > 1.0 and hs >= 2 * h_min:
                hs *= 0.5
            if hs * b > 1.0:
                return np.array([xv]), np.array([yv]), (h - t_rem,)
        if hs < t_rem:
            sd = math.sqrt(hs * (t_rem - hs) / t_rem)
            dx = wx * hs / t_rem + sd * rng.standard_normal()
            dy = wy * hs / t_rem + sd * rng.standard_normal()
        else:
            dx, dy = wx, wy
        xn, yn = _tamed_update(params, config.mode, xv, yv, hs, dx, dy, config.rel)
        wx -= dx
        wy -= dy
        t_rem = t_rem - hs if hs < t_rem else 0.0
        if not (math.isfinite(xn) and math.isfinite(yn)) or math.hypot(xn, yn) > config.blowup_radius:
            return np.array([xn]), np.array([yn]), (h - t_rem,)
        xv, yv = xn, yn
    return np.array([xv]), np.array([yv]), (None,)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------
@dataclass
class Ensemble:
    """Terminal states and summaries of independent paths."""

    count: int
    terminal: np.ndarray
    exploded: np.ndarray
    seed: int
    chunk: int
    t_end: float
    snapshots: dict = field(default_factory=dict)
    functionals: dict = field(default_factory=dict)
    occupation: object = None
    absorption_violations: int = 0
    crossed: np.ndarray | None = None

    @property
    def failure_fraction(self) -> float:
        return float(np.mean(self.exploded))

    @property
    def stream_ids(self) -> list:
        return [(self.seed, PURPOSES["paths"], c) for c in range(math.ceil(self.count / self.chunk))]

    def summary(self) -> dict:
        ok = ~self.exploded
        out = {
            "count": self.count,
            "seed": self.seed,
            "chunk": self.chunk,
            "t_end": self.t_end,
            "failure_fraction": self.failure_fraction,
            "absorption_violations": int(self.absorption_violations),
        }
        if np.any(ok):
            term = self.terminal[ok]
            out["mean"] = term.mean(axis=0).tolist()
            out["std_error"] = (term.std(axis=0, ddof=1) / math.sqrt(max(term.shape[0] - 1, 1))).tolist() if term.shape[0] > 1 else [0.0, 0.0]
        for name, vals in self.functionals.items():
            v = np.asarray(vals, dtype=float)[ok]
            out[f"{name}_mean"] = float(v.mean())
            out[f"{name}_se"] = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        return out

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _initial_states(z0, n, seed):
    if callable(z0):
        pts = np.asarray(z0(rng_for(seed, "init"), n), dtype=float)
    else:
        pts = np.asarray(tuple(z0) if not isinstance(z0, np.ndarray) else z0, dtype=float)
        if pts.ndim == 1:
            pts = np.broadcast_to(pts, (n, 2)).copy()
    if pts.shape != (n, 2):
        raise ValueError("initial distribution must give an (N, 2) array")
    return pts


def run_ensemble(
    params: ModelParams,
    config: IntegratorConfig,
    z0,
    t_end: float,
    N: int,
    checkpoints=(),
    functionals: dict | None = None,
    occupation=None,
    track_absorption: bool = False,
    absorption_tol: float = 1e-12,
) -> Ensemble:
    """Simulate ``N`` independent paths up to ``t_end``.

    Parameters
    ----------
    z0 : pair, (N, 2) array or callable
        Start point(s); a callable receives ``(rng, N)``.
    checkpoints : sequence of float
        Times at which all states are stored in ``snapshots`` (snapped to the
        ``h0`` grid).
    functionals : dict
        ``name -> f(x, y)`` evaluated on terminal states.
    occupation : OccupationSpec, optional
        Accumulates a histogram of states after the burn-in time.
    track_absorption : bool
        Count paths whose ``x`` returns above ``tol`` after dropping below ``-tol``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    starts = _initial_states(z0, N, config.seed)
    h = config.h0
    n_steps = int(round(min(t_end, config.t_max) / h))
    ck_steps = {int(round(c / h)): c for c in checkpoints}
    chunks = [(c, slice(c * config.chunk, min(N, (c + 1) * config.chunk))) for c in range(math.ceil(N / config.chunk))]

    def work(item):
        c, sl = item
        rng = rng_for(config.seed, "paths", c)
        x, y = starts[sl, 0].copy(), starts[sl, 1].copy()
        m = x.size
        expl = np.zeros(m, bool)
        snaps = {}
        occ = occupation.empty() if occupation is not None else None
        below = x < -absorption_tol
        violations = np.zeros(m, bool)
        if 0 in ck_steps:
            snaps[ck_steps[0]] = np.column_stack([x, y])
        sh = math.sqrt(h)
        for k in range(1, n_steps + 1):
            dw = rng.standard_normal((2, m)) * sh
            x, y, e = advance(params, config, x, y, h, dw[0], dw[1], rng)
            expl |= e
            if track_absorption:
                violations |= below & (x > absorption_tol)
                below |= x < -absorption_tol
            if occ is not None and k * h > occupation.burn_in - 1e-12:
                occ.add(x[~expl], y[~expl], m)
            if k in ck_steps:
                snaps[ck_steps[k]] = np.column_stack([x, y])
        return c, np.column_stack([x, y]), expl, snaps, occ, violations, below

    threads = config.threads
    if threads is None or threads <= 0:
        import os

        threads = os.cpu_count() or 1
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(item) for item in chunks]
    results.sort(key=lambda r: r[0])
    terminal = np.vstack([r[1] for r in results])
    exploded = np.concatenate([r[2] for r in results])
    snapshots = {t: np.vstack([r[3][t] for r in results]) for t in ck_steps.values() if all(t in r[3] for r in results)}
    occ = None
    if occupation is not None:
        occ = results[0][4]
        for r in results[1:]:
            occ = occ.merge(r[4])
    violations = int(sum(int(np.sum(r[5])) for r in results))
    crossed = np.concatenate([r[6] for r in results])
    funcs = {}
    for name, f in (functionals or {}).items():
        vals = np.full(N, np.nan)
        ok = ~exploded
        vals[ok] = f(terminal[ok, 0], terminal[ok, 1])
        funcs[name] = vals
    return Ensemble(N, terminal, exploded, config.seed, config.chunk, t_end, snapshots, funcs, occ, violations, crossed)


# ---------------------------------------------------------------------------
# exact linear exit process
# ---------------------------------------------------------------------------
KAPPA = 2.5


def _ou_var(t, sigma_y):
    return (2 * sigma_y / (2 * KAPPA)) * np.expm1(2 * KAPPA * t)


def step_z_exact(spec, z, h, normal):
    """Exact transition of ``dZ = (5/2) Z dT + sqrt(2 sy) dW`` over ``h``.

    ``Z' = e^{5h/2} Z + sqrt((2 sy / 5)(e^{5h} - 1)) N``.
    """
    if not np.all(np.asarray(h) > 0):
        raise ValueError("h must be positive")
    return np.exp(KAPPA * h) * z + np.sqrt(_ou_var(h, spec.sigma_y)) * normal


def _bridge_mid(a, c, h, m, sigma_y, normal):
    va, vm = _ou_var(h, sigma_y), _ou_var(m, sigma_y)
    coef = np.exp(KAPPA * (h - m)) * vm / va
    mean = np.exp(KAPPA * m) * a + coef * (c - np.exp(KAPPA * h) * a)
    var = vm - np.exp(2 * KAPPA * (h - m)) * vm**2 / va
    return mean + np.sqrt(np.maximum(var, 0.0)) * normal


def _advance_to_exit(z, t, L, sigma_y, rng, h_max, h_floor, t_stop, n_sd=6.0):
    """Run exact-step paths until ``|Z| >= L`` or time ``t_stop``.

    Returns the exit times (``inf`` for paths still inside) and the final
    states and times.  A step that lands beyond the barrier is bisected with
    exact bridge samples until the bracket is below ``h_floor``.
    """
    z = np.array(z, dtype=float, copy=True)
    t = np.array(t, dtype=float, copy=True)
    tau = np.full(z.size, np.inf)
    done = np.abs(z) >= L
    tau[done] = t[done]
    s = math.sqrt(2 * sigma_y)
    sig = _Sig(sigma_y)
    active = np.flatnonzero(~done & (t < t_stop))
    while active.size:
        za, ta = z[active], t[active]
        dist = L - np.abs(za)
        h = np.minimum(np.clip((dist / (n_sd * s)) ** 2, h_floor, h_max), t_stop - ta)
        h = np.maximum(h, 1e-300)
        zn = step_z_exact(sig, za, h, rng.standard_normal(active.size))
        crossed = np.abs(zn) >= L
        if np.any(crossed):
            idx = np.flatnonzero(crossed)
            a, c, hh, t0 = za[idx], zn[idx], h[idx], ta[idx]
            # keep the earliest half that still ends outside
            while np.any(hh > h_floor):
                mid = _bridge_mid(a, c, hh, hh / 2, sigma_y, rng.standard_normal(idx.size))
                left = np.abs(mid) >= L
                refine = hh > h_floor
                c = np.where(refine & left, mid, c)
                a = np.where(refine & ~left, mid, a)
                t0 = np.where(refine & ~left, t0 + hh / 2, t0)
                hh = np.where(refine, hh / 2, hh)
            tau[active[idx]] = t0 + hh
        z[active] = zn
        t[active] = ta + h
        stopped = (t[active] >= t_stop * (1 - 1e-14)) & ~crossed
        t[active[stopped]] = t_stop
        active = active[~crossed & ~stopped]
    return tau, z, t


def exit_times(z0, L, sigma_y, N, rng, h_max=0.02, h_floor=1e-8, t_cap=30.0):
    """First times ``|Z| >= L`` for ``N`` exact-step paths started at ``z0``.

    Steps are ``clip((dist / (6 s))^2, h_floor, h_max)`` with
    ``s = sqrt(2 sy)``, so a crossing between grid points is unlikely; a
    step that lands beyond the barrier is refined by bridge bisection.
    Paths still inside at ``t_cap`` get ``tau = inf``.
    """
    tau, _, _ = _advance_to_exit(np.full(N, float(z0)), np.zeros(N), L, sigma_y, rng, h_max, h_floor, t_cap)
    return tau


@dataclass(frozen=True)
class _Sig:
    sigma_y: float


def _split_estimates(z0, L, sigma_y, dhat, N, rng, h_max, h_floor, t_cap, split_start, split_every):
    """Per-root values of ``exp(dhat tau)`` from a splitting scheme.

    From ``split_start`` on, every ``split_every`` time units each surviving
    path is cloned once and both copies carry half the weight.  The weighted
    sum over a root's family is an unbiased draw of ``exp(dhat tau)``.  With
    survival rate about ``5/2`` per unit time, ``split_every = ln 2 / dhat``
    makes both the expected population and the second moment of a family
    shrink by the same factor ``2 exp(-5 ln 2 / (2 dhat)) < 1`` per period.
    """
    est = np.zeros(N)
    root = np.arange(N)
    w = np.ones(N)
    z = np.full(N, float(z0))
    t = np.zeros(N)
    t_stop = min(split_start, t_cap)
    n_capped = 0
    while root.size:
        tau, z, t = _advance_to_exit(z, t, L, sigma_y, rng, h_max, h_floor, t_stop)
        out = np.isfinite(tau)
        np.add.at(est, root[out], w[out] * np.exp(dhat * tau[out]))
        keep = ~out
        if t_stop >= t_cap:
            n_capped = int(np.unique(root[keep]).size)
            break
        root, w, z, t = (np.repeat(a[keep], 2) for a in (root, w, z, t))
        w *= 0.5
        t_stop = min(t_stop + split_every, t_cap)
    return est, n_capped


def exit_time_mc(
    spec,
    z0: float,
    N: int,
    seed: int = 0,
    h_max: float = 0.02,
    h_floor: float = 1e-8,
    t_cap: float = 30.0,
    splitting: bool = True,
    split_start: float = 1.0,
) -> dict:
    """Monte-Carlo estimate of ``E[exp(dhat tau)]`` for the linear exit problem.

    ``exp(dhat tau)`` has tail index ``(5/2)/dhat`` (1.25 at ``dhat = 2``),
    so its variance is infinite and a plain sample mean converges like
    ``N^{-1/5}`` and tends to fall short.  By default the estimate therefore
    uses path splitting (see :func:`_split_estimates`); its per-root values
    are i.i.d. with finite variance, so the standard error is meaningful.

    Parameters
    ----------
    spec : LyapunovSpec
        Supplies ``alpha`` (barrier ``sqrt(2 alpha)``), ``sigma_y`` and ``dhat``.
    z0 : float
        Start, ``|z0| <= sqrt(2 alpha)``.
    N : int
        Number of root paths.
    splitting : bool
        ``False`` returns the plain sample mean.

    Returns
    -------
    dict
        ``estimate``, ``std_error``, ``n_capped``, ``N`` and the raw exit
        times ``tau`` of an unsplit batch with the same seed, with
        ``samples = exp(dhat tau)`` for tail checks.
    """
    L = math.sqrt(2 * spec.alpha)
    if abs(z0) > L * (1 + 1e-12):
        raise ValueError("start outside the exit interval")
    if N < 2:
        raise ValueError("need at least two paths")
    dh = spec.delta_hat
    if not dh < 2.5:
        raise ValueError("dhat must be below 5/2")
    tau = exit_times(z0, L, spec.sigma_y, N, rng_for(seed, "exit"), h_max, h_floor, t_cap)
    capped = ~np.isfinite(tau)
    samples = np.exp(dh * tau[~capped])
    if splitting:
        vals, n_capped = _split_estimates(
            z0, L, spec.sigma_y, dh, N, rng_for(seed, "exit", 2), h_max, h_floor, t_cap, split_start, math.log(2) / dh
        )
    else:
        vals, n_capped = samples, int(np.sum(capped))
    return {
        "estimate": float(vals.mean()),
        "std_error": float(vals.std(ddof=1) / math.sqrt(vals.size)),
        "n_capped": n_capped,
        "N": int(N),
        "tau": tau,
        "samples": samples,
    }


def tail_bound(s, alpha: float, sigma_y: float, delta_hat: float):
    """Upper bound ``(10 alpha / (sy pi (s^{5/dhat} - 1)))^{1/2}`` on ``P(e^{dhat tau} > s)``."""
    s = np.asarray(s, dtype=float)
    return np.sqrt(10 * alpha / (sigma_y * np.pi * (s ** (5 / delta_hat) - 1)))


# ---------------------------------------------------------------------------
# hat system
# ---------------------------------------------------------------------------
def hat_exit_direct(x0: float, y0: float, alpha: float, sigma_y: float, N: int, seed: int = 0, dT: float = 1e-4, T_cap: float = 30.0):
    """Exit times of the hat system simulated in its own time.

    ``X^`` follows its closed form ``x0/(1 - x0 t)``; ``Y^`` is advanced by
    Euler-Maruyama with steps ``dT / X^_t`` (uniform in the intrinsic clock).
    Exit is the first grid time with ``X^ Y^2 >= 2 alpha``.
    """
    rng = rng_for(seed, "hat")
    y = np.full(N, float(y0))
    tau = np.full(N, np.inf)
    inside = x0 * y0 * y0 < 2 * alpha
    if not inside:
        return np.zeros(N)
    active = np.arange(N)
    T = 0.0
    # all paths share the t-grid, so t and X^ are scalars
    tt = 0.0
    while active.size and T < T_cap:
        X = x0 / (1 - x0 * tt)
        h = dT / X
        ya = y[active]
        ya = ya + 2 * X * ya * h + math.sqrt(2 * sigma_y * h) * rng.standard_normal(active.size)
        tt += h
        T += dT
        y[active] = ya
        X = x0 / (1 - x0 * tt)
        out = X * ya * ya >= 2 * alpha
        tau[active[out]] = tt
        active = active[~out]
    return tau


def hat_exit_via_z(x0: float, y0: float, alpha: float, sigma_y: float, N: int, seed: int = 0) -> np.ndarray:
    """Hat-system exit times obtained from the linear process: ``(1 - e^{-tau})/x0``."""
    tau = exit_times(math.sqrt(x0) * y0, math.sqrt(2 * alpha), sigma_y, N, rng_for(seed, "exit", 1))
    return -np.expm1(-tau) / x0


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------
def write_path_csv(path, t, x, y) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y"])
        for row in zip(t, x, y):
            w.writerow([f"{v:.17g}" for v in row])
