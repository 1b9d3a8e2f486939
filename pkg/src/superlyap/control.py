"""Explicit controls steering the deterministic system into the left half-plane.

The controlled system is

    X' = X^2 - Y^2,    Y' = 2 X Y + U.

:func:`synthesize` builds the four-phase control that moves any start to a
target ``z*`` with ``x* < 0``:

1. ``U = sgn+(y0)`` on ``[0, 1]`` (so that ``Y_1 != 0``);
2. ``U = 0`` until the path enters the ball ``B`` of radius ``|x*|/3`` in
   the closed left half-plane, then for a further slack ``s``;
3. ``U = sgn(y*) M - 2 X Y`` (so ``Y' = +-M``) until the upper crossing of
   the orbit circle ``C*`` through ``z*``;
4. ``U = 0`` until arrival at ``z*``.

Targets on the negative x-axis get a fifth, feedback phase
``U = -2 X Y - c`` that finishes on the axis.  The slack ``s`` is tuned
by bisection so that the total time equals the requested ``T``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import integrate

LAWS = ("Constant", "Zero", "BigMPush", "FeedbackBackout")
EVENT_TOL = 1e-10


class ControlError(ValueError):
    """Raised for targets that cannot be reached."""


class HorizonError(ControlError):
    """Requested time is below the constructed minimal time ``T*``."""

    def __init__(self, msg, T_star):
        super().__init__(msg)
        self.T_star = T_star


class EventNotFound(RuntimeError):
    """A stopping event did not fire within the safety horizon."""

    def __init__(self, msg, diagnostic=None):
        super().__init__(msg)
        self.diagnostic = diagnostic or {}


@dataclass(frozen=True)
class Phase:
    """One piece of a schedule.

    ``stop`` is ``"duration"`` (run for ``duration``) or the name of an event
    (``"enter_ball"``, ``"cross_circle"``, ``"arrival"``); an event phase
    continues for ``extra`` time units after the event fires.
    """

    law: str
    param: float = 0.0
    stop: str = "duration"
    duration: float = 0.0
    extra: float = 0.0

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"unknown control law {self.law!r}")
        if self.duration < 0 or self.extra < 0:
            raise ValueError("durations must be non-negative")


@dataclass
class ControlSchedule:
    """Ordered phases plus the geometry they refer to."""

    phases: list
    z_star: tuple = (0.0, 0.0)
    z_target: tuple = (0.0, 0.0)
    T: float = 0.0
    T_star: float = float("nan")
    slack: float = 0.0
    M_push: float = 0.0
    ball_radius: float = 0.0
    circle: tuple = (0.0, 0.0)
    event_times: dict = field(default_factory=dict)
    T1_bound: float = float("nan")
    backout: bool = False

    @classmethod
    def zero(cls, T: float) -> "ControlSchedule":
        return cls([Phase("Zero", duration=T)], T=T)

    @classmethod
    def piecewise_constant(cls, values, durations) -> "ControlSchedule":
        ph = [Phase("Constant", float(u), duration=float(d)) for u, d in zip(values, durations)]
        return cls(ph, T=float(sum(durations)))

    def to_json(self) -> dict:
        out = asdict(self)
        out["phases"] = [asdict(p) for p in self.phases]
        return out

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, default=_json_default)
            fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# ---------------------------------------------------------------------------
# vector field and events
# ---------------------------------------------------------------------------
def _sgn_plus(v: float) -> float:
    return 1.0 if v >= 0 else -1.0


def control_value(phase: Phase, x: float, y: float) -> float:
    if phase.law == "Constant":
        return phase.param
    if phase.law == "Zero":
        return 0.0
    if phase.law == "BigMPush":
        return phase.param - 2 * x * y
    return -2 * x * y - phase.param


def _field(phase: Phase, z: np.ndarray) -> np.ndarray:
    x, y = z[0], z[1]
    return np.array([x * x - y * y, 2 * x * y + control_value(phase, x, y)])


def _aug_field(phase: Phase, s: np.ndarray) -> np.ndarray:
    """State, Jacobi matrix (row-major) and ``int 4X`` together."""
    x, y = s[0], s[1]
    A = np.array([[2 * x, -2 * y], [2 * y, 2 * x]])
    J = s[2:6].reshape(2, 2)
    return np.concatenate([_field(phase, s[:2]), (A @ J).ravel(), [4 * x]])


def _rk4(f, s, h):
    k1 = f(s)
    k2 = f(s + 0.5 * h * k1)
    k3 = f(s + 0.5 * h * k2)
    k4 = f(s + h * k3)
    return s + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _event_fn(name: str, sched: ControlSchedule):
    if name == "enter_ball":
        r = sched.ball_radius

        def g(z):
            return -max(math.hypot(z[0], z[1]) - r, z[0])

        return g
    if name == "cross_circle":
        c = sched.circle[1]

        # inside the circle is negative; the push leaves it through the top
        def g(z):
            return z[0] ** 2 + (z[1] - c) ** 2 - c * c

        return g
    if name == "arrival":
        zs = np.asarray(sched.z_target, dtype=float)

        def g(z):
            d = z[:2] - zs
            b = np.array([z[0] ** 2 - z[1] ** 2, 2 * z[0] * z[1]])
            return float(d @ b)

        return g
    raise ValueError(f"unknown event {name!r}")


def _armed(name: str, sched: ControlSchedule, z) -> bool:
    """Event-specific guard: the circle crossing must be the upper one.

    Event functions are negative before their event and cross zero upwards.
    """
    if name == "cross_circle":
        c = sched.circle[1]
        return z[1] * math.copysign(1.0, c) > abs(c)
    return True


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------
@dataclass
class ControlledPath:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    event_times: dict
    phase_ends: list
    jacobi: np.ndarray | None = None
    log_det: np.ndarray | None = None
    phase_index: np.ndarray | None = None

    @property
    def end(self) -> np.ndarray:
        return np.array([self.x[-1], self.y[-1]])

    def axis_violations(self, tol: float = 1e-9) -> int:
        """Number of times ``x`` climbs above ``tol`` after dropping below ``-tol``."""
        below = np.maximum.accumulate(self.x < -tol)
        return int(np.sum(below & (self.x > tol)))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "phase"])
            ph = self.phase_index if self.phase_index is not None else np.zeros(self.t.size, int)
            for row in zip(self.t, self.x, self.y, ph):
                w.writerow([f"{row[0]:.17g}", f"{row[1]:.17g}", f"{row[2]:.17g}", int(row[3])])


def _step_size(phase, z, h_fine, theta):
    speed = float(np.hypot(*_field(phase, z[:2])))
    return min(h_fine, theta * max(1.0, math.hypot(z[0], z[1])) / max(speed, 1e-300))


def _run_phase(phase, sched, s, t, h_fine, theta, jac, horizon, store):
    """Integrate one phase from augmented state ``s`` at time ``t``."""
    f = (lambda u: _aug_field(phase, u)) if jac else (lambda u: _field(phase, u))
    event_t = None
    if phase.stop == "duration":
        t_end = t + phase.duration
    else:
        g = _event_fn(phase.stop, sched)
        t_end = math.inf
        g_prev = g(s)
        t_lim = t + horizon
        if g_prev >= 0 and phase.stop == "enter_ball":
            event_t = t
        while event_t is None:
            h = _step_size(phase, s, h_fine, theta)
            s_new = _rk4(f, s, h)
            g_new = g(s_new)
            if not np.all(np.isfinite(s_new)):
                raise EventNotFound(f"path diverged before {phase.stop}", {"t": t, "state": s[:2].tolist()})
            if g_prev < 0 <= g_new and _armed(phase.stop, sched, s_new):
                lo, hi = 0.0, h
                while hi - lo > EVENT_TOL:
                    mid = 0.5 * (lo + hi)
                    if g(_rk4(f, s, mid)) >= 0:
                        hi = mid
                    else:
                        lo = mid
                s = _rk4(f, s, hi)
                t += hi
                store(t, s)
                event_t = t
                break
            s, t, g_prev = s_new, t + h, g_new
            store(t, s)
            if t > t_lim:
                raise EventNotFound(f"event {phase.stop} did not fire within {horizon}", {"t": t, "state": s[:2].tolist()})
        t_end = t + phase.extra
    while t < t_end - 1e-15:
        h = min(_step_size(phase, s, h_fine, theta), t_end - t)
        s = _rk4(f, s, h)
        t = t_end if t_end - t - h < 1e-14 else t + h
        store(t, s)
    return s, t, event_t


def integrate_controlled(
    schedule: ControlSchedule,
    z0,
    h_fine: float = 1e-3,
    theta: float = 0.01,
    jacobi: bool = False,
    horizon: float = 1e3,
) -> ControlledPath:
    """RK4 integration of the controlled system through all phases.

    Event phases stop at the first sign change of their event function,
    located by bisection to ``1e-10`` in ``t``.  Steps are at most
    ``h_fine`` (a float, or one value per phase) and at most
    ``theta max(1,|z|)/|z'|``.

    With ``jacobi=True`` the Jacobi flow ``J_{0,t}`` (``J' = A_t J``,
    ``A_t = [[2X, -2Y], [2Y, 2X]]``) and ``int_0^t 4 X`` are carried along.
    """
    z0 = np.asarray(z0, dtype=float)
    s = np.concatenate([z0, [1.0, 0.0, 0.0, 1.0, 0.0]]) if jacobi else z0.copy()
    ts, ss, ph = [0.0], [s.copy()], [0]
    events, ends = {}, []
    t = 0.0
    for k, phase in enumerate(schedule.phases):

        def store(tt, st, k=k):
            ts.append(tt)
            ss.append(st.copy())
            ph.append(k)

        hk = h_fine[k] if np.ndim(h_fine) else h_fine
        s, t, et = _run_phase(phase, schedule, s, t, hk, theta, jacobi, horizon, store)
        if et is not None:
            events[phase.stop] = et
        ends.append(t)
    S = np.array(ss)
    return ControlledPath(
        np.array(ts),
        S[:, 0],
        S[:, 1],
        events,
        ends,
        S[:, 2:6].reshape(-1, 2, 2) if jacobi else None,
        S[:, 6] if jacobi else None,
        np.array(ph),
    )


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------
def orbit_center(z) -> float:
    """``c`` such that the deterministic orbit through ``z`` is the circle about ``(0, c)`` of radius ``|c|``."""
    x, y = float(z[0]), float(z[1])
    if y == 0:
        raise ControlError("points on the x-axis lie on no circular orbit")
    return (x * x + y * y) / (2 * y)


def backout_point(z_star, duration: float, c: float, n: int = 4000) -> np.ndarray:
    """Run ``X' = X^2 - Y^2``, ``Y' = -c`` backwards from ``z_star`` for ``duration``."""
    phase = Phase("FeedbackBackout", c)
    s = np.asarray(z_star, dtype=float)
    h = duration / n
    for _ in range(n):
        s = _rk4(lambda u: -_field(phase, u), s, h)
    return s


def _newton_arrival(sched, z2, phase, h_fine, theta, iters=5, tol=1e-13):
    """Polish the arrival time by Newton on ``f(d) = <z(d) - z*, z'(d)>``."""
    zs = np.asarray(sched.z_target, dtype=float)
    d = sched.event_times["arrival"] - sched.event_times["cross_circle"]
    for _ in range(iters):
        z = integrate_controlled(ControlSchedule([replace(phase, stop="duration", duration=d)], T=d), z2, h_fine, theta).end
        b = _field(phase, z)
        r = z - zs
        Db = np.array([[2 * z[0], -2 * z[1]], [2 * z[1], 2 * z[0]]])
        fval = r @ b
        fder = b @ b + r @ (Db @ b)
        step = fval / fder
        d -= step
        if abs(step) < tol:
            break
    return d


def _build(z0, sched: ControlSchedule, s: float, h_fine, theta):
    """Run phases 1-4 with slack ``s``; return the schedule with measured durations."""
    sign = 1.0 if sched.circle[1] > 0 else -1.0
    phases = [
        Phase("Constant", _sgn_plus(z0[1]), duration=1.0),
        Phase("Zero", stop="enter_ball", extra=s),
        Phase("BigMPush", sign * sched.M_push, stop="cross_circle"),
        Phase("Zero", stop="arrival"),
    ]
    trial = replace(sched, phases=phases, slack=s)
    path = integrate_controlled(trial, z0, h_fine, theta)
    ev = dict(path.event_times)
    ends = path.phase_ends
    trial.event_times = ev
    # state at the end of the push
    k2 = int(np.flatnonzero(path.phase_index == 2)[-1])
    z2 = np.array([path.x[k2], path.y[k2]])
    d4 = _newton_arrival(trial, z2, phases[3], h_fine, theta)
    phases[3] = Phase("Zero", stop="duration", duration=d4)
    ev["arrival"] = ev["cross_circle"] + d4
    t_ball = ev["enter_ball"]
    trial.phases = phases
    trial.event_times = ev
    return trial, ev["arrival"], {"t_ball": t_ball, "x_push_end": float(z2[0]), "push_time": ends[2] - ends[1]}


def synthesize(
    z0,
    z_star,
    T: float | None = None,
    M_push: float | None = None,
    h_fine: float = 1e-3,
    theta: float = 0.01,
    tol: float = 1e-10,
) -> ControlSchedule:
    """Build the control that steers ``z0`` to ``z_star`` in time ``T``.

    Parameters
    ----------
    z0, z_star : pair
        Start and target; the target needs ``x* < 0``.
    T : float, optional
        Total time; ``None`` gives the minimal constructed time ``T*`` (zero
        slack).
    M_push : float, optional
        Push strength; default ``1e3 max(1, |x*|)``, doubled until the push
        moves ``x`` by less than ``|x*|/3``.

    Raises
    ------
    ControlError
        If ``x* >= 0``.
    HorizonError
        If ``T < T*``; carries ``T_star``.
    """
    z0 = np.asarray(z0, dtype=float)
    zs = np.asarray(z_star, dtype=float)
    if not zs[0] < 0:
        raise ControlError("impossible to leave the left half-plane: the target needs x* < 0")
    backout = bool(zs[1] == 0)
    d_b = c_b = 0.0
    target = zs
    if backout:
        # the backward flow from the axis blows up after about 1/|x*|, so the
        # back-out is shortened for large |x*| while still ending at Y = 1
        d_b = min(1.0, 0.5 / abs(zs[0]))
        c_b = 1.0 / d_b
        target = backout_point(zs, d_b, c_b)
    c = orbit_center(target)
    r_ball = abs(target[0]) / 3
    M = 1e3 * max(1.0, abs(target[0])) if M_push is None else float(M_push)
    base = ControlSchedule(
        [], tuple(zs.tolist()), tuple(target.tolist()), M_push=M, ball_radius=r_ball, circle=(0.0, c),
        T1_bound=1 + 6 / abs(target[0]), backout=backout,
    )

    def total(s):
        sch, t_arr, info = _build(z0, replace(base, M_push=M), s, h_fine, theta)
        return sch, t_arr + d_b, info

    for _ in range(20):
        sch0, T_star, info = total(0.0)
        if abs(info["x_push_end"]) <= 2 * abs(target[0]) / 3:
            break
        M *= 2
    else:
        raise ControlError("push strength could not be made large enough")
    if T is None:
        T = T_star
    if T < T_star - tol:
        raise HorizonError(f"T = {T} is below the constructed minimal time T* = {T_star}", T_star)
    sch, s = sch0, 0.0
    if T > T_star + tol:
        lo, hi = 0.0, max(T - T_star, 1e-3)
        while total(hi)[1] < T:
            lo, hi = hi, 2 * hi
        # total(s) is continuous and grows without bound in s
        while True:
            mid = 0.5 * (lo + hi)
            sch, tt, _ = total(mid)
            if abs(tt - T) <= tol or hi - lo < 1e-13:
                s = mid
                break
            if tt < T:
                lo = mid
            else:
                hi = mid
    if backout:
        sch.phases.append(Phase("FeedbackBackout", c_b, duration=d_b))
        sch.event_times["backout_end"] = sch.event_times["arrival"] + d_b
    sch.T = sch.event_times["arrival"] + d_b
    sch.T_star = T_star
    sch.slack = s
    sch.M_push = M
    return sch


# ---------------------------------------------------------------------------
# Gram matrix
# ---------------------------------------------------------------------------
@dataclass
class GramMatrix:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    liouville_error: float
    n_nodes: int

    @property
    def min_eig(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def symmetric(self) -> bool:
        return bool(np.allclose(self.matrix, self.matrix.T, rtol=0, atol=1e-14 * max(1.0, np.abs(self.matrix).max())))

    def to_json(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "min_eig": self.min_eig,
            "liouville_error": self.liouville_error,
            "n_nodes": self.n_nodes,
        }


def _fixed_schedule(schedule: ControlSchedule, path: ControlledPath) -> ControlSchedule:
    """Replace event stops by the durations they produced."""
    ends = [0.0] + list(path.phase_ends)
    ph = [replace(p, stop="duration", duration=ends[k + 1] - ends[k], extra=0.0) for k, p in enumerate(schedule.phases)]
    return replace(schedule, phases=ph)


def gram_matrix(schedule: ControlSchedule, z0, min_nodes: int = 1001, h_fine: float = 1e-3, theta: float = 0.01) -> GramMatrix:
    """Reduced Gram matrix ``M = int_0^T v v^T ds`` with ``v(s) = J_{s,T} e2``.

    ``J_{s,T} = J_{0,T} J_{0,s}^{-1}`` comes from the Jacobi flow carried along
    the controlled path; each phase is integrated on at least
    ``min_nodes / n_phases`` nodes and the integral uses composite Simpson.
    Also reports the Liouville check ``max |det J_{0,t} / exp(int 4X) - 1|``.
    """
    z0 = np.asarray(z0, dtype=float)
    fixed = schedule
    if any(p.stop != "duration" for p in schedule.phases):
        fixed = _fixed_schedule(schedule, integrate_controlled(schedule, z0, h_fine, theta))
    n_per = max(3, -(-min_nodes // len(fixed.phases)))
    hs = [min(h_fine, p.duration / (n_per - 1)) if p.duration > 0 else h_fine for p in fixed.phases]
    path = integrate_controlled(fixed, z0, hs, theta, jacobi=True)
    J = path.jacobi
    JT = J[-1]
    e2 = np.array([0.0, 1.0])
    v = np.einsum("ij,njk,k->ni", JT, np.linalg.inv(J), e2)
    G = np.zeros((2, 2))
    for k in range(len(fixed.phases)):
        sel = np.flatnonzero(path.phase_index == k)
        if k > 0:
            sel = np.concatenate([[sel[0] - 1], sel])
        if sel.size < 2:
            continue
        tk = path.t[sel]
        for i in range(2):
            for j in range(2):
                G[i, j] += integrate.simpson(v[sel, i] * v[sel, j], x=tk)
    G = 0.5 * (G + G.T)
    det = np.linalg.det(J)
    liou = float(np.max(np.abs(det / np.exp(path.log_det) - 1)))
    return GramMatrix(G, np.linalg.eigvalsh(G), liou, int(path.t.size))


def rotation_check(schedule: ControlSchedule, z0, t0: float, eps: float = 0.05, n: int = 20) -> np.ndarray:
    """Sample ``<J_{t,t0} e2, e2_perp>`` for ``t`` in ``[t0 - eps, t0)``."""
    fixed = schedule
    path = integrate_controlled(fixed, z0, jacobi=True)
    J = path.jacobi
    k0 = int(np.searchsorted(path.t, t0))
    ts = np.linspace(t0 - eps, t0, n, endpoint=False)
    ks = np.searchsorted(path.t, ts)
    e2 = np.array([0.0, 1.0])
    perp = np.array([-1.0, 0.0])
    return np.array([perp @ (J[k0] @ np.linalg.solve(J[k], e2)) for k in ks])
