import math

import mpmath as mp
import numpy as np
import pytest

from superlyap.generator import DIFFUSIVE_A, TRANSPORT_T, apply, fd_jet, transport_lambda
from superlyap.geometry import r2_mask, r3_mask
from superlyap.lyapunov import (
    GlobalLyapunov,
    InfeasibleError,
    LyapunovSpec,
    alpha_floor,
    choose_constants,
    feasibility,
    mollifier,
    mollifier_mass,
    overlap_sign_checks,
    patch_weights,
    transport_source,
    v1,
    v2,
    v3,
)
from superlyap.bvp import solve_g_bvp

JET_FIELDS = ("value", "dx", "dy", "dxx", "dyy", "dxy")


def _rel(a, b):
    return np.abs(a - b) / np.maximum(np.abs(b), 1e-300)


# -- v1 ------------------------------------------------------------------------
def test_v1_value_high_precision():
    spec = LyapunovSpec(delta=0.2)
    ref = float(mp.mpf(25) ** mp.mpf("0.1"))
    assert float(v1(spec, (-3, 4)).value) == pytest.approx(ref, rel=1e-15)
    assert ref == pytest.approx(1.37973, abs=1e-5)


def test_v1_unit_circle_and_origin():
    spec = LyapunovSpec(delta=0.3)
    th = np.linspace(0, 2 * np.pi, 13)
    np.testing.assert_allclose(v1(spec, (np.cos(th), np.sin(th))).value, 1.0, rtol=1e-15)
    with pytest.raises(ValueError):
        v1(spec, (0.0, 0.0))


def test_v1_homogeneity_under_s2():
    spec = LyapunovSpec(delta=0.2)
    z = np.array([1.3, -0.4])
    assert float(v1(spec, z * math.e).value) == pytest.approx(math.e**0.2 * float(v1(spec, z).value), rel=1e-14)


# -- v2 ------------------------------------------------------------------------
@pytest.mark.parametrize("delta", [0.05, 0.2, 0.35])
def test_v2_equals_v1_on_b1(delta):
    spec = LyapunovSpec(delta=delta, alpha=2.0)
    assert float(v2(spec, (-2, 1)).value) == pytest.approx(5 ** (delta / 2), rel=1e-14)


def test_v2_lambda_zero_limit():
    spec = LyapunovSpec(delta=0.2, alpha=2.0)
    assert float(v2(spec, (4, 0.5), lam=0.0).value) == pytest.approx(16.0, rel=1e-14)


def test_v2_s1_homogeneity_example():
    spec = LyapunovSpec(delta=0.2, alpha=2.0)
    ell = 2.0
    lhs = float(v2(spec, (ell * 2, 1 / math.sqrt(ell)), lam=ell**3 / 8).value)
    rhs = ell**spec.delta_hat * float(v2(spec, (2, 1), lam=1 / 8).value)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_v2_rejects_axis_and_bad_lambda():
    spec = LyapunovSpec()
    with pytest.raises(ValueError):
        v2(spec, (1.0, 0.0))
    with pytest.raises(ValueError):
        v2(spec, (1.0, 1.0), lam=1.5)


def test_boundary_matching_b1(spec):
    x = -np.geomspace(spec.alpha, 1e6, 200)
    y = np.where(np.arange(200) % 2 == 0, 1.0, -1.0) * np.abs(x) / spec.alpha
    a, b = v2(spec, (x, y)).value, v1(spec, (x, y)).value
    assert np.max(_rel(a, b)) <= 1e-12


def test_boundary_matching_b2(spec, g):
    x = np.geomspace(2 * spec.alpha, 1e6, 200)
    y = np.sqrt(2 * spec.alpha / x)
    val = v3(spec, g, (x, y)).value
    assert np.max(_rel(val, spec.c2 * x**spec.delta_hat)) <= g.tolerance


def test_v3_on_axis_uses_g_at_zero(spec, g):
    x = np.array([2 * spec.alpha, 50.0, 1e4])
    dh = spec.delta_hat
    ref = x**dh * ((spec.c1 / dh + spec.c2) * g.value(0.0) - spec.c1 / dh)
    np.testing.assert_allclose(v3(spec, g, (x, 0 * x)).value, ref, rtol=1e-14)


def test_v3_positive_on_r3(spec, g, rng):
    x = np.geomspace(2 * spec.alpha, 1e8, 1000)
    y = rng.uniform(-1, 1, 1000) * np.sqrt(2 * spec.alpha / x)
    assert np.all(v3(spec, g, (x, y)).value > 0)


def test_v3_rejects_outside_and_mismatch(spec, g):
    with pytest.raises(ValueError):
        v3(spec, g, (2 * spec.alpha, 5.0))
    other = solve_g_bvp(spec.delta, spec.sigma_y, alpha=spec.alpha * 2)
    with pytest.raises(ValueError):
        v3(spec, other, (2 * spec.alpha, 0.1))


# -- homogeneity ---------------------------------------------------------------
def test_homogeneity_relations(spec, g, rng):
    d, dh, a = spec.delta, spec.delta_hat, spec.alpha
    worst = 0.0
    for _ in range(100):
        ell = math.exp(rng.uniform(-1, 3))
        z = rng.normal(size=2) * 10
        # v1 and v2 under S2
        worst = max(worst, _rel(v1(spec, ell * z).value, ell**d * v1(spec, z).value))
        worst = max(worst, _rel(v2(spec, ell * z).value, ell**d * v2(spec, z).value))
        # v2 under S1 with lambda -> l^3 lambda (kept in [0, 1])
        lam = rng.uniform(0, 1) / max(ell**3, 1.0)
        zs = (ell * z[0], z[1] / math.sqrt(ell))
        worst = max(worst, _rel(v2(spec, zs, lam=ell**3 * lam).value, ell**dh * v2(spec, z, lam=lam).value))
        # v3 under S1 (R3 reference column x = 2 alpha)
        b = rng.uniform(-1, 1) * math.sqrt(2 * a) / math.sqrt(2 * a)
        z3 = (2 * a, b)
        z3s = (ell * 2 * a, b / math.sqrt(ell))
        if ell >= 1:
            worst = max(worst, _rel(v3(spec, g, z3s).value, ell**dh * v3(spec, g, z3).value))
    assert worst <= 1e-10


def test_v3_scaling_example(spec, g):
    ell, z = 3.0, (2 * spec.alpha, 0.5)
    lhs = v3(spec, g, (ell * z[0], z[1] / math.sqrt(ell))).value
    assert float(lhs) == pytest.approx(ell**spec.delta_hat * float(v3(spec, g, z).value), rel=1e-12)


# -- PDE residuals -------------------------------------------------------------
def test_transport_residual(spec, rng):
    a = spec.alpha
    r = np.geomspace(2 * (a * a + 1), 1e8, 10000)
    th = rng.uniform(math.atan(1 / a), math.pi - math.atan(2 / a), r.size) * rng.choice([-1, 1], r.size)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    assert np.all(r2_mask(pts[:, 0], pts[:, 1], a))
    h = transport_source(spec, pts)
    res = np.abs(apply(TRANSPORT_T, spec, v2(spec, pts), pts) + h) / h
    assert res.max() <= 1e-8


def test_transport_lambda_residual(spec, rng):
    pts = np.column_stack([rng.uniform(-50, 50, 500), rng.uniform(0.5, 30, 500)])
    lam = 0.3
    h = transport_source(spec, pts, lam)
    res = np.abs(apply(transport_lambda(lam), spec, v2(spec, pts, lam), pts) + h) / h
    assert res.max() <= 1e-8


def test_diffusive_residual(spec, g, rng):
    a = spec.alpha
    x = np.geomspace(2 * a, 1e8, 10000)
    w = rng.uniform(-1, 1, x.size) * math.sqrt(2 * a)
    pts = np.column_stack([x, w / np.sqrt(x)])
    assert np.all(r3_mask(pts[:, 0], pts[:, 1], a))
    j = v3(spec, g, pts)
    src = spec.c1 * x ** (spec.delta_hat + 1)
    scale = np.abs(x * x * j.dx) + np.abs(2 * pts[:, 0] * pts[:, 1] * j.dy) + np.abs(spec.sigma_y * j.dyy) + src
    res = np.abs(apply(DIFFUSIVE_A, spec, j, pts) + src) / scale
    assert res.max() <= 10 * g.tolerance


# -- derivatives against finite differences -------------------------------------
def _fd(f, x, y, hx, hy):
    """Central differences with separate steps per direction."""
    f0 = f(x, y)
    fxp, fxm, fyp, fym = f(x + hx, y), f(x - hx, y), f(x, y + hy), f(x, y - hy)
    cross = f(x + hx, y + hy) - f(x + hx, y - hy) - f(x - hx, y + hy) + f(x - hx, y - hy)
    return {
        "value": f0,
        "dx": (fxp - fxm) / (2 * hx),
        "dy": (fyp - fym) / (2 * hy),
        "dxx": (fxp - 2 * f0 + fxm) / hx**2,
        "dyy": (fyp - 2 * f0 + fym) / hy**2,
        "dxy": cross / (4 * hx * hy),
    }


def _fd_compare(jet, f, pts, rtol=1e-6, y_scale=None):
    for k in range(pts.shape[0]):
        x, y = pts[k]
        sx = max(abs(x), abs(y))
        sy = sx if y_scale is None else y_scale(x)
        fd = _fd(lambda a, b: float(np.atleast_1d(f(a, b))[0]), x, y, 1e-4 * sx, 1e-4 * sy)
        v = abs(float(np.atleast_1d(jet.value)[k]))
        # size of each partial implied by the natural length scales
        ref = {"value": v, "dx": v / sx, "dy": v / sy, "dxx": v / sx**2, "dyy": v / sy**2, "dxy": v / (sx * sy)}
        for name in JET_FIELDS:
            a = float(np.atleast_1d(getattr(jet, name))[k])
            assert abs(a - fd[name]) <= rtol * max(abs(a), ref[name]), (name, x, y, a, fd[name])


def test_v1_v2_derivatives(spec, rng):
    pts = np.column_stack([rng.uniform(-20, 20, 20), rng.uniform(1, 20, 20)])
    _fd_compare(v1(spec, pts), lambda x, y: v1(spec, (x, y)).value, pts)
    _fd_compare(v2(spec, pts), lambda x, y: v2(spec, (x, y)).value, pts)


def test_v3_derivatives(spec, g, rng):
    x = np.geomspace(2 * spec.alpha * 1.1, 1e3, 20)
    y = rng.uniform(-0.8, 0.8, 20) * np.sqrt(2 * spec.alpha / x)
    pts = np.column_stack([x, y])
    _fd_compare(v3(spec, g, pts), lambda x, y: v3(spec, g, (x, y), check=False).value, pts, rtol=1e-5, y_scale=lambda x: x**-0.5)


def test_global_v_derivatives(tuned, rng):
    V, spec = tuned["V"], tuned["spec"]
    th = rng.uniform(-math.pi, math.pi, 30)
    r = np.geomspace(1.2 * spec.rho, 100 * spec.rho, 30)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    pts = pts[np.abs(pts[:, 1]) > 1e-3 * r]
    _fd_compare(V.jet(pts), lambda x, y: V.value(np.column_stack([np.atleast_1d(x), np.atleast_1d(y)])), pts, rtol=1e-5)


# -- mollifier and weights -----------------------------------------------------
def test_mollifier_examples():
    for t, ref in ((-1.0, (0, 0, 0)), (2.0, (1, 0, 0))):
        np.testing.assert_array_equal([float(v) for v in mollifier(t)], ref)
    m = mollifier_mass()
    assert float(mollifier(0.5)[1]) * m == pytest.approx(math.exp(-1), rel=1e-15)
    assert float(mollifier(0.5)[0]) == pytest.approx(0.5, abs=1e-14)


def test_mollifier_is_smooth_step():
    t = np.linspace(0, 1, 2001)
    phi, dphi, d2phi = mollifier(t)
    # phi rounds to 0 or 1 near the ends, so monotonicity is read off phi' > 0
    assert np.all(np.diff(phi) >= 0) and np.all(dphi[1:-1] > 0)
    # phi' integrates back to phi and phi'' is the derivative of phi'
    from scipy.integrate import cumulative_trapezoid

    np.testing.assert_allclose(cumulative_trapezoid(dphi, t, initial=0), phi, atol=1e-6)
    np.testing.assert_allclose(np.gradient(dphi, t)[5:-5], d2phi[5:-5], atol=1e-3)


def test_patch_weight_examples():
    h1, _ = patch_weights(LyapunovSpec(alpha=2.0), (-2, 1))
    assert float(h1.value) == pytest.approx(1.0)
    _, h2 = patch_weights(LyapunovSpec(alpha=1.0), (4, 0.5))
    assert float(h2.value) == pytest.approx(1.0)
    _, h2 = patch_weights(LyapunovSpec(alpha=1.0), (8, 0.5))
    assert float(h2.value) == pytest.approx(0.0, abs=1e-15)
    h1, _ = patch_weights(LyapunovSpec(alpha=2.0), (-2, 2))
    assert float(h1.value) == pytest.approx(0.0)


# -- global V ------------------------------------------------------------------
def test_deep_r1_is_v1(tuned):
    V, spec = tuned["V"], tuned["spec"]
    z = np.array([[-10 * spec.rho, 0.0]])
    for name in JET_FIELDS:
        np.testing.assert_allclose(getattr(V.jet(z), name), getattr(v1(spec, z), name), rtol=1e-14)


def test_b1_seam_consistent(tuned):
    V, spec = tuned["V"], tuned["spec"]
    x = -3 * spec.rho
    z = np.array([[x, abs(x) / spec.alpha]])
    assert float(V.value(z)[0]) == pytest.approx(float(v1(spec, z).value[0]), rel=1e-12)
    assert float(V.value(z)[0]) == pytest.approx(float(v2(spec, z).value[0]), rel=1e-12)


def test_sandwich_bounds(tuned):
    V, spec = tuned["V"], tuned["spec"]
    r = np.geomspace(spec.rho, 1e6 * spec.rho, 60)
    th = np.linspace(-math.pi, math.pi, 181)
    R, TH = np.meshgrid(r, th)
    pts = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
    val = V.value(pts)
    rr = np.hypot(pts[:, 0], pts[:, 1])
    lo = val / rr**spec.delta
    hi = val / rr**spec.delta_hat
    assert np.all(val > 0)
    # fitted constants c, C: bounded ratios across six decades
    assert lo.min() > 0 and np.isfinite(hi.max())
    assert hi.max() / hi[rr > 1e5 * spec.rho].max() < 10


def test_filler_inside_rho(tuned):
    V, spec = tuned["V"], tuned["spec"]
    inner = np.array([[0.0, 0.0], [spec.rho * 0.5, -spec.rho * 0.3]])
    np.testing.assert_allclose(V.value(inner), V.c0)


# -- constants -----------------------------------------------------------------
def test_feasibility_example():
    f = feasibility(0.2, 0.1, 0.8)
    assert f["ok"] and f["q"] > 0 and f["q_tilde"] > 0
    # direct arithmetic on the two inequalities
    dh = 2.0
    k = 2**0.6
    q_ref = k * ((0.1 / dh + 0.8) * 2**-0.2 - (0.1 / dh) * 2**-0.6) - 1
    qt_ref = -(0.8) * k * (0.1 / dh + 0.8) + 1.2
    assert f["q"] == pytest.approx(q_ref, rel=1e-14)
    assert f["q_tilde"] == pytest.approx(qt_ref, rel=1e-14)


def test_alpha_floor_example():
    assert alpha_floor(0.2, 1.0) == pytest.approx(1.2 * 2.2 / 0.9, rel=1e-14)
    assert alpha_floor(0.2, 1.0) == pytest.approx(2.933, abs=1e-3)


def test_infeasible_delta():
    with pytest.raises(InfeasibleError):
        choose_constants(delta=0.4, certify_fn=False)
    with pytest.raises(InfeasibleError):
        choose_constants(delta=0.0, certify_fn=False)
    with pytest.raises(InfeasibleError):
        choose_constants(ctil1=0.1, ctil2=0.01, certify_fn=False)


def test_chosen_spec_satisfies_constraints(spec, g):
    assert spec.alpha >= alpha_floor(0.2, 1.0)
    assert spec.sigma_y * (spec.delta + 1) * (spec.delta + 2) / spec.alpha < 1
    assert overlap_sign_checks(spec, g)["ok"]


def test_certified_tuning(tuned):
    spec, report = tuned["spec"], tuned["report"]
    assert report.certified
    assert spec.M > 0 and spec.b > 0
    assert tuned["log"]["rho"] == spec.rho


def test_spec_json_round_trip(tuned):
    spec = tuned["spec"]
    assert LyapunovSpec.from_json(spec.to_json()) == spec
    assert spec.to_json()["gamma"] == pytest.approx(1.5)
    assert spec.delta_hat == pytest.approx(2.0)
