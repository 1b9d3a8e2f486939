import json
import math

import numpy as np
import pytest
from scipy import stats

from superlyap.geometry import det_flow
from superlyap.lyapunov import LyapunovSpec
from superlyap.sde import (
    IntegrationError,
    IntegratorConfig,
    ModelParams,
    advance,
    drift,
    exit_time_mc,
    hat_exit_direct,
    hat_exit_via_z,
    integrate_path,
    integrate_with_increments,
    rng_for,
    run_ensemble,
    step_full,
    step_z_exact,
    tail_bound,
)

DET = ModelParams(0.0, 0.0)


def test_model_flags():
    assert ModelParams(1, 1).elliptic
    assert ModelParams(0, 1).hypoelliptic
    assert ModelParams(0, 0).deterministic
    with pytest.raises(ValueError):
        ModelParams(-1, 1)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(h0=0)
    with pytest.raises(ValueError):
        IntegratorConfig(mode="rk4")
    with pytest.raises(ValueError):
        IntegratorConfig(rel=-0.1)


# -- step_full ----------------------------------------------------------------
def test_noiseless_stepping_reproduces_flow():
    out = integrate_path(DET, IntegratorConfig(h0=1e-5, rel=0.0), (1.0, 0.0), 0.5, record_every=10**6)
    assert out["blowup"] is None
    np.testing.assert_allclose([out["x"][-1], out["y"][-1]], [2.0, 0.0], atol=1e-3)


def test_origin_fixed_without_noise():
    x, y = step_full(ModelParams(1, 1), IntegratorConfig(), (0.0, 0.0), 0.1, (0.0, 0.0))
    assert float(x) == 0.0 and float(y) == 0.0


@pytest.mark.parametrize("r", [1.0, 1e3, 1e8])
def test_taming_bound_classical(r, rng):
    cfg = IntegratorConfig(rel=0.0, adaptive=False)
    th = rng.uniform(-np.pi, np.pi, 100)
    z = np.column_stack([r * np.cos(th), r * np.sin(th)])
    for h in (1e-3, 0.1, 10.0):
        x, y = step_full(DET, cfg, z, h, (np.zeros(100), np.zeros(100)))
        # exact bound 1, plus rounding of the state itself
        assert np.all(np.hypot(x - z[:, 0], y - z[:, 1]) <= 1 + 4 * np.finfo(float).eps * r)


def test_taming_bound_relative(rng):
    cfg = IntegratorConfig(rel=0.05, adaptive=False)
    z = rng.normal(size=(200, 2)) * 1e4
    x, y = step_full(DET, cfg, z, 1.0, (np.zeros(200), np.zeros(200)))
    allow = 1 + 0.05 * np.hypot(z[:, 0], z[:, 1])
    assert np.all(np.hypot(x - z[:, 0], y - z[:, 1]) <= allow * (1 + 1e-12))


def test_nan_rejected():
    with pytest.raises(IntegrationError):
        step_full(DET, IntegratorConfig(), (float("nan"), 0.0), 0.1, (0.0, 0.0))
    with pytest.raises(ValueError):
        step_full(DET, IntegratorConfig(), (1.0, 0.0), 0.0, (0.0, 0.0))


def test_drift_field():
    bx, by = drift(np.array([1.0, 2.0]), np.array([2.0, -1.0]))
    np.testing.assert_array_equal(bx, [-3.0, 3.0])
    np.testing.assert_array_equal(by, [4.0, -4.0])


def test_noiseless_blowup_diagnosed():
    out = integrate_path(DET, IntegratorConfig(h0=1e-4), (2.0, 0.0), 1.0, record_every=10**9)
    assert out["blowup"] is not None and abs(out["blowup"] - 0.5) < 0.01


def test_blowup_time_converges_with_step():
    # taming slows the last stretch before the singularity by O(h0)
    times = [integrate_path(DET, IntegratorConfig(h0=h), (2.0, 0.0), 1.0, record_every=10**9)["blowup"] for h in (5e-3, 1e-3, 1e-4)]
    assert all(t > 0.5 for t in times)
    assert times[0] > times[1] > times[2]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_plain_euler_explodes_where_tamed_does_not():
    cfg_e = IntegratorConfig(mode="euler", adaptive=False, h0=0.05, blowup_radius=1e8)
    cfg_t = IntegratorConfig(h0=0.05)
    e = run_ensemble(ModelParams(1, 1), cfg_e, (50.0, 0.01), 2.0, 50)
    t = run_ensemble(ModelParams(1, 1), cfg_t, (50.0, 0.01), 2.0, 50)
    assert e.failure_fraction > 0 and t.failure_fraction == 0


# -- exact Z steps ----------------------------------------------------------------
def test_z_step_small_h_variance():
    spec = LyapunovSpec(sigma_y=1.0)
    normal = np.array([1.0])
    for h in (1e-4, 1e-6):
        xi = step_z_exact(spec, 0.0, h, normal)[0]
        assert xi**2 / h == pytest.approx(2.0, rel=10 * h)


def test_z_step_zero_mean():
    spec = LyapunovSpec()
    out = step_z_exact(spec, 0.0, 0.3, rng_for(0, "exit").standard_normal(10**5))
    assert abs(out.mean()) < 4 * out.std() / math.sqrt(out.size)


def test_z_step_distribution():
    spec = LyapunovSpec(sigma_y=1.0)
    z, h, n = 0.7, 0.1, 10**5
    out = step_z_exact(spec, z, h, rng_for(1, "exit").standard_normal(n))
    mean, var = math.exp(0.25) * z, 0.4 * (math.exp(0.5) - 1)
    assert abs(out.mean() - mean) <= 4 * math.sqrt(var / n)
    # sample variance has standard error var sqrt(2/(n-1)) for a Gaussian
    assert abs(out.var(ddof=1) - var) <= 4 * var * math.sqrt(2 / (n - 1))
    assert stats.kstest(out, "norm", args=(mean, math.sqrt(var))).pvalue > 0.01
    assert stats.normaltest(out).pvalue > 0.01


def test_z_step_rejects_nonpositive_h():
    with pytest.raises(ValueError):
        step_z_exact(LyapunovSpec(), 0.0, 0.0, 1.0)


# -- exit times -----------------------------------------------------------------
def test_exit_from_barrier_is_immediate():
    spec = LyapunovSpec(alpha=3.0)
    L = math.sqrt(6.0)
    for z0 in (L, -L):
        out = exit_time_mc(spec, z0, 100)
        assert out["estimate"] == 1.0 and np.all(out["tau"] == 0)


def test_exit_rejects_outside_start():
    with pytest.raises(ValueError):
        exit_time_mc(LyapunovSpec(alpha=3.0), 3.0, 100)


def test_exit_estimate_matches_bvp(spec, g):
    z0 = 0.3 * g.L
    out = exit_time_mc(spec, z0, 20000, seed=3)
    assert out["n_capped"] == 0
    assert abs(out["estimate"] - float(g.value(z0))) <= 3 * out["std_error"]


def test_tail_bound(spec):
    out = exit_time_mc(spec, 0.0, 20000, seed=4, splitting=False)
    s = np.array([2.0, 5.0, 10.0])
    bound = tail_bound(s, spec.alpha, spec.sigma_y, spec.delta_hat)
    for si, bi in zip(s, bound):
        k = int(np.sum(out["samples"] > si))
        lo = stats.binomtest(k, out["samples"].size).proportion_ci(0.95).low
        assert lo <= bi


def test_exit_is_seeded():
    spec = LyapunovSpec(alpha=3.0)
    a = exit_time_mc(spec, 0.2, 500, seed=11)
    b = exit_time_mc(spec, 0.2, 500, seed=11)
    c = exit_time_mc(spec, 0.2, 500, seed=12)
    assert a["estimate"] == b["estimate"] and a["estimate"] != c["estimate"]


def test_hat_time_change_consistency():
    direct = hat_exit_direct(1.0, 0.5, 3.0, 1.0, 10000, seed=0, dT=1e-3)
    via = hat_exit_via_z(1.0, 0.5, 3.0, 1.0, 10000, seed=0)
    d = stats.ks_2samp(direct, via).statistic
    crit = 1.628 * math.sqrt(2 / 10000)  # two-sample 1% critical value
    assert d < crit


# -- ensembles ------------------------------------------------------------------
def test_single_path_determinism():
    cfg = IntegratorConfig(seed=5)
    a = run_ensemble(ModelParams(1, 1), cfg, (0.3, -0.2), 1.0, 1)
    b = run_ensemble(ModelParams(1, 1), cfg, (0.3, -0.2), 1.0, 1)
    np.testing.assert_array_equal(a.terminal, b.terminal)


def test_thread_count_does_not_change_results():
    base = dict(seed=2, chunk=64, h0=0.01)
    a = run_ensemble(ModelParams(1, 1), IntegratorConfig(threads=1, **base), (1.0, 1.0), 1.0, 300)
    b = run_ensemble(ModelParams(1, 1), IntegratorConfig(threads=4, **base), (1.0, 1.0), 1.0, 300)
    np.testing.assert_array_equal(a.terminal, b.terminal)
    assert a.stream_ids == [(2, 1, c) for c in range(5)]


def test_left_half_plane_is_absorbing_without_x_noise(rng):
    starts = np.column_stack([-rng.uniform(0.01, 5, 1000), rng.normal(size=1000) * 3])
    ens = run_ensemble(ModelParams(0.0, 1.0), IntegratorConfig(h0=0.01, seed=1), starts, 5.0, 1000, track_absorption=True)
    assert np.all(ens.terminal[:, 0] < 0)
    assert ens.absorption_violations == 0
    assert ens.failure_fraction == 0


def test_deterministic_ensemble_matches_flow(rng):
    starts = np.column_stack([rng.uniform(-3, 1, 10), rng.uniform(0.5, 2, 10)])
    ens = run_ensemble(DET, IntegratorConfig(h0=1e-4, rel=0.0), starts, 1.0, 10)
    for k in range(10):
        z = det_flow(starts[k], 1.0)
        assert math.hypot(ens.terminal[k, 0] - z.x, ens.terminal[k, 1] - z.y) < 1e-3 * max(1.0, z.norm)


def test_no_explosions_near_blowup_ray():
    ens = run_ensemble(ModelParams(1, 1), IntegratorConfig(seed=3), (50.0, 0.01), 10.0, 500)
    assert ens.failure_fraction == 0


def test_strong_order(rng):
    params = ModelParams(1.0, 1.0)
    cfg = IntegratorConfig(rel=0.0, seed=9)
    n, T, h_ref = 400, 1.0, 1 / 1024
    z0 = np.column_stack([rng.uniform(-1.5, 0.5, n), rng.uniform(-1, 1, n)])
    dW = rng.normal(size=(int(T / h_ref), n, 2)) * math.sqrt(h_ref)
    ref = np.column_stack(integrate_with_increments(params, cfg, z0, dW, h_ref)[:2])
    errs = []
    for f in (64, 32, 16):
        coarse = dW.reshape(-1, f, n, 2).sum(axis=1)
        z = np.column_stack(integrate_with_increments(params, cfg, z0, coarse, h_ref * f)[:2])
        errs.append(float(np.mean(np.hypot(*(z - ref).T))))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(1.2 <= r <= 3 for r in ratios), ratios


def test_ensemble_summary_json(tmp_path):
    ens = run_ensemble(ModelParams(1, 1), IntegratorConfig(seed=1), (0.0, 1.0), 0.5, 20, functionals={"x2": lambda x, y: x * x})
    ens.write_json(tmp_path / "e.json")
    data = json.loads((tmp_path / "e.json").read_text())
    assert data["seed"] == 1 and data["count"] == 20 and "x2_mean" in data


def test_advance_flags_overflow():
    cfg = IntegratorConfig(blowup_radius=10.0)
    _, _, e = advance(DET, cfg, np.array([20.0, 0.1]), np.array([0.0, 0.0]), 0.01, np.zeros(2), np.zeros(2))
    assert e.tolist() == [True, False]
