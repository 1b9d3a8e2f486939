import csv
import json
import math

import numpy as np
import pytest

from superlyap.generator import margin
from superlyap.geometry import r1_mask, r3_mask
from superlyap.lyapunov import GlobalLyapunov, LyapunovSpec, mollifier
from superlyap.sde import ModelParams
from superlyap.verifier import GridError, build_grid, certify, check_seams


def test_r3_grid_shape(spec):
    pts = build_grid(spec, "R3", 2 * spec.rho, 100 * spec.rho, 10, 21)
    assert pts.shape == (210, 2)
    x, y = pts[:, 0], pts[:, 1]
    assert np.all(x >= 2 * spec.alpha) and np.all(x * y * y <= 2 * spec.alpha * (1 + 1e-12))
    assert np.all(r3_mask(x, y, spec.alpha))


def test_grid_radius_precondition(spec):
    with pytest.raises(GridError):
        build_grid(spec, "R3", spec.rho, 10 * spec.rho, 10, 21)
    with pytest.raises(GridError):
        build_grid(spec, "nowhere", 2 * spec.rho, 10 * spec.rho, 10, 21)


def test_r1_grid_in_region(spec):
    pts = build_grid(spec, "R1", 2 * spec.rho, 1e4 * spec.rho, 30, 41)
    x, y = pts[:, 0], pts[:, 1]
    assert np.all(np.abs(y) <= 2 * np.abs(x) / spec.alpha * (1 + 1e-12))
    assert np.all(r1_mask(x, y, spec.alpha))


@pytest.mark.parametrize("zone", ["R1core", "R1R2", "R2core", "R2R3", "R3core"])
def test_zone_grids_nonempty_and_outside_disk(spec, zone):
    pts = build_grid(spec, zone, 2 * spec.rho, 1e4 * spec.rho, 20, 21)
    assert pts.shape[0] > 0
    assert np.all(np.hypot(pts[:, 0], pts[:, 1]) >= 2 * spec.rho * (1 - 1e-12))


# -- certification ---------------------------------------------------------------
def test_default_spec_is_certified(tuned):
    rep = tuned["report"]
    assert rep.certified
    assert rep.M > 0 and rep.worst_margin > 0
    assert rep.n_points >= 100_000
    assert rep.grid_change < 0.05 and not rep.grid_sensitive
    assert rep.gamma == pytest.approx(1.5)
    assert rep.seam_max <= 1e-6


def test_alpha_below_floor_fails_in_right_wedge():
    spec = LyapunovSpec(alpha=1.0, rho=20.0)
    rep = certify(spec, check_grid=False, n_radial=60, n_angular=41)
    assert not rep.certified
    worst = rep.zones[rep.worst_zone]
    assert worst.worst_margin < 0 and worst.argmin_in_R2sub1


def test_no_vertical_noise_fails_on_positive_axis(tuned):
    rep = certify(tuned["spec"], tuned["g"], model=ModelParams(1.0, 0.0), check_grid=False, n_radial=60, n_angular=41)
    assert not rep.certified
    x, y = rep.zones[rep.worst_zone].argmin
    assert x > 0 and y == 0.0


def test_monotone_in_b(tuned):
    rep = tuned["report"]
    spec, V = rep.spec, tuned["V"]
    pts = np.vstack([np.column_stack([d["x"], d["y"]]) for d in rep.samples.values()])
    jet = V.jet(pts)
    m0 = margin(spec, jet, pts, spec.M, spec.b)
    m1 = margin(spec, jet, pts, spec.M, 2 * spec.b)
    assert np.all(m0 > 0)
    assert np.all(m1 >= m0)


def test_margin_over_v_gamma_has_positive_limit(tuned):
    spec, V = tuned["spec"], tuned["V"]
    a = spec.alpha
    ratios = []
    for ell in (1e2, 1e3, 1e4, 1e5):
        z = np.array([[ell * 2 * a, 0.5 / math.sqrt(ell)]])
        j = V.jet(z)
        ratios.append(float(margin(spec, j, z, spec.M, 0.0)[0] / j.value[0] ** spec.gamma))
    assert all(r > 0 for r in ratios)
    assert abs(ratios[-1] - ratios[-2]) < 0.05 * ratios[-1]


def test_report_outputs(tuned, tmp_path):
    rep = tuned["report"]
    rep.write_json(tmp_path / "r.json")
    rep.write_csv(tmp_path / "m.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["certified"] is True and data["spec"]["M"] == rep.M
    with open(tmp_path / "m.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "region", "LV", "V", "margin"]
    assert len(rows) - 1 == sum(d["x"].size for d in rep.samples.values())


# -- seams ---------------------------------------------------------------------
def test_seams_match(tuned):
    out = check_seams(tuned["spec"], tuned["g"], V=tuned["V"])
    assert out["ok"] and out["sandwich"]
    assert out["max_discrepancy"] <= 1e-6
    assert set(out["seams"]) == {"h1=1", "h1=0", "h2=1", "h2=0", "filler"}


def test_seam_examples(tuned):
    spec, V = tuned["spec"], tuned["V"]
    a = spec.alpha
    x = -5 * spec.rho
    on_h1_1 = np.array([[x, abs(x) / a]])
    assert float(V.piece("R1R2", on_h1_1).value[0]) == float(V.piece("R1core", on_h1_1).value[0])
    xr = 5 * spec.rho
    on_h2_0 = np.array([[xr, math.sqrt(2 * a / xr)]])
    assert float(V.piece("R2R3", on_h2_0).value[0]) == pytest.approx(float(V.piece("R2core", on_h2_0).value[0]), rel=1e-15)
    wedge = np.array([[x, 1.5 * abs(x) / a]])
    vb = float(V.piece("R1R2", wedge).value[0])
    va, vc = float(V.piece("R1core", wedge).value[0]), float(V.piece("R2core", wedge).value[0])
    assert min(va, vc) < vb < max(va, vc)
    assert 0 < float(mollifier(0.5)[0]) < 1
