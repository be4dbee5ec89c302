import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from monosf import synth
from monosf.geometry import CameraIntrinsics, RigidMotion

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def K_small():
    return CameraIntrinsics(fx=180.0, fy=180.0, cx=64.0, cy=32.0, width=128, height=64)


@pytest.fixture(scope="session")
def small_scene():
    """Quarter-size road scene (128x64) with its priors; cheap enough for unit tests."""
    cfg = synth.default_config(seed=2, width=128, height=64)
    cfg.match_step = 4
    scene = synth.render_pair(cfg)
    prior0, prior1, calib = synth.make_priors(scene, cfg.priors, cfg.seed)
    return cfg, scene, prior0, prior1, calib


def random_motion(rng, max_angle=0.05, max_t=1.0):
    return RigidMotion.from_axis_angle(rng.uniform(-max_angle, max_angle, 3), rng.uniform(-max_t, max_t, 3))


def rotation_angle_deg(R):
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def gt_state(cfg, scene, prior0, prior1, weights=None):
    """Scene state with one superpixel per rendered region at its true plane and motion."""
    from monosf.init import build_superpixels
    from monosf.photometric import census_transform
    from monosf.scenemodel import EnergyWeights, RigidBody, SceneState, UnaryMaps

    sps = build_superpixels(scene.regions0, scene.mask0, scene.body_of_label)
    planes = [cfg.regions[int(scene.regions0[sp.pixels[0, 1], sp.pixels[0, 0]])].normal for sp in sps]
    bodies = [RigidBody(i, b.kind, b.motion) for i, b in enumerate(cfg.bodies)]
    maps = UnaryMaps(cfg.K, census_transform(scene.image0), census_transform(scene.image1), prior0, prior1)
    return SceneState(maps, sps, bodies, planes, weights or EnergyWeights())


def jacobian_error(problem, T, rho):
    """Worst relative gap between the analytic LM Jacobian and central differences (0 if invalid)."""
    from monosf.geometry import so3_exp

    def residuals(R, t, r):
        ev = problem.evaluate(R, t, r)
        return np.concatenate([ev["e"].ravel(), ev["d1"]])

    n = problem.n
    ev = problem.evaluate(T.rotation, T.translation, rho, derivatives=True)
    if not np.isfinite(ev["F"]):
        return 0.0
    J = np.zeros((3 * n, 6 + n))
    J[: 2 * n, :6] = ev["Je_pose"].reshape(2 * n, 6)
    J[2 * n :, :6] = ev["Jd1_pose"]
    for i in range(n):
        J[2 * i : 2 * i + 2, 6 + i] = ev["Je_rho"][i]
        J[2 * n + i, 6 + i] = ev["Jd1_rho"][i]
    num = np.zeros_like(J)
    for k in range(6 + n):
        h = 1e-6 if k < 3 else (1e-5 if k < 6 else 1e-6 * rho[k - 6])
        out = []
        for s in (1.0, -1.0):
            R, t, r = T.rotation, T.translation.copy(), rho.copy()
            if k < 3:
                d = np.zeros(3)
                d[k] = s * h
                R = so3_exp(d) @ R
            elif k < 6:
                t[k - 3] += s * h
            else:
                r[k - 6] += s * h
            out.append(residuals(R, t, r))
        num[:, k] = (out[0] - out[1]) / (2 * h)
    # relative to the entry, floored at a small fraction of the column scale
    scale = np.maximum(np.abs(num), np.abs(num).max(axis=0, keepdims=True) * 1e-3 + 1e-300)
    return float(np.max(np.abs(J - num) / scale))


# --- acceptance summary -----------------------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    number, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    prev = _criteria.get(number)
    if prev is None or prev[0]:
        _criteria[number] = (rep.passed, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, title, detail = _criteria[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
