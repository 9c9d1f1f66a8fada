import hashlib
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refractflow.gridcore import DomainError, Grid2, as_mask, project
from refractflow.raysim import (RayOutcome, Scene, SensorParams, Status, TransparentObject,
                                boundary_from_mask, fresnel_transmittance, pixel_uniform,
                                refract_dir, refract_many, render_channels, rotation_about,
                                sensor_depths, sensor_model, slab_lateral_shift, table_scene,
                                trace_image, trace_pixel, trace_pixels, trace_rays)

from conftest import solid_sphere, sphere_shell


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _angle(a, b):
    """Angle between row vectors; atan2 form keeps precision near zero."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    return np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.einsum("ij,ij->i", a, b))


def test_refract_normal_incidence():
    for eta in (1 / 1.5, 1.5, 0.9):
        np.testing.assert_allclose(refract_dir([0, 0, 1], [0, 0, -1], eta), [0, 0, 1], atol=1e-15)


def test_refract_eta_one_is_identity():
    rng = np.random.default_rng(3)
    for _ in range(100):
        d, n = _unit(rng.normal(size=3)), _unit(rng.normal(size=3))
        if d @ n > 0:
            n = -n
        np.testing.assert_allclose(refract_dir(d, n, 1.0), d, atol=1e-14)


def test_refract_thirty_degrees():
    t1 = np.radians(30.0)
    out = refract_dir([np.sin(t1), 0, np.cos(t1)], [0, 0, -1], 1 / 1.5)
    expect = np.degrees(np.arcsin(np.sin(t1) / 1.5))
    assert abs(expect - 19.47) < 0.01
    assert abs(np.degrees(np.arccos(out[2])) - expect) < 0.01


def test_refract_tir_and_domain():
    t1 = np.radians(60.0)
    assert refract_dir([np.sin(t1), 0, np.cos(t1)], [0, 0, -1], 1.5) is None
    with pytest.raises(DomainError):
        refract_dir([0, 0, 2], [0, 0, -1], 1.5)
    with pytest.raises(DomainError):
        refract_dir([0, 0, 1], [0, 0, 1], 1.5)


@settings(max_examples=200)
@given(st.floats(0, 89.0), st.floats(0, 360.0), st.floats(1.01, 2.5), st.booleans())
def test_snell_and_coplanarity_property(theta, phi, ior, entering):
    t, p = np.radians(theta), np.radians(phi)
    d = np.array([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)])
    n = np.array([0.0, 0.0, -1.0])
    eta = 1 / ior if entering else ior
    out = refract_dir(d, n, eta)
    if out is None:
        assert eta * np.sin(t) > 1 - 1e-12
        return
    sin_i = np.linalg.norm(np.cross(d, n))
    sin_t = np.linalg.norm(np.cross(out, n))
    assert abs(eta * sin_i - sin_t) < 1e-12
    assert abs(np.dot(np.cross(d, n), out)) < 1e-12


def test_slab_reciprocity():
    rng = np.random.default_rng(4)
    n = _unit(rng.normal(size=(500, 3)))
    d = _unit(rng.normal(size=(500, 3)))
    d = np.where((np.einsum("ij,ij->i", d, n) > 0)[:, None], -d, d)
    inside, tir = refract_many(d, n, 1 / 1.5)
    assert not tir.any()
    out, tir2 = refract_many(inside, n, 1.5)
    assert not tir2.any()
    assert _angle(out, d).max() < 1e-9


def test_fresnel_normal_incidence():
    assert fresnel_transmittance(1.0, 1.0, 1.0, 1.5) == pytest.approx(0.96)
    assert fresnel_transmittance(1.0, 1.0, 1.5, 1.0) == pytest.approx(0.96)


def test_empty_scene_is_direct():
    scene = table_scene([], seed=0)
    pl = scene.plane
    xs, ys = scene.camera.pixel_grid()
    r = trace_pixels(scene, xs, ys)
    assert np.all(r.status == Status.BACKGROUND_DIRECT)
    expect_u = xs.ravel() / pl.scale_px_per_unit + pl.offset_u
    expect_v = ys.ravel() / pl.scale_px_per_unit + pl.offset_v
    np.testing.assert_allclose(r.pattern_coord[:, 0], expect_u, atol=1e-9)
    np.testing.assert_allclose(r.pattern_coord[:, 1], expect_v, atol=1e-9)
    ch = render_channels(scene, r)
    assert not ch.mask.plane().any()
    assert np.all(ch.gt_depth.plane() == np.float32(0.5))
    assert np.all(np.isnan(ch.gt_flow.data))


def _slab(tilt_deg, thickness=0.005, height=0.1):
    return TransparentObject("slab", {"thickness": thickness, "extent": 0.08},
                             rotation_about([1, 0, 0], np.radians(tilt_deg)), [0, 0, height])


def test_perpendicular_slab_zero_center_flow():
    scene = table_scene([_slab(0.0)], size=255)
    out = trace_pixel(scene, (127, 127))
    assert out.status == Status.BACKGROUND_REFRACTED
    flow = project(scene.camera, out.background_point) - [127, 127]
    assert np.abs(flow).max() < 1e-9


def test_tilted_slab_lateral_shift_formula():
    tilt, t = 20.0, 0.005
    scene = table_scene([_slab(tilt, t)], size=255)
    d = np.array([[0.0, 0.0, 1.0]])
    r = trace_rays(scene, d)
    assert r.status[0] == Status.BACKGROUND_REFRACTED
    A = r.background_point[0]
    shift = np.linalg.norm(A - (A @ d[0]) * d[0])
    assert abs(shift - slab_lateral_shift(t, np.radians(tilt), 1.5)) < 1e-6


def test_slab_exit_direction_parallel():
    # same slab pose in camera frame, background plane moved back by 10 cm
    a = table_scene([_slab(25.0, height=0.1)], table_depth=0.5)
    b = table_scene([_slab(25.0, height=0.2)], table_depth=0.6)
    d = _unit(np.array([[0.01, -0.02, 1.0]]))
    A1, A2 = trace_rays(a, d).background_point[0], trace_rays(b, d).background_point[0]
    assert _angle(A2 - A1, d)[0] < 1e-9


def _center_scene(obj, size=129):
    return table_scene([obj], size=size, f=200.0, margin=32)


def test_solid_sphere_flow_radial_symmetry():
    scene = _center_scene(solid_sphere(0.03))
    cam = scene.camera
    c = int(cam.cx)
    xs, ys = cam.pixel_grid()
    r = trace_image(scene)
    refr = r.status == Status.BACKGROUND_REFRACTED
    flow = np.full((xs.size, 2), np.nan)
    flow[refr] = project(cam, r.background_point[refr]) - np.stack([xs.ravel(), ys.ravel()], 1)[refr]
    F = flow.reshape(cam.height, cam.width, 2)
    # rotate the pixel grid by 90 deg about the image center; flow vectors rotate with it
    rot = np.rot90(F, k=1, axes=(0, 1))
    rot = np.stack([rot[..., 1], -rot[..., 0]], axis=-1)
    ok = np.isfinite(F).all(-1) & np.isfinite(rot).all(-1)
    assert ok.sum() > 500
    assert np.abs(F[ok] - rot[ok]).max() < 1e-6
    # and flows point along the radius
    rad = np.stack([xs - c, ys - c], -1)
    cross = rad[..., 0] * F[..., 1] - rad[..., 1] * F[..., 0]
    assert np.abs(cross[ok]).max() < 1e-6
    # normal incidence at the center: no flow
    assert np.abs(F[c, c]).max() < 1e-9


@pytest.mark.parametrize("obj", [sphere_shell(0.03, 0.003), solid_sphere(0.025)])
def test_flow_vanishes_at_normal_incidence(obj):
    scene = _center_scene(obj)
    c = int(scene.camera.cx)
    out = trace_pixel(scene, (c, c))
    assert np.abs(project(scene.camera, out.background_point) - [c, c]).max() < 0.5


def test_cylinder_shell_traces():
    cyl = TransparentObject("cylinder_shell", {"r": 0.03, "thickness": 0.003, "height": 0.06},
                            np.eye(3), [0, 0, 0.0305])
    ch = render_channels(table_scene([cyl]))
    m = ch.mask.plane() == 1
    assert m.sum() > 500
    n = ch.gt_normal.data[m].astype(np.float64)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-5)
    view = ch.gt_depth.data[m]
    assert np.all(view < 0.5)


def test_scene_rejects_objects_behind_plane():
    with pytest.raises(DomainError):
        table_scene([TransparentObject("solid_sphere", {"radius": 0.05}, np.eye(3), [0, 0, 0.01])])


def test_scene_json_roundtrip(tmp_path):
    scene = table_scene([sphere_shell(), solid_sphere(0.02, xy=(0.06, 0.0))], seed=9)
    scene.save(tmp_path / "s.json")
    back = Scene.load(tmp_path / "s.json")
    a, b = render_channels(scene), render_channels(back)
    assert all(x.same_bits(y) for (_, x), (_, y) in zip(a.items(), b.items()))


def test_sensor_direct_pixel_noise():
    scene = table_scene([], table_depth=0.8, seed=3)
    ch = render_channels(scene)
    d = ch.sensor_depth.plane().astype(np.float64)
    sigma = scene.sensor.noise_sigma_m
    assert np.abs(d - 0.8).max() < 6 * sigma
    assert abs(d.mean() - 0.8) < 3 * sigma / np.sqrt(d.size) + 1e-6
    assert abs(d.std() - sigma) < 0.05 * sigma


def test_sensor_type_two_reports_background():
    scene = table_scene([sphere_shell(0.04, 0.004)], table_depth=0.82, seed=1)
    r = trace_image(scene)
    xs, ys = scene.camera.pixel_grid()
    d = sensor_depths(r, xs.ravel().astype(np.int64), ys.ravel().astype(np.int64), scene.sensor, scene.seed)
    refr = r.hit & (r.status == Status.BACKGROUND_REFRACTED) & np.isfinite(d)
    assert refr.sum() > 1000
    assert np.abs(d[refr] - r.background_point[refr, 2]).max() <= 1e-9
    assert np.allclose(d[refr], 0.82, atol=1e-9)
    assert np.all(r.first_hit_depth[refr] < 0.82)


def test_sensor_model_single_ray():
    out = RayOutcome(Status.BACKGROUND_REFRACTED, 0.7, np.array([0.0, 0.0, -1.0]),
                     np.array([0.01, 0.02, 0.82]), np.array([10.0, 10.0]), 0.9, np.array([0.0, 0.0, 1.0]))
    assert sensor_model(out) == 0.82


def test_type_one_dropout_monte_carlo():
    params = SensorParams(p_fail=0.3, grazing_deg=60.0)
    k_total, n_total = 0, 0
    for seed in range(10):
        scene = Scene(table_scene().camera, table_scene().plane, [sphere_shell(0.04, 0.003)], params, seed)
        r = trace_image(scene)
        xs, ys = scene.camera.pixel_grid()
        d = sensor_depths(r, xs.ravel().astype(np.int64), ys.ravel().astype(np.int64), params, seed)
        # rays that never reach the background are missing by construction; count the rest
        reach = r.hit & (r.status == Status.BACKGROUND_REFRACTED)
        grazing = reach & (r.incidence_deg() > params.grazing_deg)
        assert np.all(np.isfinite(d[reach & ~grazing]))
        k_total += int(np.isnan(d[grazing]).sum())
        n_total += int(grazing.sum())
    assert n_total > 1000
    p = params.p_fail
    assert abs(k_total - p * n_total) <= 3 * np.sqrt(n_total * p * (1 - p))


def test_pixel_rng_uniform_moments():
    u = pixel_uniform(7, np.arange(200_000) % 500, np.arange(200_000) // 500, 3)
    assert 0 < u.min() and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.005 and abs(u.var() - 1 / 12) < 0.002


def test_boundary_examples():
    assert not boundary_from_mask(as_mask(np.zeros((10, 10)))).plane().any()
    one = np.zeros((10, 10))
    one[4, 4] = 1
    assert boundary_from_mask(as_mask(one)).plane().sum() == 9


def test_boundary_of_disk():
    ys, xs = np.mgrid[0:64, 0:64].astype(np.float64)
    r = np.hypot(xs - 31.5, ys - 31.5)
    b = boundary_from_mask(as_mask(r <= 20)).plane() == 1
    assert np.all(np.abs(r[b] - 20) <= 2.0)
    th = np.linspace(0, 2 * np.pi, 2000)
    cx = np.floor(31.5 + 20 * np.cos(th) + 0.5).astype(int)
    cy = np.floor(31.5 + 20 * np.sin(th) + 0.5).astype(int)
    assert b[cy, cx].all()


def _render_digest(threads: str) -> str:
    code = (
        "import hashlib, numpy as np, sys\n"
        "sys.path.insert(0, 'tests')\n"
        "from conftest import sphere_shell, solid_sphere\n"
        "from refractflow.raysim import table_scene, render_channels\n"
        "ch = render_channels(table_scene([sphere_shell(), solid_sphere(0.02, xy=(0.07, 0.0))], seed=11))\n"
        "h = hashlib.sha256()\n"
        "[h.update(g.data.tobytes()) for _, g in ch.items()]\n"
        "print(h.hexdigest())\n"
    )
    env = dict(os.environ, OMP_NUM_THREADS=threads, OPENBLAS_NUM_THREADS=threads, MKL_NUM_THREADS=threads)
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    return subprocess.run([sys.executable, "-c", code], env=env, cwd=root, check=True,
                          capture_output=True, text=True).stdout.strip()


def test_render_deterministic_across_thread_counts():
    digests = {_render_digest(t) for t in ("1", "4")}
    ch = render_channels(table_scene([sphere_shell(), solid_sphere(0.02, xy=(0.07, 0.0))], seed=11))
    h = hashlib.sha256()
    for _, g in ch.items():
        h.update(g.data.tobytes())
    digests.add(h.hexdigest())
    assert len(digests) == 1
