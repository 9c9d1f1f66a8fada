"""Shared scene builders for the test suite."""

from __future__ import annotations

import json
from functools import lru_cache

import numpy as np
import pytest

from refractflow.flowcodec import decode_stack, flow_from_correspondence, gen_patterns
from refractflow.gridcore import Camera
from refractflow.raysim import (Scene, TransparentObject, render_capture, render_channels, rotation_about,
                                table_scene, trace_image)

GAP = 0.0005


def sphere_shell(outer_r=0.03, thickness=0.003, xy=(0.0, 0.0)):
    return TransparentObject("sphere_shell", {"outer_r": outer_r, "thickness": thickness},
                             np.eye(3), np.array([xy[0], xy[1], outer_r + GAP]))


def solid_sphere(radius=0.03, xy=(0.0, 0.0)):
    return TransparentObject("solid_sphere", {"radius": radius}, np.eye(3),
                             np.array([xy[0], xy[1], radius + GAP]))


def wedge(tilt_deg=20.0, thickness=0.025, extent=0.05, yaw=0.0, xy=(0.0, 0.0)):
    return TransparentObject("wedge", {"thickness": thickness, "extent": extent, "tilt_deg": tilt_deg},
                             rotation_about([0, 0, 1], yaw), np.array([xy[0], xy[1], GAP]))


@lru_cache(maxsize=None)
def _stack(bits, w, h):
    return gen_patterns(bits, w, h)


def stack_for(scene):
    return _stack(scene.plane.bits, scene.plane.width, scene.plane.height)


@lru_cache(maxsize=8)
def _reference_map(camera_json, plane):
    cam = Camera.from_dict(json.loads(camera_json))
    st = _stack(plane.bits, plane.width, plane.height)
    return decode_stack(render_capture(Scene(cam, plane, []), st), st)


def reference_map(scene):
    return _reference_map(json.dumps(scene.camera.to_dict()), scene.plane)


def rendered(scene):
    """Trace once; return ``(channels, capture frames, decoded flow)``."""
    traced = trace_image(scene)
    ch = render_channels(scene, traced)
    st = stack_for(scene)
    frames = render_capture(scene, st, traced)
    m_obj = decode_stack(frames, st)
    flow = flow_from_correspondence(m_obj, reference_map(scene), ch.mask)
    return ch, frames, flow


def masked_rmse(a, b, mask):
    sel = mask & np.all(np.isfinite(a), axis=-1) & np.all(np.isfinite(b), axis=-1)
    return float(np.sqrt(np.mean(np.sum((a[sel] - b[sel]) ** 2, axis=-1))))


@pytest.fixture(scope="session")
def shell_scene():
    return table_scene([sphere_shell()], seed=5)


@pytest.fixture(scope="session")
def shell_rendered(shell_scene):
    return rendered(shell_scene)


def energy_roundoff(A, b, x):
    """Forward error bound for evaluating ``x.Ax - 2 b.x`` near ``x``:
    ``gamma * sum |x| (|A||x| + 2|b|)`` with ``gamma = 2n eps / (1 - 2n eps)``."""
    n = len(x)
    gamma = 2 * n * np.finfo(float).eps / (1 - 2 * n * np.finfo(float).eps)
    ax = np.abs(x)
    return gamma * float(ax @ (abs(A) @ ax + 2 * np.abs(b)))


# ---- acceptance reporting ---------------------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "ran": False})
    entry["ran"] = entry["ran"] or rep.when == "call"
    entry["ok"] = entry["ok"] and not rep.failed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        verdict = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"{verdict} criterion {n}: {e['title']}")
