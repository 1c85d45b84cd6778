import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from event_spectra.core.types import DepthMap, EventStream, ValidationError
from event_spectra.depth import (
    Correspondences,
    depth_from_disparity,
    match_events,
    median_filter,
    quantization_bound,
    reconstruct_depth,
    triangulate,
)
from event_spectra.projector import (
    ProjectorConfig,
    ScanSchedule,
    frame_rate_for_dwell,
    projector_correspondence,
    time_of_pixel,
)
from event_spectra.scene import make_plane_scene, make_step_scene, scaled_rig
from event_spectra.sensor import SensorConfig, simulate

SCHED = ScanSchedule(0.0, 1e-5, 40, 20)


def _stream(times_s, xs, ys, ps, w=32, h=24):
    t = np.rint(np.asarray(times_s) * 1e6).astype(np.int64)
    return EventStream.from_arrays(t, xs, ys, ps, w, h)


def _scan(scene, rig, dwell=2e-6, frames=1.0):
    proj = rig.projector
    pc = ProjectorConfig(resolution=proj.resolution, frame_rate=frame_rate_for_dwell(dwell, proj.resolution))
    cam = rig.camera
    cfg = SensorConfig.ideal(width=cam.width, height=cam.height)
    sched = ScanSchedule.from_config(pc)
    out = simulate(scene, rig, pc, cfg, frames * sched.frame_time)
    return out.stream, sched


# ------------------------------------------------------------------ matching


def test_event_mid_dwell_matches_pixel():
    t = time_of_pixel(SCHED, 7, 3, 0) + SCHED.dwell / 2
    c = match_events(_stream([t], [5], [4], [1]), SCHED)
    assert (c.col[0], c.row[0], c.frame[0], c.x[0], c.y[0]) == (7, 3, 0, 5, 4)


def test_first_event_per_pixel_and_frame_wins():
    t1 = time_of_pixel(SCHED, 2, 1) + 5e-6
    t2 = time_of_pixel(SCHED, 9, 1) + 5e-6
    t3 = time_of_pixel(SCHED, 4, 1, 1) + 5e-6
    c = match_events(_stream([t1, t2, t3], [3, 3, 3], [2, 2, 2], [1, 1, 1]), SCHED)
    assert list(c.col) == [2, 4] and list(c.frame) == [0, 1]


def test_polarity_filter():
    t = [time_of_pixel(SCHED, 1, 0) + 5e-6, time_of_pixel(SCHED, 2, 0) + 5e-6]
    s = _stream(t, [0, 1], [0, 0], [-1, 1])
    assert list(match_events(s, SCHED).col) == [2]
    assert len(match_events(s, SCHED, polarity=None)) == 2
    assert list(match_events(s, SCHED, polarity=-1).col) == [1]


def test_event_before_start_rejected():
    with pytest.raises(ValidationError):
        match_events(_stream([0.0], [0], [0], [1]), ScanSchedule(1.0, 1e-5, 4, 4))


def test_correspondence_csv(tmp_path):
    c = match_events(_stream([time_of_pixel(SCHED, 3, 2) + 5e-6], [1], [2], [1]), SCHED)
    c.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t_us,x,y,col,row,frame" and lines[1].endswith(",1,2,3,2,0")


# ------------------------------------------------------------- triangulate


def test_disparity_closed_form():
    assert depth_from_disparity(50.0, 500.0, 0.1) == 1.0
    assert np.isnan(depth_from_disparity(0.0, 500.0, 0.1))
    np.testing.assert_allclose(depth_from_disparity([25.0, 100.0], 500.0, 0.1), [2.0, 0.5])


def _corr(x, y, col, row):
    a = [np.atleast_1d(np.asarray(v, dtype=np.int64)) for v in (x, y, col, row)]
    z = np.zeros_like(a[0])
    return Correspondences(a[0], a[1], a[2], a[3], z, z)


def test_triangulate_rejects_non_positive_disparity():
    rig = scaled_rig(0.05)  # camera f 25, projector f 50
    cam, proj = rig.camera, rig.projector
    # camera-equivalent projector column equals x: zero disparity
    col = int(proj.cx + (10 - cam.cx) * proj.f / cam.f)
    row = int(proj.cy + (5 - cam.cy) * proj.f / cam.f)
    z, ok = triangulate(_corr([10, 10], [5, 5], [col, col - 4], [row, row]), rig)
    assert not ok[0] and np.isnan(z[0])
    # 4 projector columns = 2 camera pixels of disparity
    assert ok[1] and z[1] == pytest.approx(cam.f * rig.baseline / 2)


def test_triangulate_rejects_off_epipolar_rows():
    rig = scaled_rig(0.05)
    z, ok = triangulate(_corr([10, 10], [5, 5], [20, 20], [12, 16]), rig, row_tolerance=1.0)
    row_expect = (5 - rig.camera.cy) * 2 + rig.projector.cy
    assert ok.tolist() == [abs(12 - row_expect) <= 1, abs(16 - row_expect) <= 1]


def test_plane_disparity_per_pixel():
    rig = scaled_rig(0.25)
    scene = make_plane_scene(1.0, rig.camera.width, rig.camera.height)
    pc = projector_correspondence(scene, rig)
    ys, xs = np.nonzero(pc.visible)
    z, ok = triangulate(_corr(xs, ys, pc.col[ys, xs], pc.row[ys, xs]), rig)
    assert ok.all()
    # forward projection on a plane is exact: d = f b / Z
    np.testing.assert_allclose(z, 1.0, rtol=1e-12)


@given(st.floats(0.4, 4.0))
def test_quantization_bound_brackets_one_pixel(zgt):
    rig = scaled_rig(0.25)
    f, b = rig.camera.f, rig.baseline
    step = f / rig.projector.f  # one projector pixel in camera pixels
    d = f * b / zgt
    worst = max(abs(depth_from_disparity(d + s, f, b) - zgt) for s in (-step, step) if d + s > 0)
    assert worst <= quantization_bound(zgt, rig) * (1 + step / d) ** 2


# ------------------------------------------------------------ median filter


def test_median_radius_zero_is_identity(rng):
    d = DepthMap.from_array(rng.uniform(1, 2, (5, 6)))
    assert median_filter(d, 0) is d
    with pytest.raises(ValueError):
        median_filter(d, -1)


def test_median_removes_spike():
    z = np.full((7, 7), 1.0)
    z[3, 3] = 9.0
    out = median_filter(DepthMap.from_array(z), 1)
    assert np.all(out.depth == 1.0)


def _brute_median(depth, r):
    h, w = depth.shape
    out = depth.depth.copy()
    for y in range(h):
        for x in range(w):
            if not depth.valid[y, x]:
                continue
            vals = sorted(depth.depth[yy, xx]
                          for yy in range(max(0, y - r), min(h, y + r + 1))
                          for xx in range(max(0, x - r), min(w, x + r + 1))
                          if depth.valid[yy, xx])
            if len(vals) >= 3:
                out[y, x] = vals[(len(vals) - 1) // 2]
    return out


@pytest.mark.parametrize("r", [1, 2])
def test_median_matches_brute_force(rng, r):
    z = rng.uniform(0.5, 3.0, (13, 11))
    z[rng.random(z.shape) < 0.35] = np.nan
    d = DepthMap.from_array(z)
    out = median_filter(d, r)
    np.testing.assert_array_equal(out.valid, d.valid)
    np.testing.assert_array_equal(out.depth, _brute_median(d, r))


# ------------------------------------------------------------ reconstruction


def test_empty_stream_gives_invalid_map():
    rig = scaled_rig(0.05)
    s = EventStream.empty(rig.camera.width, rig.camera.height)
    d = reconstruct_depth(s, rig, SCHED)
    assert d.shape == (rig.camera.height, rig.camera.width) and not d.valid.any()


def test_geometry_mismatch():
    with pytest.raises(ValidationError):
        reconstruct_depth(EventStream.empty(4, 4), scaled_rig(0.05), SCHED)


def test_plane_scene_end_to_end():
    rig = scaled_rig(0.25)
    scene = make_plane_scene(1.0, rig.camera.width, rig.camera.height)
    stream, sched = _scan(scene, rig)
    vis = projector_correspondence(scene, rig).visible

    corr = match_events(stream, sched)
    cam, proj = rig.camera, rig.projector
    col_expect = proj.cx + (corr.x - cam.cx - cam.f * rig.baseline) * proj.f / cam.f
    good = np.abs(corr.col - col_expect) <= 1
    assert good.sum() >= 0.95 * vis.sum()

    d = reconstruct_depth(stream, rig, sched)
    assert d.valid[vis].mean() >= 0.95
    err = d.depth[d.valid] - 1.0
    assert np.sqrt(np.mean(err ** 2)) < 0.005
    assert np.all(np.abs(err) <= quantization_bound(1.0, rig))
    assert np.all(np.isfinite(d.depth[d.valid])) and np.all(d.depth[d.valid] > 0)


def test_step_scene_plateaus_and_edge():
    rig = scaled_rig(0.25)
    w, h = rig.camera.width, rig.camera.height
    scene = make_step_scene(0.8, 1.0, w, h, edge=w // 2)
    stream, sched = _scan(scene, rig)
    d = reconstruct_depth(stream, rig, sched)
    near = d.valid[:, : w // 2 - 3]
    far = d.valid[:, w // 2 + 3:]
    assert np.all(np.abs(d.depth[:, : w // 2 - 3][near] - 0.8) <= quantization_bound(0.8, rig))
    assert np.all(np.abs(d.depth[:, w // 2 + 3:][far] - 1.0) <= quantization_bound(1.0, rig))
    # per lit row, the first column reading the far plateau
    rows = np.flatnonzero(d.valid.any(axis=1))
    assert rows.size >= h // 2
    for y in rows:
        row = np.where(d.valid[y], d.depth[y], np.nan)
        cols = np.flatnonzero(row > 0.9)
        assert cols.size and abs(cols[0] - w // 2) <= 2


def test_reconstruction_is_deterministic():
    rig = scaled_rig(0.125)
    scene = make_step_scene(0.7, 1.2, rig.camera.width, rig.camera.height, edge=10)
    stream, sched = _scan(scene, rig)
    a, b = reconstruct_depth(stream, rig, sched), reconstruct_depth(stream, rig, sched)
    np.testing.assert_array_equal(a.depth, b.depth)
    np.testing.assert_array_equal(a.valid, b.valid)


def test_two_frames_keep_first_match():
    rig = scaled_rig(0.125)
    scene = make_plane_scene(1.0, rig.camera.width, rig.camera.height)
    one, sched = _scan(scene, rig, frames=1.0)
    two, _ = _scan(scene, rig, frames=2.0)
    a, b = reconstruct_depth(one, rig, sched), reconstruct_depth(two, rig, sched)
    np.testing.assert_array_equal(a.depth, b.depth)
