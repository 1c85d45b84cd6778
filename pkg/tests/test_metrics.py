import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from event_spectra.core.types import ValidationError
from event_spectra.metrics import (
    RigidTransform,
    chamfer,
    confusion_matrix,
    icp_align,
    iou,
    kabsch,
    rmse_image,
    rmse_pointcloud,
    rotation_error,
)


def _brute_nn(a, b):
    return np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)).min(axis=1)


def _random_transform(rng, max_angle=math.radians(20), max_t=0.1):
    axis = rng.normal(size=3)
    return RigidTransform.from_axis_angle(axis, rng.uniform(0, max_angle), rng.uniform(-max_t, max_t, 3))


# ------------------------------------------------------------ transforms


def test_transform_validation_and_algebra(rng):
    with pytest.raises(ValidationError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValidationError):
        RigidTransform(2 * np.eye(3), np.zeros(3))
    a, b = _random_transform(rng), _random_transform(rng)
    p = rng.normal(size=(10, 3))
    np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)
    np.testing.assert_allclose(a.inverse().apply(a.apply(p)), p, atol=1e-12)
    r = RigidTransform.from_axis_angle([0, 0, 1], 0.3)
    assert r.angle == pytest.approx(0.3)
    assert rotation_error(r, RigidTransform.identity()) == pytest.approx(0.3)


def test_kabsch_exact(rng):
    p = rng.normal(size=(50, 3))
    t = _random_transform(rng)
    est = kabsch(p, t.apply(p))
    assert rotation_error(est, t) < 1e-10
    np.testing.assert_allclose(est.translation, t.translation, atol=1e-10)


# ------------------------------------------------------------------ ICP


def test_icp_identity_on_identical_clouds(rng):
    p = rng.uniform(-1, 1, (300, 3))
    res = icp_align(p, p)
    assert res.transform.angle < 1e-12 and np.allclose(res.transform.translation, 0, atol=1e-12)
    assert res.rmse < 1e-12


def test_icp_pure_translation(rng):
    p = rng.uniform(-1, 1, (400, 3))
    res = icp_align(p, p + [0.05, -0.02, 0.01])
    np.testing.assert_allclose(res.transform.translation, [0.05, -0.02, 0.01], atol=1e-9)


def test_icp_recovers_random_transforms():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = rng.uniform(-0.5, 0.5, (500, 3)) * [1.0, 0.7, 0.4]
        t = _random_transform(rng)
        res = icp_align(p, t.apply(p), max_iter=200, tol=1e-12)
        worst = max(worst, rotation_error(res.transform, t))
    assert worst < 1e-4


def test_icp_trim_ignores_outliers(rng):
    p = rng.uniform(-0.5, 0.5, (400, 3))
    t = RigidTransform.from_axis_angle([1, 0, 0], 0.05, [0.02, 0, 0])
    q = t.apply(p)
    q[:20] += rng.normal(0, 0.5, (20, 3))
    res = icp_align(p, q, trim=0.1, max_iter=200, tol=1e-12)
    assert rotation_error(res.transform, t) < 1e-6


def test_icp_rejects_degenerate_clouds():
    line = np.column_stack([np.linspace(0, 1, 10), np.zeros(10), np.zeros(10)])
    with pytest.raises(ValidationError, match="degenerate"):
        icp_align(line, line)
    with pytest.raises(ValidationError):
        icp_align(np.zeros((2, 3)), np.zeros((5, 3)))
    with pytest.raises(ValidationError):
        icp_align(np.eye(3) + 0.1, np.eye(3), init="magic")


# -------------------------------------------------------------- distances


def test_distance_examples():
    a = np.array([[0.0, 0, 0]])
    b = np.array([[0.0, 0, 0.01]])
    assert rmse_pointcloud(a, b) == pytest.approx(1.0)
    assert chamfer(a, b) == pytest.approx(1.0)
    assert chamfer(a, a) == 0.0
    # one-sided rmse is not symmetric
    c = np.array([[0.0, 0, 0], [0, 0, 0.1]])
    assert rmse_pointcloud(a, c) == 0.0 and rmse_pointcloud(c, a) > 0
    with pytest.raises(ValidationError):
        chamfer(np.zeros((0, 3)), a)


@given(st.integers(1, 500), st.integers(1, 500), st.integers(0, 2**31))
def test_distances_match_brute_force_exactly(n, m, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (n, 3))
    b = rng.uniform(-1, 1, (m, 3))
    d_ab, d_ba = _brute_nn(a, b), _brute_nn(b, a)
    assert rmse_pointcloud(a, b) == float(np.sqrt(np.mean(d_ab ** 2)) * 100.0)
    assert chamfer(a, b) == float(0.5 * (np.mean(d_ab) + np.mean(d_ba)) * 100.0)


def test_brute_force_on_grid_ties():
    # lattice points give many equidistant neighbors
    g = np.stack(np.meshgrid(*[np.arange(5.0)] * 3), -1).reshape(-1, 3) * 0.01
    q = g + 0.005
    assert chamfer(q, g) == float(0.5 * (np.mean(_brute_nn(q, g)) + np.mean(_brute_nn(g, q))) * 100)


def test_rmse_image():
    a = np.zeros((2, 2, 3))
    b = np.zeros((2, 2, 3))
    b[..., 0] = 3.0
    per, mean = rmse_image(a, b)
    assert per == (3.0, 0.0, 0.0) and mean == 1.0
    mask = np.array([[True, False], [False, False]])
    b[1, 1, 1] = 100.0
    assert rmse_image(a, b, mask)[0] == (3.0, 0.0, 0.0)
    with pytest.raises(ValidationError):
        rmse_image(a, b[:1])
    with pytest.raises(ValidationError):
        rmse_image(a, b, np.zeros((2, 2), dtype=bool))


# -------------------------------------------------------------------- IoU


def test_iou_perfect_and_disjoint():
    t = np.array([[0, 1, 2], [2, 1, 0]])
    assert iou(t, t).mean == 1.0
    r = iou((t + 1) % 3, t)
    assert r.mean == 0.0 and r.named()["background"] == 0.0


def test_iou_hand_computed():
    truth = np.array([0, 0, 1, 1, 2, 2])
    pred = np.array([0, 1, 1, 1, 2, 0])
    r = iou(pred, truth)
    # class 0: inter 1, union 3; class 1: 2 / 3; class 2: 1 / 2
    assert r.per_class == {0: pytest.approx(1 / 3), 1: pytest.approx(2 / 3), 2: pytest.approx(0.5)}
    assert r.mean == pytest.approx((1 / 3 + 2 / 3 + 0.5) / 3)


def test_iou_absent_class_excluded():
    t = np.array([0, 0, 1, 1])
    r = iou(t, t)
    assert math.isnan(r.per_class[2]) and r.mean == 1.0


def test_random_guess_iou_is_one_fifth(rng):
    t = rng.integers(0, 3, 300_000)
    p = rng.integers(0, 3, 300_000)
    assert iou(p, t).mean == pytest.approx(0.2, abs=0.005)


def test_confusion_layout():
    cm = confusion_matrix([1, 2, 2], [0, 2, 1])
    assert cm[0, 1] == 1 and cm[2, 2] == 1 and cm[1, 2] == 1 and cm.sum() == 3
    with pytest.raises(ValidationError):
        iou([0, 1], [0, 1, 2])
