import math

import numpy as np
import pytest

from event_spectra.core.types import DepthMap, ValidationError
from event_spectra.metrics import iou
from event_spectra.scene import make_forest_scene
from event_spectra.segment import (
    ClassifierModel,
    Features,
    evaluate,
    extract_features,
    local_std,
    log_posterior,
    observe_scene,
    predict,
    predict_features,
    train,
)


def _uniform_rgb(h, w, c=(120, 60, 30)):
    return np.broadcast_to(np.array(c, dtype=np.uint8), (h, w, 3)).copy()


# ------------------------------------------------------------------ features


def test_constant_inputs_give_constant_features():
    f = extract_features(_uniform_rgb(6, 7), DepthMap.from_array(np.full((6, 7), 2.0)))
    assert np.all(f.values == f.values[0, 0])
    assert f.values[0, 0, 3] == 1.0 and f.values[0, 0, 4] == 0.0


def test_depth_step_raises_std_in_four_pixel_band():
    z = np.full((9, 20), 1.0)
    z[:, 10:] = 1.5
    f = extract_features(_uniform_rgb(9, 20), DepthMap.from_array(z))
    # 5-wide windows centered at x straddle the edge iff x - 2 < 10 <= x + 2
    band = np.flatnonzero(f.values[4, :, 4] > 0)
    assert band.tolist() == [8, 9, 10, 11]


def test_local_std_matches_window_oracle(rng):
    v = rng.normal(size=(8, 9))
    m = rng.random((8, 9)) > 0.3
    out = local_std(v, m)
    for y in range(8):
        for x in range(9):
            win = v[max(0, y - 2):y + 3, max(0, x - 2):x + 3][m[max(0, y - 2):y + 3, max(0, x - 2):x + 3]]
            assert out[y, x] == pytest.approx(win.std() if win.size else 0.0, abs=1e-12)


def test_invalid_depth_flagged_and_excluded_from_training():
    z = np.full((4, 4), 1.0)
    z[0, 0] = np.nan
    labels = np.array([[2, 0, 1, 2]] * 4)
    f = extract_features(_uniform_rgb(4, 4), DepthMap.from_array(z))
    assert not f.valid[0, 0] and f.valid.sum() == 15
    m = train([(f, labels)], "depth")
    # class 2 has four pixels, one of them invalid: prior counts three
    assert m.priors[2] == pytest.approx(7 / 15)


def test_feature_shape_errors():
    with pytest.raises(ValidationError):
        extract_features(np.zeros((4, 4), dtype=np.uint8), DepthMap.from_array(np.ones((4, 4))))
    with pytest.raises(ValidationError):
        extract_features(_uniform_rgb(4, 5), DepthMap.from_array(np.ones((4, 4))))


# ---------------------------------------------------------------- classifier


def _synthetic(rng, n=600):
    """Three classes as separated blobs in all five features."""
    labels = rng.integers(0, 3, (20, n // 20))
    centers = np.array([[0.1, 0.1, 0.1, 0.8, 0.0], [0.5, 0.5, 0.5, 1.0, 0.1], [0.9, 0.9, 0.9, 1.2, 0.2]])
    vals = centers[labels] + rng.normal(0, 0.01, labels.shape + (5,))
    return Features(vals, np.ones(labels.shape, dtype=bool)), labels


@pytest.mark.parametrize("subset", ["rgb", "depth", "rgbd"])
def test_separable_data_gives_perfect_iou(rng, subset):
    # train and test on the same scene: the model has memorized it
    f, labels = _synthetic(rng)
    m = train([(f, labels)], subset)
    r = evaluate(m, [(f, labels)])
    assert r.mean == 1.0 and all(v == 1.0 for v in r.per_class.values())


def test_missing_class_rejected():
    f = Features(np.zeros((2, 2, 5)), np.ones((2, 2), dtype=bool))
    with pytest.raises(ValidationError, match="lacks classes"):
        train([(f, np.zeros((2, 2), dtype=int))])
    with pytest.raises(ValidationError):
        train([])


def test_identical_features_fall_back_to_prior():
    f = Features(np.full((3, 4, 5), 0.5), np.ones((3, 4), dtype=bool))
    labels = np.array([[0, 1, 1, 2]] * 3)
    m = train([(f, labels)])
    assert np.all(predict_features(m, f) == 1)


def test_pixel_at_class_mean_and_tie_rule():
    means = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    m = ClassifierModel("rgb", means, np.ones((3, 3)), np.ones(3) / 3)
    vals = np.zeros((1, 2, 5))
    vals[0, 0, :3] = 1.0
    vals[0, 1, :3] = 0.5   # equidistant from classes 0 and 1
    pred = predict_features(m, Features(vals, np.ones((1, 2), dtype=bool)))
    assert pred.tolist() == [[1, 0]]


def test_model_validation_and_json(tmp_path, rng):
    f, labels = _synthetic(rng)
    m = train([(f, labels)], "rgbd")
    m.save(tmp_path / "m.json")
    back = ClassifierModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.means, m.means)
    np.testing.assert_array_equal(predict_features(back, f), predict_features(m, f))
    with pytest.raises(ValidationError):
        ClassifierModel("rgb", np.zeros((3, 3)), np.zeros((3, 3)), np.ones(3) / 3)
    with pytest.raises(ValidationError):
        ClassifierModel("rgb", np.zeros((3, 3)), np.ones((3, 3)), np.ones(3))
    with pytest.raises(ValidationError):
        ClassifierModel("ir", np.zeros((3, 3)), np.ones((3, 3)), np.ones(3) / 3)


def _forest_samples(seeds):
    out = []
    for s in seeds:
        scene = make_forest_scene(seed=s, width=64, height=48)
        rgb, depth = observe_scene(scene, seed=s)
        out.append((extract_features(rgb, depth), scene.labels))
    return out


def test_forest_prediction_matches_brute_force_likelihood():
    train_set = _forest_samples([0, 1, 2])
    m = train(train_set, "rgbd")
    f, _ = _forest_samples([5])[0]
    pred = predict_features(m, f)
    h, w = f.shape
    for y in range(0, h, 3):
        for x in range(0, w, 3):
            best, arg = -math.inf, None
            for c in range(3):
                ll = math.log(m.priors[c])
                for k, feat in enumerate(m.features):
                    if feat >= 3 and not f.valid[y, x]:
                        continue
                    mu, var = m.means[c, k], m.variances[c, k]
                    ll += -0.5 * (math.log(2 * math.pi * var) + (f.values[y, x, feat] - mu) ** 2 / var)
                if ll > best:
                    best, arg = ll, c
            assert pred[y, x] == arg


def test_affine_rescaling_leaves_predictions_unchanged(rng):
    train_set = _forest_samples([0, 1])
    test_set = _forest_samples([7])
    scale = rng.uniform(0.5, 4.0, 5)
    shift = rng.uniform(-1.0, 1.0, 5)

    def warp(samples):
        return [(Features(f.values * scale + shift, f.valid), lab) for f, lab in samples]

    for subset in ("rgb", "depth", "rgbd"):
        a = predict_features(train(train_set, subset), test_set[0][0])
        b = predict_features(train(warp(train_set), subset), warp(test_set)[0][0])
        np.testing.assert_array_equal(a, b)


def test_rgb_model_ignores_depth(rng):
    train_set = _forest_samples([0, 1])
    m = train(train_set, "rgb")
    scene = make_forest_scene(seed=9, width=64, height=48)
    rgb, depth = observe_scene(scene, seed=9)
    bumped = DepthMap(np.where(depth.valid, depth.depth * rng.uniform(0.2, 5.0, depth.shape), 0.0),
                      depth.valid & (rng.random(depth.shape) > 0.2))
    np.testing.assert_array_equal(predict(m, rgb, depth), predict(m, rgb, bumped))


def test_random_guess_on_balanced_data(rng):
    labels = rng.integers(0, 3, (200, 300))
    f = Features(rng.random((200, 300, 5)), np.ones((200, 300), dtype=bool))
    # a model with no information guesses; evaluate against independent labels
    m = ClassifierModel("rgb", np.full((3, 3), 0.5), np.ones((3, 3)), np.ones(3) / 3)
    guess = rng.integers(0, 3, labels.shape)
    assert iou(guess, labels).mean == pytest.approx(0.2, abs=0.05)
    # the uninformed model predicts the smallest id everywhere: class 0 IoU = p / 1 = 1/3
    r = evaluate(m, [(f, labels)])
    assert r.per_class[0] == pytest.approx(1 / 3, abs=0.01) and r.per_class[1] == 0.0


def test_log_posterior_shape_and_determinism():
    f, _ = _forest_samples([3])[0]
    m = train(_forest_samples([0]), "rgbd")
    a, b = log_posterior(m, f), log_posterior(m, f)
    assert a.shape == f.shape + (3,)
    np.testing.assert_array_equal(a, b)


def test_observe_scene_is_seeded():
    scene = make_forest_scene(seed=2, width=32, height=24)
    a, b = observe_scene(scene, seed=5), observe_scene(scene, seed=5)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1].depth, b[1].depth)
    assert not np.array_equal(a[0], observe_scene(scene, seed=6)[0])
