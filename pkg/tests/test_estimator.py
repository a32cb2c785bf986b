"""Scikit-learn style estimator facade."""

import numpy as np
import pytest
from sklearn.base import clone

from jointdet import MixupTcrDetector


def toy_problem(n=6, seed=0):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for _ in range(n):
        img = rng.uniform(0.2, 0.6, size=(32, 32, 3))
        img[10:22, 8:20] = rng.uniform(0.8, 1.0, size=3)
        X.append(img)
        y.append([(8.0, 10.0, 20.0, 22.0)])
    videos = [[rng.uniform(size=(32, 32, 3)) for _ in range(4)]]
    return X, y, videos


def small_estimator(**kw):
    params = dict(
        epochs=2,
        batch_size=3,
        triple_batch_size=2,
        feature_channels=8,
        feature_stride=4,
        random_state=0,
    )
    params.update(kw)
    return MixupTcrDetector(**params)


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = small_estimator(arm="mixup", gamma=0.5)
        params = est.get_params()
        est2 = MixupTcrDetector(**params)
        assert est2.get_params() == params

    def test_clone(self):
        est = small_estimator(arm="tcr")
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            small_estimator().predict([np.zeros((32, 32, 3))])


class TestFitPredict:
    def test_fit_returns_self_and_sets_state(self):
        X, y, videos = toy_problem()
        est = small_estimator(arm="base")
        assert est.fit(X, y) is est
        assert est.state_ is not None
        assert est.record_.epochs

    def test_all_arms_fit(self):
        X, y, videos = toy_problem()
        for arm in ("base", "mixup", "tcr", "mixup_tcr"):
            est = small_estimator(arm=arm)
            est.fit(X, y, videos=videos)
            out = est.predict(X[:2])
            assert len(out) == 2
            for dets in out:
                for x1, y1, x2, y2, s in dets:
                    assert x1 < x2 and y1 < y2 and 0.0 <= s <= 1.0

    def test_video_arm_requires_videos(self):
        X, y, _ = toy_problem()
        with pytest.raises(ValueError):
            small_estimator(arm="mixup").fit(X, y)

    def test_mismatched_lengths_rejected(self):
        X, y, _ = toy_problem()
        with pytest.raises(ValueError, match="mismatch"):
            small_estimator(arm="base").fit(X, y[:-1])

    def test_bad_pixel_range_rejected(self):
        X, y, _ = toy_problem()
        X[0] = X[0] * 300.0
        with pytest.raises(ValueError):
            small_estimator(arm="base").fit(X, y)

    def test_deterministic_given_random_state(self):
        X, y, videos = toy_problem()
        preds = []
        for _ in range(2):
            est = small_estimator(arm="mixup", random_state=7)
            est.fit(X, y, videos=videos)
            preds.append(est.predict(X[:1]))
        assert preds[0] == preds[1]

    def test_score_in_unit_interval(self):
        X, y, _ = toy_problem()
        est = small_estimator(arm="base", epochs=3)
        est.fit(X, y)
        ap = est.score(X, y)
        assert 0.0 <= ap <= 1.0
