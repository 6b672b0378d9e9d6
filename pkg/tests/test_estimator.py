import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bott import BoxLinkTracker
from bott.synth import SynthConfig, gen_scene
from bott.types import TrackStatus
from bott.utils import rng_for


def tiny_tracker(**kw):
    base = dict(mlp_dims=(16, 8), n_enc=1, n_heads=2, ffn_dims=(12, 8),
                epochs=2, batch_size=4, k=4, seed=0, augment=False)
    base.update(kw)
    return BoxLinkTracker(**base)


def scenes(n=2, seed=0):
    cfg = SynthConfig(n_agents={"car": 3, "pedestrian": 2, "bicycle": 0},
                      n_frames=12, miss_prob=0.05, clutter_rate=0.5,
                      seed=seed)
    return [gen_scene(cfg, rng_for(seed, 11, i), f"s-{i}") for i in range(n)]


def test_get_set_params_round_trip():
    est = tiny_tracker()
    params = est.get_params()
    assert params["k"] == 4
    assert params["mode"] == "online"
    est.set_params(k=8, mode="offline")
    assert est.k == 8 and est.mode == "offline"
    with pytest.raises(ValueError):
        est.set_params(nonsense=1)


def test_clone_keeps_params_drops_state():
    est = tiny_tracker().fit(scenes())
    assert hasattr(est, "params_")
    dup = clone(est)
    assert dup.get_params() == est.get_params()
    assert not hasattr(dup, "params_")


def test_predict_requires_fit():
    est = tiny_tracker()
    with pytest.raises(NotFittedError):
        est.predict(scenes())
    with pytest.raises(NotFittedError):
        est.transform(scenes())


def test_fit_predict_score_online():
    data = scenes()
    est = tiny_tracker().fit(data)
    assert len(est.history_) > 0
    preds = est.predict(data)
    assert len(preds) == 2
    for tracks in preds:
        assert tracks
        assert all(tr.status is not TrackStatus.UNCONFIRMED for tr in tracks)
    mota = est.score(data)
    assert -10.0 < mota <= 1.0


def test_predict_offline_mode():
    data = scenes(1)
    est = tiny_tracker(mode="offline").fit(data)
    tracks = est.predict(data)[0]
    n_real = sum(1 for tr in tracks for _, b in tr.boxes if not b.interpolated)
    assert n_real == sum(len(f.boxes) for f in data[0].frames)
    est.set_params(mode="sideways")
    with pytest.raises(ValueError):
        est.predict(data)


def test_transform_returns_window_scores():
    data = scenes(1)
    est = tiny_tracker().fit(data)
    mats = est.transform(data)
    assert len(mats) == 1
    assert len(mats[0]) == len(data[0].frames) - est.k + 1
    for m in mats[0]:
        assert m.ndim == 2 and m.shape[0] == m.shape[1]
        assert np.allclose(m, m.T, atol=1e-5)
        assert np.allclose(np.diag(m), 1.0, atol=1e-5)


def test_fit_rejects_unlabeled_scenes():
    data = scenes(1)
    from bott.synth import split_for_dbgen
    unlabeled, _ = split_for_dbgen(data[0])
    with pytest.raises(ValueError, match="labeled"):
        tiny_tracker().fit([unlabeled])


def test_fit_validates_scene_types():
    with pytest.raises(ValueError):
        tiny_tracker().fit([{"not": "a scene"}])
    with pytest.raises(ValueError):
        tiny_tracker().fit([])
