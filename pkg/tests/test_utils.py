import threading

import pytest

from bott.utils import parallel_map, rng_for, thread_budget
from bott.validation import check_scene, check_scenes
from bott.synth import SynthConfig, gen_scene
from bott.types import DetectionFrame, SceneDB


def test_rng_for_is_stable_and_key_sensitive():
    a = rng_for(1, 2, 3).integers(1_000_000, size=8)
    b = rng_for(1, 2, 3).integers(1_000_000, size=8)
    c = rng_for(1, 2, 4).integers(1_000_000, size=8)
    d = rng_for(3, 2, 1).integers(1_000_000, size=8)
    assert list(a) == list(b)
    assert list(a) != list(c)
    assert list(a) != list(d)


def test_thread_budget_env(monkeypatch):
    monkeypatch.delenv("BOTT_THREADS", raising=False)
    assert thread_budget() >= 1
    monkeypatch.setenv("BOTT_THREADS", "3")
    assert thread_budget() == 3
    monkeypatch.setenv("BOTT_THREADS", "0")
    with pytest.raises(ValueError):
        thread_budget()
    monkeypatch.setenv("BOTT_THREADS", "lots")
    with pytest.raises(ValueError):
        thread_budget()


def test_parallel_map_preserves_order(monkeypatch):
    monkeypatch.setenv("BOTT_THREADS", "4")
    items = list(range(20))
    assert parallel_map(lambda x: x * x, items) == [x * x for x in items]
    monkeypatch.setenv("BOTT_THREADS", "1")
    assert parallel_map(lambda x: -x, items) == [-x for x in items]
    assert parallel_map(lambda x: x, []) == []


def test_parallel_map_respects_budget(monkeypatch):
    monkeypatch.setenv("BOTT_THREADS", "2")
    seen = set()
    lock = threading.Lock()

    def worker(x):
        with lock:
            seen.add(threading.current_thread().name)
        return x

    parallel_map(worker, list(range(40)))
    assert len(seen) <= 2


def test_check_scene_accepts_valid(monkeypatch):
    from bott.utils import rng_for
    scene = gen_scene(SynthConfig(n_frames=5, seed=0), rng_for(0), "s")
    assert check_scene(scene) is scene


def test_check_scene_rejects_bad_input():
    with pytest.raises(ValueError, match="SceneDB"):
        check_scene("nope")
    scene = SceneDB("s", 10.0, ("car",), [
        DetectionFrame(0, 0.0, ()),
        DetectionFrame(1, 0.2, ()),     # 0.2 s gap at 10 Hz
    ])
    with pytest.raises(ValueError, match="spacing"):
        check_scene(scene)
    empty_names = SceneDB("s", 10.0, (), [])
    with pytest.raises(ValueError, match="class_names"):
        check_scene(empty_names)


def test_check_scenes_consistency():
    a = SceneDB("a", 10.0, ("car",), [])
    b = SceneDB("b", 10.0, ("car", "ped"), [])
    with pytest.raises(ValueError, match="class names"):
        check_scenes([a, b])
    with pytest.raises(ValueError, match="empty"):
        check_scenes([])
    assert check_scenes([a]) == [a]
