"""Input validation for scene databases and user-facing entry points."""
from __future__ import annotations

from .types import SceneDB


def check_scene(scene: SceneDB) -> SceneDB:
    """Validate one scene: typed, time ordered, evenly spaced frames."""
    if not isinstance(scene, SceneDB):
        raise ValueError(f"expected SceneDB, got {type(scene).__name__}")
    if scene.frequency_hz <= 0:
        raise ValueError(f"{scene.scene_id}: frequency_hz must be positive")
    if not scene.class_names:
        raise ValueError(f"{scene.scene_id}: empty class_names")
    frames = scene.frames
    period = 1.0 / scene.frequency_hz
    for a, b in zip(frames, frames[1:]):
        if b.t <= a.t:
            raise ValueError(f"{scene.scene_id}: frames out of order at t={b.t}")
        if abs((b.t - a.t) - period) > 0.01 * period:
            raise ValueError(
                f"{scene.scene_id}: spacing {b.t - a.t:.6f}s between frames "
                f"{a.frame_idx},{b.frame_idx} is not {period:.6f}s (1% tolerance)")
    n_classes = len(scene.class_names)
    for f in frames:
        for box in f.boxes:
            if len(box.class_scores) != n_classes:
                raise ValueError(
                    f"{scene.scene_id}: box {box.box_id} has "
                    f"{len(box.class_scores)} class scores, expected {n_classes}")
    return scene


def check_scenes(scenes, require_labels: bool = False) -> list[SceneDB]:
    """Validate a scene list and its cross-scene consistency."""
    scenes = list(scenes)
    if not scenes:
        raise ValueError("empty scene list")
    for s in scenes:
        check_scene(s)
    names = scenes[0].class_names
    for s in scenes[1:]:
        if s.class_names != names:
            raise ValueError(
                f"{s.scene_id}: class names {s.class_names} differ from {names}")
    if require_labels:
        for s in scenes:
            if not any(b.gt_track_id is not None for f in s.frames for b in f.boxes):
                raise ValueError(f"{s.scene_id}: no labeled boxes; run gen-db first")
    return scenes
