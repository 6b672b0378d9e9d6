"""JSONL persistence for scenes and track outputs.

A scene file starts with a header line {scene_id, frequency_hz, class_names}
followed by one line per frame {frame_idx, t, boxes: [...]}, boxes as flat
JSON objects mirroring Box3D.  Numbers are written with full 64-bit decimal
round-trip precision (plain json repr), so save/load is bit-exact.
"""
from __future__ import annotations

import json
import os
from typing import Iterable

from .types import Box3D, DetectionFrame, SceneDB, Track, TrackStatus, tracks_from_labels

SCENE_SUFFIX = ".jsonl"


def box_to_record(box: Box3D) -> dict:
    rec = {
        "box_id": box.box_id,
        "x": box.x, "y": box.y, "z": box.z,
        "w": box.w, "l": box.l, "h": box.h,
        "yaw": box.yaw,
        "t": box.t,
        "frame_idx": box.frame_idx,
        "class_scores": list(box.class_scores),
        "det_score": box.det_score,
        "velocity": list(box.velocity) if box.velocity is not None else None,
        "gt_track_id": box.gt_track_id,
    }
    if box.interpolated:
        rec["interpolated"] = True
    return rec


def box_from_record(rec: dict) -> Box3D:
    try:
        vel = rec.get("velocity")
        return Box3D(
            x=float(rec["x"]), y=float(rec["y"]), z=float(rec["z"]),
            w=float(rec["w"]), l=float(rec["l"]), h=float(rec["h"]),
            yaw=float(rec["yaw"]), t=float(rec["t"]),
            frame_idx=int(rec["frame_idx"]),
            class_scores=tuple(float(s) for s in rec["class_scores"]),
            box_id=int(rec["box_id"]),
            det_score=float(rec.get("det_score", 1.0)),
            velocity=tuple(float(v) for v in vel) if vel is not None else None,
            gt_track_id=int(rec["gt_track_id"]) if rec.get("gt_track_id") is not None else None,
            interpolated=bool(rec.get("interpolated", False)),
        )
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed box record: {e}") from e


def save_scene(scene: SceneDB, path: str) -> None:
    with open(path, "w") as fh:
        header = {
            "scene_id": scene.scene_id,
            "frequency_hz": scene.frequency_hz,
            "class_names": list(scene.class_names),
        }
        fh.write(json.dumps(header) + "\n")
        for frame in scene.frames:
            rec = {
                "frame_idx": frame.frame_idx,
                "t": frame.t,
                "boxes": [box_to_record(b) for b in frame.boxes],
            }
            fh.write(json.dumps(rec) + "\n")


def load_scene(path: str) -> SceneDB:
    with open(path) as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if not lines:
        raise ValueError(f"{path}: empty scene file")
    try:
        header = json.loads(lines[0])
        scene = SceneDB(
            scene_id=str(header["scene_id"]),
            frequency_hz=float(header["frequency_hz"]),
            class_names=tuple(str(c) for c in header["class_names"]),
        )
        for ln in lines[1:]:
            rec = json.loads(ln)
            frame = DetectionFrame(
                frame_idx=int(rec["frame_idx"]),
                t=float(rec["t"]),
                boxes=tuple(box_from_record(b) for b in rec["boxes"]),
            )
            scene.frames.append(frame)
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ValueError(f"{path}: malformed scene file: {e}") from e
    scene.frames.sort(key=lambda f: f.t)
    scene.gt_tracks = tracks_from_labels(scene.frames)
    return scene


def scene_paths(directory: str) -> list[str]:
    names = sorted(n for n in os.listdir(directory)
                   if n.endswith(SCENE_SUFFIX) and not n.endswith(".tracks.jsonl"))
    return [os.path.join(directory, n) for n in names]


def load_scenes(directory: str) -> list[SceneDB]:
    paths = scene_paths(directory)
    if not paths:
        raise ValueError(f"{directory}: no scene files (*{SCENE_SUFFIX})")
    return [load_scene(p) for p in paths]


def save_tracks(path: str, scene_id: str, rows: Iterable[tuple[int, Box3D]]) -> None:
    """Write one record per (frame, track): ids plus the flat box fields."""
    with open(path, "w") as fh:
        for track_id, box in rows:
            rec = {"scene_id": scene_id, "track_id": track_id}
            rec.update(box_to_record(box))
            fh.write(json.dumps(rec) + "\n")


def load_tracks(path: str) -> list[Track]:
    """Rebuild Track objects from a track output file."""
    rows: dict[int, list[tuple[int, Box3D]]] = {}
    with open(path) as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
                tid = int(rec["track_id"])
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}: malformed track record: {e}") from e
            rows.setdefault(tid, []).append((int(rec["frame_idx"]), box_from_record(rec)))
    tracks = []
    for tid in sorted(rows):
        entries = sorted(rows[tid], key=lambda e: e[0])
        tr = Track(tid, entries[0][1].class_id, status=TrackStatus.CONFIRMED)
        for fi, b in entries:
            tr.append(fi, b)
        tracks.append(tr)
    return tracks


def track_rows(tracks: Iterable[Track]) -> list[tuple[int, Box3D]]:
    """Flatten tracks to (track_id, box) rows in (frame, track) order."""
    rows = []
    for tr in tracks:
        for fi, b in tr.boxes:
            rows.append((fi, tr.track_id, b))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [(tid, b) for _, tid, b in rows]


def write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
