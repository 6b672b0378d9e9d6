"""Command line interface.

Subcommands: synth, gen-db, train, track, eval, bench.  Exit codes:
0 success, 1 usage error, 2 data error.  Every run echoes its effective
configuration into the output directory, and BOTT_THREADS caps worker
parallelism for the per-scene stages.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

from . import io
from .featurizer import AugmentConfig
from .loss import LossConfig
from .metrics import evaluate_scenes
from .network import LinkScorer, NetworkConfig, load_checkpoint
from .offline import run_offline
from .online import OnlineConfig, run_online
from .synth import SynthConfig, gen_scene, make_scenes
from .trackdb import DbGenConfig, generate_scene_db
from .trainer import TrainConfig, train
from .types import SceneDB
from .utils import parallel_map, rng_for
from .validation import check_scenes

CONFIG_SECTIONS = {
    "synth": SynthConfig,
    "network": NetworkConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "augment": AugmentConfig,
    "dbgen": DbGenConfig,
    "online": OnlineConfig,
}


def _from_dict(cls, data: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown keys in [{section}] config: {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ValueError(f"bad [{section}] config: {e}") from e


def load_config(path: str | None) -> dict:
    """Parse the run config JSON into config objects per section."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(raw) - set(CONFIG_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    out = {}
    for section, cls in CONFIG_SECTIONS.items():
        if section in raw:
            out[section] = _from_dict(cls, raw[section], section)
    return out


def _echo_config(out_dir: str, sections: dict, extra: dict) -> None:
    payload = dict(extra)
    for name, cfg in sections.items():
        if dataclasses.is_dataclass(cfg):
            payload[name] = dataclasses.asdict(cfg)
        else:
            payload[name] = cfg
    io.write_json(os.path.join(out_dir, "effective_config.json"), payload)


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_synth(args) -> int:
    cfgs = load_config(args.config)
    synth_cfg = cfgs.get("synth", SynthConfig())
    if args.hz is not None:
        synth_cfg = dataclasses.replace(synth_cfg, frequency_hz=args.hz)
    seed = args.seed if args.seed is not None else synth_cfg.seed
    out = _ensure_out(args.out)
    scenes = make_scenes(synth_cfg, args.scenes, seed=seed)
    for scene in scenes:
        io.save_scene(scene, os.path.join(out, f"{scene.scene_id}.jsonl"))
    _echo_config(out, {"synth": synth_cfg},
                 {"command": "synth", "seed": seed, "n_scenes": args.scenes})
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def cmd_gen_db(args) -> int:
    cfgs = load_config(args.config)
    db_cfg = cfgs.get("dbgen", DbGenConfig())
    if args.hz is not None:
        db_cfg = dataclasses.replace(db_cfg, target_hz=args.hz)
    det_scenes = {s.scene_id: s for s in io.load_scenes(args.dets)}
    gt_scenes = {s.scene_id: s for s in io.load_scenes(args.gt)}
    missing = sorted(set(det_scenes) - set(gt_scenes))
    if missing:
        raise ValueError(f"no GT scene for: {missing}")
    out = _ensure_out(args.out)

    def one(sid: str) -> str:
        db = generate_scene_db(det_scenes[sid], gt_scenes[sid], db_cfg)
        path = os.path.join(out, f"{sid}.jsonl")
        io.save_scene(db, path)
        return path

    paths = parallel_map(one, sorted(det_scenes))
    _echo_config(out, {"dbgen": db_cfg}, {"command": "gen-db"})
    print(f"wrote {len(paths)} labeled scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfgs = load_config(args.config)
    scenes = check_scenes(io.load_scenes(args.db), require_labels=True)
    n_classes = len(scenes[0].class_names)
    net_cfg = cfgs.get("network", NetworkConfig(n_classes=n_classes))
    if net_cfg.n_classes != n_classes:
        raise ValueError(f"network config says {net_cfg.n_classes} classes, "
                         f"scenes have {n_classes}")
    train_cfg = cfgs.get("train", TrainConfig())
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if args.k is not None:
        train_cfg = dataclasses.replace(train_cfg, k=args.k)
    loss_cfg = cfgs.get("loss", LossConfig())
    aug_cfg = cfgs.get("augment", AugmentConfig()) if not args.no_augment else None
    out = _ensure_out(args.out)
    _echo_config(out, {"network": net_cfg, "train": train_cfg, "loss": loss_cfg,
                       "augment": aug_cfg},
                 {"command": "train", "db": args.db})
    result = train(scenes, net_cfg, train_cfg, loss_cfg=loss_cfg, aug_cfg=aug_cfg,
                   out_dir=out, resume=args.resume, quiet=args.quiet)
    print(f"trained {train_cfg.epochs} epochs; checkpoint at {result.checkpoint} "
          f"(skipped {result.n_skipped_windows} windows, "
          f"rejected {result.n_rejected_batches} batches)")
    return 0


def cmd_track(args) -> int:
    cfgs = load_config(args.config)
    params, net_cfg = load_checkpoint(args.checkpoint)
    scenes = check_scenes(io.load_scenes(args.db))
    if len(scenes[0].class_names) != net_cfg.n_classes:
        raise ValueError(f"checkpoint expects {net_cfg.n_classes} classes, "
                         f"scenes have {len(scenes[0].class_names)}")
    online_cfg = cfgs.get("online", OnlineConfig())
    if args.k is not None:
        online_cfg = dataclasses.replace(online_cfg, k=args.k)
    out = _ensure_out(args.out)

    def one(scene: SceneDB) -> str:
        scorer = LinkScorer(params, net_cfg)
        if args.mode == "offline":
            tracks = run_offline(scene, scorer, online_cfg.k, online_cfg)
            rows = io.track_rows(tracks)
        else:
            rows, _ = run_online(scene, scorer, online_cfg)
        path = os.path.join(out, f"{scene.scene_id}.tracks.jsonl")
        io.save_tracks(path, scene.scene_id, rows)
        return path

    paths = parallel_map(one, scenes)
    _echo_config(out, {"online": online_cfg},
                 {"command": "track", "mode": args.mode,
                  "checkpoint": args.checkpoint, "db": args.db})
    print(f"wrote tracks for {len(paths)} scenes to {out}")
    return 0


def cmd_eval(args) -> int:
    scenes = check_scenes(io.load_scenes(args.db))
    pairs = []
    for scene in scenes:
        path = os.path.join(args.pred, f"{scene.scene_id}.tracks.jsonl")
        if not os.path.exists(path):
            raise ValueError(f"missing track file {path}")
        pairs.append((io.load_tracks(path), scene.gt_tracks))
    result = evaluate_scenes(pairs, scenes[0].class_names)
    out = _ensure_out(args.out)
    io.write_json(os.path.join(out, "report.json"), result.to_dict())
    _echo_config(out, {}, {"command": "eval", "pred": args.pred, "db": args.db})
    ov = result.overall
    print(f"MOTA {ov.mota:.4f}  recall {ov.recall:.4f}  IDS {ov.ids}  "
          f"FP {ov.fp}  FN {ov.fn}  samota {result.samota:.4f}")
    return 0


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"bad --sizes {args.sizes!r}")
    cfgs = load_config(args.config)
    net_cfg = cfgs.get("network", NetworkConfig(n_classes=3, mlp_dims=(128, 128, 128, 64),
                                                ffn_dims=(128, 64)))
    from .network import forward_features, init_params
    params = init_params(net_cfg, rng_for(args.seed or 0, 1))
    rows = []
    rng = rng_for(args.seed or 0, 2)
    for n in sorted(sizes):
        feats = rng.normal(0, 1, size=(n, net_cfg.input_dim))
        forward_features(feats, params, net_cfg)  # warm up caches
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            forward_features(feats, params, net_cfg)
            times.append(time.perf_counter() - t0)
        rows.append({"n_boxes": n, "seconds": sorted(times)[1]})
    table = {"network": net_cfg.to_dict(), "rows": rows}
    print(f"{'n_boxes':>8}  {'seconds':>10}")
    for r in rows:
        print(f"{r['n_boxes']:>8}  {r['seconds']:>10.4f}")
    if args.out:
        out = _ensure_out(args.out)
        io.write_json(os.path.join(out, "bench.json"), table)
        _echo_config(out, {"network": net_cfg}, {"command": "bench"})
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bott", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("synth", help="generate synthetic scenes")
    common(sp)
    sp.add_argument("--scenes", type=int, default=10)
    sp.add_argument("--hz", type=float, default=None)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("gen-db", help="label detections against GT")
    common(sp)
    sp.add_argument("--dets", required=True, help="raw detection scenes dir")
    sp.add_argument("--gt", required=True, help="GT scenes dir")
    sp.add_argument("--hz", type=float, default=None)
    sp.set_defaults(fn=cmd_gen_db)

    sp = sub.add_parser("train", help="train the linking network")
    common(sp)
    sp.add_argument("--db", required=True, help="labeled scenes dir")
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--resume", default=None, help="dir with last.bott/trainstate.bott")
    sp.add_argument("--no-augment", action="store_true")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("track", help="run the tracker over scenes")
    common(sp)
    sp.add_argument("--db", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--mode", choices=("online", "offline"), default="online")
    sp.add_argument("--k", type=int, default=None)
    sp.set_defaults(fn=cmd_track)

    sp = sub.add_parser("eval", help="CLEAR metrics for tracks vs GT")
    common(sp)
    sp.add_argument("--db", required=True)
    sp.add_argument("--pred", required=True, help="dir with *.tracks.jsonl")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("bench", help="forward-pass timing table")
    common(sp, out_required=False)
    sp.add_argument("--sizes", default="100,250,500,1000")
    sp.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as e:
        print(f"bott: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
