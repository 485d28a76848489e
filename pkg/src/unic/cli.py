"""Command line entry points.

Exit codes: 0 success, 2 bad usage (argparse), 3 malformed data or
config, 4 numeric failure (non-finite state, solver divergence),
1 anything else. Every command that writes an artifact drops a
`<artifact>.manifest.json` next to it recording the resolved
configuration, seeds, package versions, and input content hashes.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .dataio import (atomic_write_bytes, load_checkpoint, read_dataset,
                     save_checkpoint, write_dataset)
from .errors import DataFormatError, NumericError, UnicError
from .field import env_workers
from .metrics import bench_fps, evaluate_rollout
from .motion import motion_dim
from .profiles import PROFILES

TRAIN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "epochs": {"type": "integer", "minimum": 1},
        "lr_max": {"type": "number", "exclusiveMinimum": 0},
        "loss_scale": {"type": "number", "exclusiveMinimum": 0},
        "vertex_budget": {"type": "integer", "minimum": 1},
        "rollout_horizon": {"type": "integer", "minimum": 1},
        "jitter_std": {"type": "number", "minimum": 0},
        "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "weight_decay": {"type": "number", "minimum": 0},
        "seed": {"type": "integer"},
        "val_every": {"type": "integer", "minimum": 1},
    },
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_path, command, config, inputs, outputs, seed=None):
    config = {k: v for k, v in config.items()
              if not callable(v) and not k.startswith("_")}
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": {
            "unic": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": list(outputs),
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = out_path + ".manifest.json"
    atomic_write_bytes(path, [json.dumps(doc, indent=2, sort_keys=True)
                              .encode()])
    return path


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# -- gen-data ----------------------------------------------------------------


def cmd_gen_data(args):
    from .oracle import (build_capsule_body, garment_by_name,
                         generate_motion_clip, simulate_sequence)

    sk, poses = generate_motion_clip(args.kind, args.duration, fps=args.fps,
                                     seed=args.seed)
    body = build_capsule_body(sk)
    spec = garment_by_name(args.garment, sk)
    ds = simulate_sequence(sk, poses, spec, body, fps=args.fps,
                           garment_name=args.garment, kind=args.kind,
                           seed=args.seed,
                           penetration_limit=args.penetration_limit)
    _ensure_parent(args.out)
    write_dataset(args.out, ds)
    write_manifest(args.out, "gen-data", vars(args), [], [args.out],
                   seed=args.seed)
    print(f"wrote {args.out}: {ds.frames} frames, {ds.num_vertices} vertices, "
          f"{ds.body_pos.shape[1]} body points")
    return 0


# -- train --------------------------------------------------------------------


def cmd_train(args):
    from .estimator import GarmentDeformationRegressor
    from .train import resume as train_resume, train as train_loop

    datasets = [read_dataset(p) for p in args.data]
    val = [read_dataset(p) for p in (args.val or [])]
    overrides = {}
    if args.config:
        from .dataio import load_json_config

        overrides = load_json_config(args.config, TRAIN_CONFIG_SCHEMA)
    params = dict(profile=args.profile, epochs=args.epochs, seed=args.seed,
                  vertex_budget=args.budget, workers=args.workers)
    params.update(overrides)

    if args.resume:
        model, start_epoch, opt, cfg = train_resume(args.out)
        print(f"resuming at epoch {start_epoch}/{cfg.epochs}")
        opt2, history = train_loop(
            model, datasets, cfg, val_datasets=val, log_path=args.log,
            checkpoint_path=args.out, workers=args.workers,
            start_epoch=start_epoch, optimizer=opt,
            progress=_progress_printer(cfg.epochs))
    else:
        est = GarmentDeformationRegressor(**params)
        _ensure_parent(args.out)
        est.fit(datasets, val=val, log_path=args.log,
                checkpoint_path=args.out,
                progress=_progress_printer(params["epochs"]))
        history = est.history_
    write_manifest(args.out, "train", params,
                   list(args.data) + list(args.val or []) +
                   ([args.config] if args.config else []),
                   [args.out] + ([args.log] if args.log else []),
                   seed=args.seed)
    if history:
        last = history[-1]
        print(f"done: loss {last['train_loss']:.4e}"
              + (f", val {last['val_rmse_cm']:.3f} cm"
                 if last.get("val_rmse_cm") is not None else ""))
    return 0


def _progress_printer(epochs):
    def cb(row):
        if row["epoch"] % 10 == 9 or row["epoch"] == epochs - 1 \
                or row["val_rmse_cm"] is not None:
            msg = (f"epoch {row['epoch'] + 1}/{epochs} "
                   f"loss {row['train_loss']:.4e} lr {row['lr']:.2e}")
            if row["val_rmse_cm"] is not None:
                msg += f" val {row['val_rmse_cm']:.3f} cm"
            print(msg, flush=True)
    return cb


# -- eval ----------------------------------------------------------------------


def _load_model_for(ds, path):
    model, step, _, _ = load_checkpoint(path)
    if model.num_vertices != ds.num_vertices:
        raise DataFormatError(
            f"checkpoint is for {model.num_vertices} vertices, "
            f"dataset has {ds.num_vertices}")
    if model.motion_dim != motion_dim(ds.num_joints):
        raise DataFormatError(
            f"checkpoint motion dim {model.motion_dim} does not match "
            f"dataset joints J={ds.num_joints}")
    return model


def cmd_eval(args):
    from .train import prepare_clip, rollout_dataset

    ds = read_dataset(args.data)
    model = _load_model_for(ds, args.model)
    pred = rollout_dataset(model, ds, workers=args.workers,
                           resolve=not args.no_resolve)
    clip = prepare_clip(ds, with_bodies=True)
    report = evaluate_rollout(pred[1:], ds.garment[1:].astype(np.float64),
                              bodies=clip.bodies[1:])
    print(report.table())
    if args.json:
        _ensure_parent(args.json)
        atomic_write_bytes(args.json, [report.to_json().encode()])
        write_manifest(args.json, "eval", vars(args),
                       [args.data, args.model], [args.json], seed=None)
    return 0


# -- rollout ---------------------------------------------------------------------


def cmd_rollout(args):
    from .train import rollout_dataset

    ds = read_dataset(args.data)
    model = _load_model_for(ds, args.model)
    pred = rollout_dataset(model, ds, workers=args.workers,
                           resolve=not args.no_resolve)
    out = dataclasses.replace(ds, garment=pred.astype(np.float32))
    _ensure_parent(args.out)
    write_dataset(args.out, out)
    write_manifest(args.out, "rollout", vars(args),
                   [args.data, args.model], [args.out], seed=None)
    print(f"wrote {args.out}: {out.frames} predicted frames")
    return 0


# -- bench -------------------------------------------------------------------------


def cmd_bench(args):
    from .train import prepare_clip

    ds = read_dataset(args.data)
    model = _load_model_for(ds, args.model)
    clip = prepare_clip(ds, with_bodies=not args.no_resolve)
    from . import field as fld
    from .collision import resolve as collision_resolve
    from .train import RESOLVE_RADIUS

    T = ds.frames
    state = {"g": clip.garment[0]}

    def step(i):
        t = 1 + (i % (T - 1))
        logits = model.encoder.encode_np(clip.pairs[t])
        z = model.sample_np(logits)[0]
        root = clip.roots[t] if model.hyper.root_frame_queries else None
        g = fld.step(state["g"], z, model.field, root=root,
                     workers=args.workers,
                     positional_encoding=model.hyper.positional_encoding)
        if not args.no_resolve:
            g, _ = collision_resolve(g, clip.bodies[t], RESOLVE_RADIUS)
        state["g"] = g

    res = bench_fps(step, frames=args.frames, repeats=args.repeats)
    print(f"{res.fps:.1f} fps median over {args.repeats} x {args.frames} frames "
          f"(min {res.fps_min:.1f}, max {res.fps_max:.1f}, "
          f"{res.ms_per_frame:.2f} ms/frame, {args.workers} workers)")
    if args.json:
        _ensure_parent(args.json)
        doc = dict(res.to_dict(), workers=args.workers,
                   vertices=ds.num_vertices)
        atomic_write_bytes(args.json, [json.dumps(doc, indent=2).encode()])
    return 0


# -- serve ----------------------------------------------------------------------------


def cmd_serve(args):
    import asyncio

    from .oracle import build_capsule_body
    from .service import Engine, serve

    ds = read_dataset(args.data)
    model = _load_model_for(ds, args.model)
    sk = ds.skeleton_obj()
    if args.interactive:
        from .matching import MotionDatabase

        motions = [ds.motion] + [read_dataset(p).motion for p in args.db]
        db = MotionDatabase.build(motions, sk.num_joints, sk)
        engine = Engine(model, sk, ds.garment[0], database=db,
                        body=build_capsule_body(sk),
                        garment_faces=ds.garment_faces, workers=args.workers)
        mode = f"interactive ({len(db.rows)} db rows)"
    else:
        engine = Engine(model, sk, ds.garment[0], playback=ds,
                        workers=args.workers)
        mode = f"playback ({ds.frames} frames)"
    print(f"serving {mode} on ws://{args.host}:{args.port}", flush=True)
    try:
        asyncio.run(serve(engine, host=args.host, port=args.port))
    except KeyboardInterrupt:
        pass
    except OSError as e:
        print(f"error: cannot listen on {args.host}:{args.port}: {e}",
              file=sys.stderr)
        return 1
    return 0


# -- parser -----------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="unic",
        description="Real-time garment deformation: data, training, serving.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    workers_default = env_workers(1)

    g = sub.add_parser("gen-data", help="simulate a clothed motion clip")
    g.add_argument("--kind", required=True,
                   choices=("idle", "walk", "turn", "sprint_stop"))
    g.add_argument("--duration", type=float, required=True,
                   help="seconds of motion")
    g.add_argument("--garment", default="skirt",
                   help="skirt | cape | tabard | skirt3k | path/to/mesh.obj")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--fps", type=int, default=30)
    g.add_argument("--penetration-limit", type=float, default=1e-4,
                   help="fail if the solver lets cloth sink deeper than this")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fit a model on simulated datasets")
    t.add_argument("--data", nargs="+", required=True)
    t.add_argument("--val", nargs="*", default=[])
    t.add_argument("--out", required=True, help="checkpoint path (.unicckpt)")
    t.add_argument("--log", default=None, help="CSV training log")
    t.add_argument("--profile", default="desk", choices=sorted(PROFILES))
    t.add_argument("--epochs", type=int, default=300)
    t.add_argument("--budget", type=int, default=10000,
                   help="vertices per optimizer step")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--workers", type=int, default=workers_default)
    t.add_argument("--config", default=None,
                   help="JSON file overriding training fields")
    t.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint at --out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report rollout quality metrics")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--json", default=None, help="also write the report here")
    e.add_argument("--no-resolve", action="store_true")
    e.add_argument("--workers", type=int, default=workers_default)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="write predicted garment frames")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--no-resolve", action="store_true")
    r.add_argument("--workers", type=int, default=workers_default)
    r.set_defaults(func=cmd_rollout)

    b = sub.add_parser("bench", help="measure steady-state frame rate")
    b.add_argument("--model", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--frames", type=int, default=100)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--no-resolve", action="store_true")
    b.add_argument("--workers", type=int, default=workers_default)
    b.add_argument("--json", default=None)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("serve", help="stream frames over a websocket")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True,
                   help="dataset supplying the drape and faces")
    s.add_argument("--db", nargs="*", default=[],
                   help="extra datasets for the matching database")
    s.add_argument("--interactive", action="store_true",
                   help="motion matching instead of clip playback")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--workers", type=int, default=workers_default)
    s.set_defaults(func=cmd_serve)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except UnicError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
