"""Command-line front end tying the pipeline stages together.

Subcommands mirror the pipeline: generate, train, encode, serve,
sensor, actuator, eval, map.  Every subcommand accepts ``--config``
pointing at a JSON file with optional "train" / "encoder" / "augment" /
"roller" sections, and ``--seed``; explicit flags override the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .augment import AugmentConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import (DatasetError, load_dataset, save_dataset,
                      synthetic_manifest, synthesize_dataset)
from .index import IndexFormatError, build_index, export_centroids, load_centroids
from .moco import TrainConfig, train
from .nn import EncoderConfig
from .projection import export_map_2d, pca_fit, project, select_equidistant
from .roller import MotorEmulator, RollerConfig
from .service import (MatchingServer, MatchingTCPServer, TransportError,
                      run_actuator_client, run_sensor_client)
from .stats import (TrialsFormatError, generate_synthetic_trials, load_trials,
                    make_report, save_trials, svg_topk_curve)


def _load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise SystemExit(f"config section {name!r} must be an object")
    return dict(sec)


def _address(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


def _cmd_generate(args) -> int:
    manifest = synthetic_manifest(
        n_samples=args.samples, seed=args.seed, jig=not args.no_jig,
        participants=tuple(f"p{i:02d}" for i in range(args.participants)))
    frames = synthesize_dataset(manifest, seed=args.seed,
                                frames_per_sample=args.frames,
                                frame_size=args.frame_size)
    save_dataset(manifest, frames, args.out, storage=args.storage)
    total = sum(len(s) for s in frames)
    print(f"wrote {len(manifest.samples)} samples / {len(manifest.sessions)} sessions "
          f"({total} frames, {args.storage}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    dataset = load_dataset(args.data)
    frame_size = dataset[1][0][0].pixels.shape[0]

    aug_kw = _section(cfg, "augment")
    aug_kw.setdefault("crop_size", args.crop_size or max(frame_size - 8, 8))
    aug = AugmentConfig(**aug_kw)

    enc_kw = _section(cfg, "encoder")
    enc_kw.setdefault("input_size", aug.crop_size)
    if args.embedding_dim:
        enc_kw["embedding_dim"] = args.embedding_dim
    enc = EncoderConfig.from_dict(enc_kw)

    tr_kw = _section(cfg, "train")
    for key, val in (("epochs", args.epochs), ("seed", args.seed)):
        if val is not None:
            tr_kw[key] = val
    tr_kw.setdefault("epochs", 40)
    tr = TrainConfig(**tr_kw)

    def report(epoch, loss, top1):
        print(f"epoch {epoch:3d}  loss {loss:.4f}  top1 {top1:.4f}", flush=True)

    ckpt, history = train(dataset, aug, enc, tr, progress=report)
    save_checkpoint(ckpt, args.out)
    print(f"Max@top1 {history.max_top1:.4f}  Final@top1 {history.final_top1:.4f}  "
          f"({history.wall_time_s:.1f}s) -> {args.out}")
    return 0


def _cmd_encode(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    encoder = ckpt.to_encoder()
    aug = AugmentConfig.from_dict(ckpt.metadata["augment"])
    manifest, frames = load_dataset(args.data)
    vectors, labels = [], []
    for session, sess_frames in zip(manifest.sessions, frames):
        emb = encoder.embed_frames(sess_frames, aug)
        vectors.extend(emb)
        labels.extend([session.sample_id] * len(emb))
    idx = build_index(vectors, labels)
    export_centroids(idx, args.out)
    print(f"indexed {len(labels)} frames over {len(idx.centroids)} samples -> {args.out}")
    return 0


def _roller_from_args(args, cfg: dict, centroids: dict) -> RollerConfig:
    roller_kw = _section(cfg, "roller")
    if args.slots:
        roller_kw["slot_samples"] = tuple(args.slots.split(","))
        roller_kw["slot_count"] = len(roller_kw["slot_samples"])
    if "slot_samples" not in roller_kw:
        count = roller_kw.get("slot_count", min(16, len(centroids)))
        model = pca_fit(np.stack(list(centroids.values())), 1)
        scalars = {sid: float(project(model, c, 1)[0]) for sid, c in centroids.items()}
        roller_kw["slot_samples"] = tuple(select_equidistant(scalars, count))
        roller_kw["slot_count"] = count
    return RollerConfig(**roller_kw)


def _cmd_serve(args) -> int:
    cfg = _load_config(args.config)
    ckpt = load_checkpoint(args.ckpt)
    dim, centroids = load_centroids(args.index)
    idx = build_index(list(centroids.values()), list(centroids.keys()))
    roller = _roller_from_args(args, cfg, centroids)
    matching = MatchingServer(ckpt, idx, roller)
    server = MatchingTCPServer((args.host, args.port), matching)
    host, port = server.server_address[:2]
    print(f"serving {len(centroids)} samples (dim {dim}), "
          f"{roller.slot_count} roller slots on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("stopped")
    return 0


def _cmd_sensor(args) -> int:
    manifest, frames = load_dataset(args.data)
    if not 0 <= args.session < len(frames):
        raise SystemExit(f"session index {args.session} out of range")
    session_frames = frames[args.session]
    if args.frames:
        session_frames = session_frames[:args.frames]
    try:
        record = run_sensor_client(session_frames, args.address, timeout=args.timeout)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(record, sort_keys=True, indent=1))
    return 0


def _cmd_actuator(args) -> int:
    cfg = _load_config(args.config)
    roller_kw = _section(cfg, "roller")
    roller_kw.setdefault("slot_count", args.slot_count)
    roller = RollerConfig(**roller_kw)
    motor = MotorEmulator(roller)

    def show(t):
        print(f"cycle {t.cycle}: slot {t.from_slot} -> {t.to_slot}  "
              f"{t.frame.decode().strip()}  {t.reply.decode().strip()}", flush=True)

    try:
        run_actuator_client(args.address, motor, roller,
                            poll_interval=args.poll_interval,
                            max_cycles=args.max_cycles, on_transition=show)
    except KeyboardInterrupt:
        pass
    print(f"motor at {motor.state.position_steps} steps "
          f"({motor.state.angle:.2f} deg)")
    return 0


def _cmd_eval(args) -> int:
    if args.trials:
        trials = load_trials(args.trials)
    else:
        if not args.index:
            raise SystemExit("--trials or --index required")
        _, centroids = load_centroids(args.index)
        idx = build_index(list(centroids.values()), list(centroids.keys()))
        count = min(16, len(centroids))
        roller = RollerConfig(slot_count=count,
                              slot_samples=tuple(sorted(centroids)[:count]))
        trials = generate_synthetic_trials(idx, roller, args.noise,
                                           args.n_trials, seed=args.seed or 0)
        if args.save_trials:
            save_trials(trials, args.save_trials)
    max_top1 = final_top1 = 0.0
    if args.ckpt:
        meta = load_checkpoint(args.ckpt).metadata
        hist = meta.get("top1_history", [])
        if hist:
            max_top1, final_top1 = max(hist), hist[-1]
    report = make_report(max_top1, final_top1, trials,
                         two_sided=not args.one_sided)
    if args.out:
        Path(args.out).write_text(report.to_json())
    if args.svg:
        svg_topk_curve(report, args.svg)
    print(report.to_table())
    return 0


def _cmd_map(args) -> int:
    _, centroids = load_centroids(args.index)
    if len(centroids) < 2:
        raise SystemExit("need at least 2 centroids to fit a 2-D map")
    mat = np.stack(list(centroids.values()))
    model = pca_fit(mat, 2)
    pts = {sid: project(model, c, 2) for sid, c in centroids.items()}
    svg, sidecar = export_map_2d(pts, args.out)
    print(f"wrote {svg} and {sidecar}")
    if args.select:
        scalars = {sid: float(p[0]) for sid, p in pts.items()}
        picks = select_equidistant(scalars, args.select)
        print("equidistant lineup:", ",".join(picks))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="telextile",
                                     description="textile touch transmission pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("generate", help="synthesize a tactile dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=12)
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--frame-size", type=int, default=64)
    p.add_argument("--participants", type=int, default=1)
    p.add_argument("--no-jig", action="store_true")
    p.add_argument("--storage", choices=("png", "bin"), default="png")
    p.set_defaults(func=_cmd_generate, seed=0)

    p = sub.add_parser("train", help="contrastive training run")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--crop-size", type=int, default=None)
    p.add_argument("--embedding-dim", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="embed a dataset and export centroids")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("serve", help="run the matching server")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7340)
    p.add_argument("--slots", help="comma-separated roller sample ids")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("sensor", help="submit a captured session")
    common(p)
    p.add_argument("--address", type=_address, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--session", type=int, default=0)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--timeout", type=float, default=5.0)
    p.set_defaults(func=_cmd_sensor)

    p = sub.add_parser("actuator", help="poll the target slot and drive the motor")
    common(p)
    p.add_argument("--address", type=_address, required=True)
    p.add_argument("--poll-interval", type=float, default=1.0)
    p.add_argument("--max-cycles", type=int, default=None)
    p.add_argument("--slot-count", type=int, default=16)
    p.set_defaults(func=_cmd_actuator)

    p = sub.add_parser("eval", help="similarity-board statistics report")
    common(p)
    p.add_argument("--trials", help="JSONL trials file")
    p.add_argument("--index", help="centroid export for synthetic trials")
    p.add_argument("--ckpt", help="checkpoint whose history supplies Max/Final@top1")
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--n-trials", type=int, default=14)
    p.add_argument("--save-trials")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--svg", help="Top-K curve SVG path")
    p.add_argument("--one-sided", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("map", help="2-D latent map export")
    common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--select", type=int, default=None,
                   help="also print an equidistant lineup of this size")
    p.set_defaults(func=_cmd_map)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, KeyError,
            DatasetError, CheckpointError, IndexFormatError,
            TrialsFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
