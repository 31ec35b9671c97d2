"""Command-line pipeline: synth, train, embed, traj, eval, plot.

Exit codes: 0 success, 2 usage or configuration error, 3 data error.
Results go to stdout, diagnostics to stderr. Every subcommand takes
--seed and may read defaults from a JSON config file via --config
(flags override the file).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .embedding import (
    EmbedConfig,
    embedding_to_json,
    fit_planar_embedding,
    transform_new,
)
from .errors import ConfigError, CropTrajError, DataError, NumericError, ParseError
from .evaluation import (
    eval_heads,
    eval_unseen_classes,
    format_report_table,
    report_to_json,
)
from .features import Scale, split_train_test
from .pretext import (
    HeadConfig,
    TrainConfig,
    build_model,
    encode,
    load_model,
    save_model,
    train,
)
from .plotting import scatter_svg
from .synthetic import SynthConfig, gen_synthetic
from .tltf import read_features_file, write_features_file
from .trajectory import (
    Track,
    fit_group_mixtures,
    load_mixture,
    rollout,
    save_mixture,
)

COORD_COLUMNS = (
    "track_id", "session_index", "x", "y", "variety_id", "fungicide", "rot", "split"
)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="random seed")
    sub.add_argument("--config", type=Path, help="JSON file with flag defaults")
    sub.add_argument("--verbose", action="store_true",
                     help="extra diagnostics on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="croptraj",
        description="Latent growth-trajectory pipeline for time-lapse crop features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic TLTF feature file")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--tracks", type=int, default=8)
    p.add_argument("--sessions", type=int, default=40)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--span", type=float, default=108.0)
    p.add_argument("--scale", choices=["patch", "berry"], default="patch")
    p.add_argument("--fungicide-fraction", type=float, default=0.5)
    p.add_argument("--rot-fraction", type=float, default=0.0)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("train", help="train the encoder and pretext heads")
    p.add_argument("--in", dest="input", type=Path, required=True, help="TLTF file")
    p.add_argument("--heads", default="time", help="comma list: time,variety,fungicide,rot")
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--out", type=Path, required=True, help="model JSON path")
    _add_common(p)

    p = sub.add_parser("embed", help="fit the 2D projection and export coordinates")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--min-dist", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--neg", type=int, default=5)
    p.add_argument("--out-embedding", type=Path, required=True)
    p.add_argument("--out-coords", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("traj", help="fit trajectory mixtures or roll one out")
    traj_sub = p.add_subparsers(dest="traj_command", required=True)

    pf = traj_sub.add_parser("fit", help="fit mixtures from a coordinate export")
    pf.add_argument("--coords", type=Path, required=True)
    pf.add_argument("--lag", "--eps", dest="lag", type=int, default=1,
                    help="sessions per velocity step")
    pf.add_argument("--k", type=int, default=8, help="mixture components")
    pf.add_argument("--split", choices=["train", "test", "all"], default="train")
    pf.add_argument("--pooled", action="store_true", help="one mixture for all tracks")
    pf.add_argument("--out-dir", type=Path, required=True)
    _add_common(pf)

    pr = traj_sub.add_parser("rollout", help="integrate a fitted mixture")
    pr.add_argument("--mixture", type=Path, required=True)
    pr.add_argument("--start", required=True, help="x,y start position")
    pr.add_argument("--steps", type=int, required=True)
    pr.add_argument("--mode", choices=["mean", "sample"], default="mean")
    pr.add_argument("--lag", "--eps", dest="lag", type=int, default=1)
    pr.add_argument("--out", type=Path, help="CSV path; stdout if omitted")
    _add_common(pr)

    p = sub.add_parser("eval", help="evaluate heads or the unseen-class protocol")
    p.add_argument("--model", type=Path)
    p.add_argument("--in", dest="input", type=Path, help="TLTF file")
    p.add_argument("--coords", type=Path, help="coordinate export (unseen mode)")
    p.add_argument("--unseen", type=int, help="withheld variety count")
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--out", type=Path, help="report JSON path")
    _add_common(p)

    p = sub.add_parser("plot", help="export an SVG scatter of embedded points")
    p.add_argument("--coords", type=Path, required=True)
    p.add_argument("--color", default="time", help="time, variety, or fungicide")
    p.add_argument("--rollout", type=Path, action="append", default=[],
                   help="rollout CSV to overlay (repeatable)")
    p.add_argument("--split", choices=["train", "test", "all"], default="all")
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    return parser


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    if not getattr(args, "config", None):
        return
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    supplied = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        flag = "--" + key.replace("_", "-")
        if not hasattr(args, dest):
            raise ConfigError(f"config key {key!r} is not a flag of this command")
        if flag not in supplied:
            setattr(args, dest, value)


def _vlog(args, message: str) -> None:
    if getattr(args, "verbose", False):
        print(message, file=sys.stderr)


def write_coords(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(COORD_COLUMNS) + "\n")
        for row in rows:
            rot = "" if row["rot"] is None else int(row["rot"])
            fh.write(
                f'{row["track_id"]},{row["session_index"]},{row["x"]!r},'
                f'{row["y"]!r},{row["variety_id"]},{int(row["fungicide"])},'
                f'{rot},{row["split"]}\n'
            )


def read_coords(path: Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != list(COORD_COLUMNS):
            raise DataError(f"{path}: unexpected coordinate columns {header}")
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(COORD_COLUMNS):
                raise DataError(f"{path}:{line_no}: malformed row")
            rows.append(
                {
                    "track_id": int(parts[0]),
                    "session_index": int(parts[1]),
                    "x": float(parts[2]),
                    "y": float(parts[3]),
                    "variety_id": int(parts[4]),
                    "fungicide": bool(int(parts[5])),
                    "rot": None if parts[6] == "" else bool(int(parts[6])),
                    "split": parts[7],
                }
            )
    if not rows:
        raise DataError(f"{path}: no coordinate rows")
    return rows


def _rows_to_tracks(rows: list[dict]) -> list[Track]:
    by_track: dict[int, list[dict]] = {}
    for row in rows:
        by_track.setdefault(row["track_id"], []).append(row)
    tracks = []
    for tid in sorted(by_track):
        members = sorted(by_track[tid], key=lambda r: r["session_index"])
        if len(members) < 2:
            continue
        tracks.append(
            Track(
                track_id=tid,
                sessions=[m["session_index"] for m in members],
                points=[[m["x"], m["y"]] for m in members],
                variety_id=members[0]["variety_id"],
                fungicide=members[0]["fungicide"],
            )
        )
    return tracks


def _select_split(rows: list[dict], split: str) -> list[dict]:
    if split == "all":
        return rows
    picked = [r for r in rows if r["split"] == split]
    if not picked:
        raise DataError(f"no rows tagged split={split!r}")
    return picked


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_classes=args.classes,
        tracks_per_class=args.tracks,
        n_sessions=args.sessions,
        feature_dim=args.dim,
        noise_std=args.noise,
        span_days=args.span,
        fungicide_fraction=args.fungicide_fraction,
        rot_fraction=args.rot_fraction,
        scale=Scale(args.scale),
    )
    _vlog(args, f"synth config: {cfg}")
    feature_set, _ = gen_synthetic(cfg, seed=args.seed)
    write_features_file(feature_set, args.out)
    print(f"wrote {len(feature_set)} records to {args.out}")
    return 0


def _head_config(heads_csv: str, n_classes: int) -> HeadConfig:
    names = [h.strip() for h in heads_csv.split(",") if h.strip()]
    valid = {"time", "variety", "fungicide", "rot"}
    unknown = set(names) - valid
    if unknown:
        raise ConfigError(f"unknown heads: {sorted(unknown)}")
    if not names:
        raise ConfigError("at least one head is required")
    return HeadConfig(
        time="time" in names,
        variety="variety" in names,
        fungicide="fungicide" in names,
        rot="rot" in names,
        n_classes=n_classes if "variety" in names else 0,
    )


def cmd_train(args) -> int:
    feature_set = read_features_file(args.input)
    head_config = _head_config(args.heads, len(feature_set.class_names))
    train_set, held_out = split_train_test(feature_set, args.train_fraction, args.seed)
    _vlog(args, f"split: {len(train_set)} train / {len(held_out)} held out")
    model = build_model(feature_set.feature_dim, head_config, seed=args.seed)
    _vlog(args, f"encoder dims: {model.input_dim} -> "
                f"{model.encoder[0].out_dim} -> {model.latent_dim}")
    train_cfg = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    model, history = train(model, train_set, train_cfg)
    save_model(model, args.out)
    for epoch, loss in enumerate(history, start=1):
        print(f"epoch {epoch}/{len(history)} loss {loss:.6f}")
    print(f"wrote model to {args.out}")
    return 0


def cmd_embed(args) -> int:
    model = load_model(args.model)
    feature_set = read_features_file(args.input)
    if model.input_dim != feature_set.feature_dim:
        raise ConfigError(
            f"model expects {model.input_dim}-dim features, file has "
            f"{feature_set.feature_dim}"
        )
    train_set, test_set = split_train_test(
        feature_set, args.train_fraction, args.seed
    )
    embed_cfg = EmbedConfig(
        n_neighbors=args.k,
        min_dist=args.min_dist,
        n_epochs=args.epochs,
        negative_sample_rate=args.neg,
    )
    train_latents = encode(model, train_set.feature_matrix())
    emb = fit_planar_embedding(train_latents, embed_cfg, seed=args.seed)
    _vlog(args, f"fitted curve params a={emb.a:.4f} b={emb.b:.4f}")
    rows = []
    for rec, xy in zip(train_set.records, emb.coords):
        rows.append(_coord_row(rec, xy, "train"))
    if len(test_set):
        test_coords = transform_new(emb, encode(model, test_set.feature_matrix()))
        for rec, xy in zip(test_set.records, test_coords):
            rows.append(_coord_row(rec, xy, "test"))
    with open(args.out_embedding, "w", encoding="utf-8") as fh:
        fh.write(embedding_to_json(emb))
    write_coords(args.out_coords, rows)
    print(
        f"embedded {len(train_set)} train + {len(test_set)} test records; "
        f"coordinates in {args.out_coords}"
    )
    return 0


def _coord_row(rec, xy, split: str) -> dict:
    return {
        "track_id": rec.track_id,
        "session_index": rec.session_index,
        "x": float(xy[0]),
        "y": float(xy[1]),
        "variety_id": rec.variety_id,
        "fungicide": rec.fungicide,
        "rot": rec.rot,
        "split": split,
    }


def cmd_traj_fit(args) -> int:
    rows = _select_split(read_coords(args.coords), args.split)
    tracks = _rows_to_tracks(rows)
    short = [t.track_id for t in tracks if len(t) <= args.lag]
    for tid in short:
        print(f"warning: track {tid} shorter than lag+1, skipped", file=sys.stderr)
    _vlog(args, f"{len(tracks)} tracks from {len(rows)} rows")
    mixtures = fit_group_mixtures(
        tracks, lag=args.lag, n_components=args.k, seed=args.seed, pooled=args.pooled
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for key, gmm in mixtures.items():
        if key == "pooled":
            name = "mixture_pooled.json"
            label = "pooled"
        else:
            variety, fungicide = key
            name = f"mixture_v{variety}_f{int(fungicide)}.json"
            label = f"variety={variety} fungicide={int(fungicide)}"
        path = args.out_dir / name
        save_mixture(gmm, path)
        print(f"{label}: {gmm.n_components} components -> {path}")
    return 0


def cmd_traj_rollout(args) -> int:
    gmm = load_mixture(args.mixture)
    try:
        x0 = np.array([float(v) for v in args.start.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad --start {args.start!r}: {exc}") from exc
    if x0.shape != (2,):
        raise ConfigError("--start must be x,y")
    result = rollout(
        gmm, x0, steps=args.steps, mode=args.mode, seed=args.seed, lag=args.lag
    )
    lines = [
        f"{step},{float(x)!r},{float(y)!r}"
        for step, (x, y) in enumerate(result.points)
    ]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        for line in lines:
            print(line)
    if result.status != "ok":
        print(
            f"warning: rollout truncated after {result.completed_steps} of "
            f"{result.requested_steps} steps (out of support)",
            file=sys.stderr,
        )
    return 0


def cmd_eval(args) -> int:
    if args.unseen is not None:
        if not args.coords:
            raise ConfigError("--unseen requires --coords")
        rows = _select_split(read_coords(args.coords), args.split)
        points = np.array([[r["x"], r["y"]] for r in rows])
        labels = np.array([r["variety_id"] for r in rows])
        pa = eval_unseen_classes(points, labels, args.unseen, seed=args.seed)
        print(f"unseen-class PA: {pa:.1f}%")
        if args.out:
            Path(args.out).write_text(
                json.dumps({"unseen_pa": pa, "n_points": len(rows)}),
                encoding="utf-8",
            )
        return 0

    if not (args.model and args.input):
        raise ConfigError("eval needs --model and --in (or --coords with --unseen)")
    model = load_model(args.model)
    feature_set = read_features_file(args.input)
    if args.split == "all":
        chosen = feature_set
    else:
        train_set, test_set = split_train_test(
            feature_set, args.train_fraction, args.seed
        )
        chosen = train_set if args.split == "train" else test_set
    report = eval_heads(model, chosen)
    print(format_report_table([report]))
    if args.out:
        Path(args.out).write_text(report_to_json(report), encoding="utf-8")
    return 0


def cmd_plot(args) -> int:
    rows = _select_split(read_coords(args.coords), args.split)
    points = np.array([[r["x"], r["y"]] for r in rows])
    if args.color == "time":
        values = np.array([float(r["session_index"]) for r in rows])
    elif args.color == "variety":
        values = np.array([r["variety_id"] for r in rows])
    elif args.color == "fungicide":
        values = np.array([int(r["fungicide"]) for r in rows])
    else:
        raise ConfigError(
            f"unknown color key {args.color!r}; choose time, variety, or fungicide"
        )
    rollouts = []
    for path in args.rollout:
        pts = []
        for line_no, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            parts = line.split(",")
            if len(parts) != 3:
                raise DataError(f"{path}:{line_no}: expected step,x,y")
            pts.append([float(parts[1]), float(parts[2])])
        rollouts.append(np.array(pts))
    svg = scatter_svg(points, values, args.color, rollouts=rollouts)
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {len(points)} markers to {args.out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    raw_argv = list(sys.argv[1:]) if argv is None else list(argv)
    args = parser.parse_args(raw_argv)
    try:
        _apply_config_file(args, raw_argv)
        if args.command == "traj":
            handler = cmd_traj_fit if args.traj_command == "fit" else cmd_traj_rollout
        else:
            handler = COMMANDS[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ParseError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CropTrajError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
