"""Command-line entry point: ``midas <command> [options]``.

Every command that writes files also writes ``<output>.manifest.json`` with
the resolved arguments, seed, input hashes, package version and timestamps.
Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .adapters import atomic_write, window_rows, write_windows_csv
from .data import DATASET_SPECS, TrajectoryWindow, get_spec, ingest, split_windows
from .masking import SCENARIOS, CameraSpec, applicable_scenarios, make_mask

log = logging.getLogger("midas")

MASK_COLUMNS = ["sequence_id", "frame_idx", "agent_id", "observed"]
WEIGHT_COLUMNS = ["sequence_id", "frame_idx", "agent_id", "li", "lf", "lb"]


# ---------------------------------------------------------------------------
# helpers


def resolve_input(path) -> Path:
    """Relative paths that do not exist are looked up under ``$MIDAS_DATA_DIR``."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    root = os.environ.get("MIDAS_DATA_DIR")
    if root and (Path(root) / p).exists():
        return Path(root) / p
    return p


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(output, args: argparse.Namespace, inputs: Sequence, started: float, config: Optional[dict] = None):
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "arguments": resolved,
        "config": config or {},
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): sha256(p) for p in inputs if p is not None and Path(p).is_file()},
        "version": __version__,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    path = Path(str(output) + ".manifest.json")
    with atomic_write(path) as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def load_input_windows(args) -> list[TrajectoryWindow]:
    spec = get_spec(args.sport)
    path = resolve_input(args.input)
    windows = list(ingest(path, spec, fmt=getattr(args, "format", None)))
    if not windows:
        raise RuntimeError(f"{path} produced no complete {spec.window_frames}-frame windows")
    return windows


def mask_frame(windows, masks) -> pd.DataFrame:
    frames = []
    for w, m in zip(windows, masks):
        K, T = m.shape
        frames.append(
            pd.DataFrame(
                {
                    "sequence_id": w.sequence_id,
                    "frame_idx": np.tile(np.arange(T), K),
                    "agent_id": np.repeat(np.asarray(w.agent_ids, dtype=object), T),
                    "observed": m.reshape(-1).astype(int),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def write_csv(df: pd.DataFrame, path) -> None:
    with atomic_write(path, newline="") as fh:
        df.to_csv(fh, index=False)


def read_masks(path, windows) -> np.ndarray:
    df = pd.read_csv(resolve_input(path), dtype={"sequence_id": str, "agent_id": str})
    if list(df.columns[:4]) != MASK_COLUMNS:
        raise ValueError(f"{path}: expected columns {MASK_COLUMNS}")
    out = []
    groups = dict(tuple(df.groupby("sequence_id", sort=False)))
    for w in windows:
        if w.sequence_id not in groups:
            raise ValueError(f"mask file has no rows for window {w.sequence_id}")
        g = groups[w.sequence_id]
        m = np.zeros((w.n_agents, w.n_frames), dtype=bool)
        row = pd.Index(w.agent_ids).get_indexer(g["agent_id"])
        if (row < 0).any():
            raise ValueError(f"mask for {w.sequence_id} names unknown agents")
        m[row, g["frame_idx"].to_numpy(dtype=int)] = g["observed"].to_numpy() != 0
        out.append(m)
    return np.stack(out)


def build_masks(windows, scenario: str, rate: float, seed: int, blocks: int = 1, camera: CameraSpec = CameraSpec()):
    rng = np.random.default_rng(seed)
    return np.stack([make_mask(scenario, w, rate, rng, camera=camera, blocks=blocks).values for w in windows])


def masks_for(args, windows) -> np.ndarray:
    if getattr(args, "mask", None):
        return read_masks(args.mask, windows)
    return build_masks(windows, args.scenario, args.rate, args.seed, getattr(args, "blocks", 1))


def camera_from(args) -> CameraSpec:
    return CameraSpec(args.camera_width, args.camera_height, args.camera_smooth)


def imputation_frame(results, dump_components: bool) -> pd.DataFrame:
    frames = []
    for r in results:
        K, T = r.mask.shape
        c = r.completed
        data = {
            "sequence_id": r.sequence_id,
            "frame_idx": np.tile(np.arange(T), K),
            "agent_id": np.repeat(np.asarray(r.agent_ids, dtype=object), T),
            "x": c[..., 0].reshape(-1),
            "y": c[..., 1].reshape(-1),
            "vx": c[..., 2].reshape(-1),
            "vy": c[..., 3].reshape(-1),
            "ax": c[..., 4].reshape(-1),
            "ay": c[..., 5].reshape(-1),
            "observed": r.mask.reshape(-1).astype(int),
        }
        if dump_components:
            for name, arr in (("ip", r.ip[..., :2]), ("fwd", r.forward), ("bwd", r.backward)):
                data[f"{name}_x"] = arr[..., 0].reshape(-1)
                data[f"{name}_y"] = arr[..., 1].reshape(-1)
        frames.append(pd.DataFrame(data))
    return pd.concat(frames, ignore_index=True)


def weights_frame(results) -> pd.DataFrame:
    frames = []
    for r in results:
        miss = ~r.mask
        k, t = np.nonzero(miss)
        frames.append(
            pd.DataFrame(
                {
                    "sequence_id": r.sequence_id,
                    "frame_idx": t,
                    "agent_id": np.asarray(r.agent_ids, dtype=object)[k],
                    "li": r.weights[k, t, 0],
                    "lf": r.weights[k, t, 1],
                    "lb": r.weights[k, t, 2],
                }
            )
        )
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=WEIGHT_COLUMNS)


def match_tracks(windows: Sequence[TrajectoryWindow]):
    """Concatenate windows that share an agent list into one ``K x T x 2`` track."""
    ids = windows[0].agent_ids
    if any(w.agent_ids != ids for w in windows):
        raise ValueError("all windows of a match must list the same agents in the same order")
    return ids, np.concatenate([w.positions for w in windows], axis=1)


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args) -> int:
    started = time.time()
    spec = get_spec(args.sport)
    if args.synthetic:
        from .synthetic import smooth_dataset

        windows = smooth_dataset(args.synthetic, spec, seed=args.seed, n_agents=args.agents)
        inputs = []
    else:
        if not args.input:
            raise UsageError("preprocess needs --input or --synthetic")
        windows = load_input_windows(args)
        inputs = [resolve_input(args.input)]
    write_windows_csv(windows, args.out)
    write_manifest(args.out, args, inputs, started, {"dataset": spec.fingerprint()})
    print(f"wrote {len(windows)} windows to {args.out}")
    return 0


def cmd_mask(args) -> int:
    started = time.time()
    windows = load_input_windows(args)
    masks = build_masks(windows, args.scenario, args.rate, args.seed, args.blocks, camera_from(args))
    write_csv(mask_frame(windows, masks), args.out)
    write_manifest(args.out, args, [resolve_input(args.input)], started)
    print(f"wrote masks for {len(windows)} windows (missing rate {1 - masks.mean():.3f}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .model import ModelConfig
    from .training import train

    started = time.time()
    spec = get_spec(args.sport)
    overrides = {"dt": spec.dt}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = ModelConfig.from_file(resolve_input(args.config), **overrides) if args.config else ModelConfig(**overrides)
    windows = load_input_windows(args)
    train_w, val_w, _ = split_windows(windows, spec)
    if not val_w:
        raise RuntimeError("need at least two windows to hold one out for validation")
    log_path = args.log or Path(str(args.out) + ".log.csv")
    result = train(
        train_w,
        val_w,
        cfg,
        seed=args.seed,
        scenarios=args.scenarios,
        sport=spec.sport,
        time_budget=args.time_budget,
        log_path=log_path,
        checkpoint_path=args.out,
        dataset_info={"sport": spec.sport, "fingerprint": spec.fingerprint()},
    )
    inputs = [resolve_input(args.input)] + ([resolve_input(args.config)] if args.config else [])
    write_manifest(args.out, args, inputs, started, dataclasses.asdict(cfg))
    print(f"best validation PE {result.best_val_pe:.4f} m at epoch {result.best_epoch}; checkpoint {args.out}")
    return 0


def _load_model(path):
    from .model import load_checkpoint

    return load_checkpoint(resolve_input(path))


def cmd_impute(args) -> int:
    from .inference import impute

    started = time.time()
    model, state = _load_model(args.checkpoint)
    windows = load_input_windows(args)
    masks = masks_for(args, windows)
    results = impute(model, windows, masks, batch_size=args.batch_size)
    write_csv(imputation_frame(results, args.dump_components), args.out)
    if args.dump_weights:
        write_csv(weights_frame(results), args.dump_weights)
    inputs = [resolve_input(args.input), resolve_input(args.checkpoint)] + ([resolve_input(args.mask)] if args.mask else [])
    write_manifest(args.out, args, inputs, started, state["config"])
    print(f"imputed {len(results)} windows to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_model, evaluate_predictions

    started = time.time()
    model, state = _load_model(args.checkpoint)
    windows = load_input_windows(args)
    masks = masks_for(args, windows)
    if args.imputed:
        spec = get_spec(args.sport)
        dumped = {w.sequence_id: w for w in ingest(resolve_input(args.imputed), spec, fmt="canonical")}
        pred = np.stack([dumped[w.sequence_id].positions for w in windows])
        report = evaluate_predictions(windows, masks, {args.name: pred}, args.scenario, args.rate)
    else:
        report, _ = evaluate_model(model, windows, masks, args.scenario, args.rate, name=args.name, batch_size=args.batch_size)
    out = Path(args.out)
    payload = report.to_dict()
    payload["missing_rate"] = float(1 - masks.mean())
    with atomic_write(out) as fh:
        json.dump(payload, fh, indent=2)
    table = pd.DataFrame([{"method": k, **v} for k, v in report.methods.items()])
    write_csv(table, out.with_suffix(".methods.csv"))
    if report.terciles:
        rows = [
            {"group": g["name"], "n_segments": g["n_segments"], "length_mean": g["length_mean"],
             "length_std": g["length_std"], **{f"PE_{k}": v for k, v in g["pe"].items()}, **g["weights"]}
            for g in report.terciles
        ]
        write_csv(pd.DataFrame(rows), out.with_suffix(".terciles.csv"))
    inputs = [resolve_input(args.input), resolve_input(args.checkpoint)]
    inputs += [resolve_input(p) for p in (args.mask, args.imputed) if p]
    write_manifest(out, args, inputs, started, state["config"])
    for name, scores in report.methods.items():
        print(f"{name:>8}  PE {scores['PE']:.4f} m  SCE {scores['SCE']:.6f}")
    return 0


def _impute_positions(args, windows):
    """Ground-truth positions or, with a checkpoint, their masked-and-imputed version."""
    if not args.checkpoint:
        return windows, None
    from .evaluation import linear_interp
    from .inference import impute

    model, _ = _load_model(args.checkpoint)
    masks = masks_for(args, windows)
    results = impute(model, windows, masks, batch_size=args.batch_size)
    imputed = [dataclasses.replace(w, positions=r.positions) for w, r in zip(windows, results)]
    li = [dataclasses.replace(w, positions=linear_interp(w, m)) for w, m in zip(windows, masks)]
    return imputed, li


def cmd_analyze_stats(args) -> int:
    from .analytics import aggregate_stats, match_stats, mape

    started = time.time()
    windows = load_input_windows(args)
    imputed, li = _impute_positions(args, windows)
    ids, truth = match_tracks(windows)
    truth_stats = match_stats(truth, ids, windows[0].dt)
    sources = {"truth": truth_stats}
    if imputed is not None:
        sources["MIDAS"] = match_stats(match_tracks(imputed)[1], ids, windows[0].dt)
        sources["LI"] = match_stats(match_tracks(li)[1], ids, windows[0].dt)
    rows = []
    for name, stats in sources.items():
        for s in stats:
            rows.append({"source": name, **s.as_row()})
    write_csv(pd.DataFrame(rows), args.out)
    agg = []
    for name, stats in sources.items():
        row = {"source": name, **aggregate_stats(stats, args.min_sprints)}
        if name != "truth":
            row["distance_mape"] = mape(stats, truth_stats, "distance_per90", args.min_sprints)
            row["sprints_mape"] = mape(stats, truth_stats, "sprints_per90", args.min_sprints)
        agg.append(row)
    agg_path = Path(args.out).with_suffix(".aggregate.csv")
    write_csv(pd.DataFrame(agg), agg_path)
    inputs = [resolve_input(args.input)] + ([resolve_input(args.checkpoint)] if args.checkpoint else [])
    write_manifest(args.out, args, inputs, started)
    print(pd.DataFrame(agg).to_string(index=False))
    return 0


def _left_team(agent_ids) -> np.ndarray:
    ids = [str(a) for a in agent_ids]
    if any(a.startswith("Home") for a in ids):
        return np.array([a.startswith("Home") for a in ids])
    K = len(ids)
    return np.arange(K) < K // 2


def cmd_analyze_control(args) -> int:
    from .analytics import GridSpec, pitch_control
    from .data import compute_derivatives

    started = time.time()
    windows = load_input_windows(args)
    source, _ = _impute_positions(args, windows)
    ids, track = match_tracks(source)
    if not 0 <= args.frame < track.shape[1]:
        raise ValueError(f"--frame must lie in [0, {track.shape[1]})")
    v, _ = compute_derivatives(track, windows[0].dt)
    w_idx = args.frame // windows[0].n_frames
    ball = windows[w_idx].ball_positions
    ball_pos = None if ball is None else ball[args.frame % windows[0].n_frames]
    grid = GridSpec(tuple(windows[0].pitch_bounds), args.grid_x, args.grid_y)
    cmap = pitch_control(track[:, args.frame], v[:, args.frame], _left_team(ids), ball_pos, grid)
    out = Path(args.out)
    gx, gy = np.meshgrid(cmap.xs, cmap.ys)
    write_csv(pd.DataFrame({"x": gx.ravel(), "y": gy.ravel(), "control_left": cmap.grid.ravel()}), out.with_suffix(".csv"))

    from .plotting import control_figure

    control_figure(cmap, track[:, args.frame], _left_team(ids), out)
    write_manifest(out, args, [resolve_input(args.input)], started)
    print(f"wrote {out} and {out.with_suffix('.csv')}")
    return 0


def cmd_bench(args) -> int:
    import torch

    from .inference import impute
    from .model import MIDAS, ModelConfig
    from .synthetic import smooth_dataset
    from .training import eval_masks

    started = time.time()
    spec = get_spec(args.sport)
    if args.checkpoint:
        model, _ = _load_model(args.checkpoint)
    else:
        torch.manual_seed(args.seed)
        model = MIDAS(ModelConfig(dt=spec.dt)).eval()
    n = int(round(args.minutes * 60 / spec.window_seconds))
    windows = smooth_dataset(n, spec, seed=args.seed)
    masks = eval_masks(windows, "agentwise", args.rate, args.seed)
    t0 = time.perf_counter()
    impute(model, windows, masks, batch_size=args.batch_size)
    elapsed = time.perf_counter() - t0
    report = {
        "sport": spec.sport,
        "minutes": args.minutes,
        "windows": n,
        "batch_size": args.batch_size,
        "threads": torch.get_num_threads(),
        "seconds_total": elapsed,
        "seconds_per_window": elapsed / n,
    }
    if args.out:
        with atomic_write(args.out) as fh:
            json.dump(report, fh, indent=2)
        write_manifest(args.out, args, [args.checkpoint] if args.checkpoint else [], started)
    print(f"{n} windows ({args.minutes:g} min of {spec.sport}) in {elapsed:.2f} s, {1000 * elapsed / n:.1f} ms per window")
    return 0


def cmd_plot(args) -> int:
    from .evaluation import linear_interp
    from .inference import impute
    from .plotting import trajectory_figure, weights_figure

    started = time.time()
    model, _ = _load_model(args.checkpoint)
    windows = load_input_windows(args)
    if not 0 <= args.window < len(windows):
        raise ValueError(f"--window must lie in [0, {len(windows)})")
    w = windows[args.window]
    masks = masks_for(args, windows)
    m = masks[args.window]
    (res,) = impute(model, [w], [m])
    out = Path(args.out)
    trajectory_figure(w, m, {"MIDAS": res.positions, "LI": linear_interp(w, m)}, out)
    agent = args.agent if args.agent is not None else int(np.argmax((~m).sum(axis=1)))
    weights_figure(res, agent, out.with_name(out.stem + ".weights" + out.suffix))
    write_manifest(out, args, [resolve_input(args.input), resolve_input(args.checkpoint)], started)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


class UsageError(Exception):
    pass


def _data_args(p, required=True):
    p.add_argument("--sport", choices=sorted(DATASET_SPECS), default="soccer")
    p.add_argument("--input", required=required, help="tracking file (canonical CSV, Metrica CSV, SportVU JSON, .npy)")
    p.add_argument("--format", choices=["canonical", "metrica", "sportvu", "nrtsi"], help="override format detection")


def _mask_args(p):
    p.add_argument("--mask", help="mask CSV from `midas mask`; overrides --scenario/--rate")
    p.add_argument("--scenario", choices=SCENARIOS, default="agentwise")
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="midas", description="Multi-agent trajectory imputation")
    parser.add_argument("--version", action="version", version=f"midas {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="convert raw tracking data to canonical windows")
    _data_args(p, required=False)
    p.add_argument("--synthetic", type=int, metavar="N", help="generate N smooth synthetic windows instead")
    p.add_argument("--agents", type=int, help="agents per synthetic window (default: the sport's)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("mask", help="write a mask CSV for a windows file")
    _data_args(p)
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--camera-width", type=float, default=CameraSpec.width)
    p.add_argument("--camera-height", type=float, default=CameraSpec.height)
    p.add_argument("--camera-smooth", type=float, default=CameraSpec.smooth_seconds, help="seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train a model")
    _data_args(p)
    p.add_argument("--config", help="key = value file overriding ModelConfig defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--time-budget", type=float, help="stop after this many seconds")
    p.add_argument("--scenarios", nargs="+", choices=SCENARIOS, help="default: all that apply to the sport")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("impute", help="impute masked windows with a checkpoint")
    _data_args(p)
    _mask_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--dump-components", action="store_true", help="add IP, forward and backward DAP columns")
    p.add_argument("--dump-weights", metavar="CSV", help="write per-frame ensemble weights here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("evaluate", help="PE/SCE report against LI and CS")
    _data_args(p)
    _mask_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--imputed", help="score an imputation CSV from `midas impute` instead of running the model")
    p.add_argument("--name", default="MIDAS")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out", required=True, help="report JSON; tables go next to it")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="downstream analytics")
    asub = p.add_subparsers(dest="analysis", required=True)
    a = asub.add_parser("stats", help="distance and sprint statistics per player")
    _data_args(a)
    _mask_args(a)
    a.add_argument("--checkpoint", help="compare imputed against ground-truth statistics")
    a.add_argument("--min-sprints", type=int, default=2)
    a.add_argument("--batch-size", type=int, default=16)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze_stats)
    a = asub.add_parser("control", help="pitch-control heatmap for one frame")
    _data_args(a)
    _mask_args(a)
    a.add_argument("--checkpoint", help="use imputed positions")
    a.add_argument("--frame", type=int, required=True, help="frame index over the concatenated windows")
    a.add_argument("--grid-x", type=int, default=50)
    a.add_argument("--grid-y", type=int, default=32)
    a.add_argument("--batch-size", type=int, default=16)
    a.add_argument("--out", required=True, help="image path; the grid CSV is written beside it")
    a.set_defaults(func=cmd_analyze_control)

    p = sub.add_parser("bench", help="inference timing")
    p.add_argument("--timing", action="store_true", help="report imputation latency (the only benchmark)")
    p.add_argument("--sport", choices=sorted(DATASET_SPECS), default="soccer")
    p.add_argument("--checkpoint", help="default: an untrained model with the default config")
    p.add_argument("--minutes", type=float, default=40.0)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="timing JSON")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="trajectory and ensemble-weight figures for one window")
    _data_args(p)
    _mask_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--agent", type=int, help="agent for the weight curves (default: longest gap)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"midas: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("traceback", exc_info=True)
        print(f"midas {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
