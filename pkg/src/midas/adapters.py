"""Readers that turn raw tracking files into :class:`Track` records.

Supported inputs:

* ``canonical`` -- long CSV ``sequence_id,frame_idx,agent_id,x,y`` at the
  target rate, ball rows carry ``agent_id=BALL``.
* ``metrica`` -- Metrica Sports sample-data wide CSV (three header rows,
  normalized coordinates). The matching Home/Away file is picked up
  automatically.
* ``sportvu`` -- NBA SportVU event JSON (feet, 25 Hz).
* ``nrtsi`` -- preprocessed football arrays, ``N x 50 x 12`` or
  ``N x 50 x 6 x 2`` in a ``.npy`` / ``.npz`` file.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
import pandas as pd

from .data import FEET, YARD, DatasetSpec, FormatError, SchemaError, Track, TrajectoryWindow, make_window

BALL = "BALL"
CANONICAL_COLUMNS = ["sequence_id", "frame_idx", "agent_id", "x", "y"]


@contextmanager
def atomic_write(path, mode: str = "w", **kwargs):
    """Write to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        with open(tmp, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def detect_format(path) -> str:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        return "sportvu"
    if suffix in (".npy", ".npz"):
        return "nrtsi"
    if suffix == ".csv":
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().strip().split(",")
        if first[: len(CANONICAL_COLUMNS)] == CANONICAL_COLUMNS:
            return "canonical"
        if len(first) > 3 and first[0] == "" and any(c in ("Home", "Away") for c in first):
            return "metrica"
    raise FormatError(f"cannot determine the format of {path}")


def read_tracks(path, spec: DatasetSpec, fmt: Optional[str] = None) -> Iterator[Track]:
    fmt = fmt or detect_format(path)
    readers = {
        "canonical": read_canonical,
        "metrica": read_metrica,
        "sportvu": read_sportvu,
        "nrtsi": read_nrtsi,
    }
    if fmt not in readers:
        raise FormatError(f"unknown format {fmt!r}")
    yield from readers[fmt](path, spec)


# ---------------------------------------------------------------------------
# canonical


def read_canonical(path, spec: Optional[DatasetSpec] = None) -> Iterator[Track]:
    df = pd.read_csv(path, dtype={"sequence_id": str, "agent_id": str}, float_precision="round_trip")
    missing = [c for c in CANONICAL_COLUMNS if c not in df.columns]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    if spec is not None and df["frame_idx"].min() < 0:
        raise FormatError(f"{path}: negative frame index")

    for seq_id, g in df.groupby("sequence_id", sort=False):
        n_frames = int(g["frame_idx"].max()) + 1
        players = g[g["agent_id"] != BALL]
        agents = list(dict.fromkeys(players["agent_id"]))
        pos = np.full((len(agents), n_frames, 2), np.nan)
        row = pd.Index(agents).get_indexer(players["agent_id"])
        col = players["frame_idx"].to_numpy(dtype=int)
        pos[row, col, 0] = players["x"].to_numpy(dtype=float)
        pos[row, col, 1] = players["y"].to_numpy(dtype=float)

        ball = None
        ball_rows = g[g["agent_id"] == BALL]
        if len(ball_rows):
            ball = np.full((n_frames, 2), np.nan)
            bf = ball_rows["frame_idx"].to_numpy(dtype=int)
            ball[bf, 0] = ball_rows["x"].to_numpy(dtype=float)
            ball[bf, 1] = ball_rows["y"].to_numpy(dtype=float)
        yield Track(str(seq_id), agents, pos, ball_positions=ball, strict=True)


def window_rows(window: TrajectoryWindow, extra: Optional[dict] = None) -> pd.DataFrame:
    """Long-format rows for one window; ``extra`` maps column -> ``K x T`` array."""
    K, T = window.n_agents, window.n_frames
    frames = np.tile(np.arange(T), K)
    agents = np.repeat(np.asarray(window.agent_ids, dtype=object), T)
    data = {
        "sequence_id": window.sequence_id,
        "frame_idx": frames,
        "agent_id": agents,
        "x": window.positions[..., 0].reshape(-1),
        "y": window.positions[..., 1].reshape(-1),
    }
    for name, values in (extra or {}).items():
        data[name] = np.asarray(values).reshape(-1)
    df = pd.DataFrame(data)
    if window.ball_positions is not None:
        ball = pd.DataFrame(
            {
                "sequence_id": window.sequence_id,
                "frame_idx": np.arange(T),
                "agent_id": BALL,
                "x": window.ball_positions[:, 0],
                "y": window.ball_positions[:, 1],
            }
        )
        df = pd.concat([df, ball], ignore_index=True)
    return df


def write_windows_csv(windows: Iterable[TrajectoryWindow], path) -> None:
    frames = [window_rows(w) for w in windows]
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CANONICAL_COLUMNS)
    with atomic_write(path, newline="") as fh:
        df.to_csv(fh, index=False)


def load_windows(path, spec: DatasetSpec) -> list[TrajectoryWindow]:
    from .data import ingest

    return list(ingest(path, spec, fmt="canonical"))


# ---------------------------------------------------------------------------
# Metrica


def _metrica_partner(path: Path) -> Optional[Path]:
    name = path.name
    for a, b in (("Home", "Away"), ("Away", "Home")):
        if a in name:
            other = path.with_name(name.replace(a, b))
            if other.exists():
                return other
    return None


def _read_metrica_team(path: Path):
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        team_row = next(reader)
        next(reader)  # jersey numbers
        header = next(reader)
    team = next((c for c in team_row if c), "Team")
    cols = []
    for i, name in enumerate(header):
        if name.startswith("Player") or name == "Ball":
            cols.append((name, i))
    df = pd.read_csv(path, skiprows=3, header=None)
    period = df.iloc[:, 0].to_numpy(dtype=int)
    times = df.iloc[:, 2].to_numpy(dtype=float)
    players, ball = {}, None
    for name, i in cols:
        xy = df.iloc[:, [i, i + 1]].to_numpy(dtype=float)
        if name == "Ball":
            ball = xy
        else:
            players[f"{team}_{name[len('Player'):]}"] = xy
    return period, times, players, ball


def read_metrica(path, spec: DatasetSpec) -> Iterator[Track]:
    path = Path(path)
    files = [path]
    partner = _metrica_partner(path)
    if partner is not None:
        files.append(partner)
    files.sort(key=lambda p: "Away" in p.name)

    period = times = ball = None
    players: dict[str, np.ndarray] = {}
    for f in files:
        p_, t_, pl, b = _read_metrica_team(f)
        if period is None:
            period, times, ball = p_, t_, b
        elif len(p_) != len(period) or not np.allclose(t_, times):
            raise FormatError(f"{f} does not align with {files[0]}")
        players.update(pl)

    scale = np.asarray(spec.pitch_bounds)
    agents = list(players)
    pos = np.stack([players[a] for a in agents]) * scale
    ball_m = None if ball is None else ball * scale
    stem = path.stem.replace("_Home_Team", "").replace("_Away_Team", "")
    for per in np.unique(period):
        sel = period == per
        yield Track(
            f"{stem}_P{per}",
            agents,
            pos[:, sel],
            ball_positions=None if ball_m is None else ball_m[sel],
            times=times[sel],
            strict=False,
        )


# ---------------------------------------------------------------------------
# SportVU


def read_sportvu(path, spec: DatasetSpec) -> Iterator[Track]:
    """Merge the (overlapping) event moments of one game into contiguous tracks.

    Moments are deduplicated on (quarter, game clock). A new track starts when
    the quarter changes, the clock jumps, or the set of ten players changes.
    """
    with open(path, encoding="utf-8") as fh:
        game = json.load(fh)
    gameid = str(game.get("gameid", Path(path).stem))
    moments = {}
    for event in game.get("events", []):
        for m in event.get("moments", []):
            quarter, _, clock = m[0], m[1], m[2]
            moments.setdefault((quarter, -round(float(clock), 3)), m)
    if not moments:
        raise FormatError(f"{path}: no moments")

    interval = 1.0 / spec.native_hz
    runs, current, key_prev = [], [], None
    for key in sorted(moments):
        m = moments[key]
        entities = m[5]
        ids = tuple(sorted(str(e[1]) for e in entities if e[0] != -1))
        t = -key[1]
        if current:
            q0, t0, ids0 = key_prev
            if q0 != key[0] or ids0 != ids or (t0 - t) > 1.5 * interval:
                runs.append(current)
                current = []
        current.append(m)
        key_prev = (key[0], t, ids)
    runs.append(current)

    for r, run in enumerate(runs):
        ids = sorted({str(e[1]) for e in run[0][5] if e[0] != -1})
        if len(ids) != spec.n_agents:
            continue
        idx = {a: i for i, a in enumerate(ids)}
        n = len(run)
        pos = np.full((len(ids), n, 2), np.nan)
        ball = np.full((n, 2), np.nan)
        times = np.empty(n)
        for j, m in enumerate(run):
            times[j] = (720.0 - float(m[2])) + 720.0 * (m[0] - 1)
            for e in m[5]:
                if e[0] == -1:
                    ball[j] = (e[2] * FEET, e[3] * FEET)
                elif str(e[1]) in idx:
                    pos[idx[str(e[1])], j] = (e[2] * FEET, e[3] * FEET)
        if n < 2:
            continue
        yield Track(f"{gameid}_{r:03d}", ids, pos, ball_positions=ball, times=times, strict=True)


# ---------------------------------------------------------------------------
# NRTSI football arrays


def read_nrtsi(path, spec: DatasetSpec, unit: float = YARD) -> Iterator[Track]:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            arr = z[z.files[0]]
    else:
        arr = np.load(path)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[-1] % 2:
            raise FormatError(f"{path}: last axis must hold (x, y) pairs, got {arr.shape}")
        arr = arr.reshape(arr.shape[0], arr.shape[1], arr.shape[2] // 2, 2)
    if arr.ndim != 4 or arr.shape[-1] != 2:
        raise FormatError(f"{path}: expected N x T x K x 2 positions, got {arr.shape}")
    n_agents = arr.shape[2]
    agents = [f"P{k}" for k in range(n_agents)]
    for i, series in enumerate(arr):
        yield Track(f"{path.stem}_{i:05d}", agents, np.transpose(series, (1, 0, 2)) * unit, strict=True)


def tracks_to_windows(tracks: Sequence[Track], spec: DatasetSpec) -> list[TrajectoryWindow]:
    from .data import windows_from_track

    out = []
    for t in tracks:
        out.extend(windows_from_track(t, spec))
    return out


def windows_from_arrays(positions: np.ndarray, spec: DatasetSpec, prefix: str = "w") -> list[TrajectoryWindow]:
    """Wrap an ``N x K x T x 2`` array (meters) as windows."""
    return [
        make_window(f"{prefix}{i:05d}", [f"a{k}" for k in range(p.shape[0])], p, spec)
        for i, p in enumerate(np.asarray(positions, dtype=np.float64))
    ]


__all__ = [
    "BALL",
    "SchemaError",
    "atomic_write",
    "detect_format",
    "load_windows",
    "read_canonical",
    "read_metrica",
    "read_nrtsi",
    "read_sportvu",
    "read_tracks",
    "window_rows",
    "write_windows_csv",
]
