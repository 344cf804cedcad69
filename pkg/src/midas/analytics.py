"""Physical-load statistics and a simplified pitch-control surface."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import savgol_filter

from .data import compute_derivatives

MAX_SPEED = 12.0  # m/s
MAX_ACCEL = 8.0  # m/s^2
SPRINT_SPEED = 6.0  # m/s
SPRINT_SECONDS = 1.0
SG_WINDOW = 11
SG_ORDER = 3


def _interp_flagged(values: np.ndarray, bad: np.ndarray) -> np.ndarray:
    if not bad.any() or bad.all():
        return values.copy()
    t = np.arange(len(values))
    out = values.copy()
    out[bad] = np.interp(t[bad], t[~bad], values[~bad])
    return out


def raw_speed(positions, dt: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Speed and acceleration norms of a ``T x 2`` track (finite differences)."""
    v, a = compute_derivatives(np.asarray(positions, dtype=np.float64)[None], dt)
    return np.linalg.norm(v[0], axis=-1), np.linalg.norm(a[0], axis=-1)


def remove_outliers(speed, accel, max_speed: float = MAX_SPEED, max_accel: float = MAX_ACCEL) -> np.ndarray:
    """Replace frames over either threshold by linear interpolation of the rest."""
    speed = np.asarray(speed, dtype=np.float64)
    bad = (speed > max_speed) | (np.asarray(accel) > max_accel)
    return _interp_flagged(speed, bad)


def clean_speed(
    positions,
    dt: float = 0.1,
    max_speed: float = MAX_SPEED,
    max_accel: float = MAX_ACCEL,
    window: int = SG_WINDOW,
    polyorder: int = SG_ORDER,
) -> np.ndarray:
    """Outlier-free, Savitzky-Golay smoothed speed (m/s) of a ``T x 2`` track.

    Short tracks shrink the filter to the largest odd length that fits; below
    ``polyorder + 2`` frames no smoothing is applied.
    """
    speed, accel = raw_speed(positions, dt)
    speed = remove_outliers(speed, accel, max_speed, max_accel)
    n = len(speed)
    if n < window:
        window = n if n % 2 else n - 1
    if window <= polyorder:
        return speed
    return savgol_filter(speed, window, polyorder)


def total_distance(speed, dt: float = 0.1) -> float:
    return float(np.sum(speed) * dt)


def sprint_runs(speed, dt: float = 0.1, threshold: float = SPRINT_SPEED, min_seconds: float = SPRINT_SECONDS):
    """``(start, stop)`` frame ranges of maximal runs above ``threshold``."""
    fast = np.asarray(speed) > threshold
    padded = np.concatenate([[0], fast.astype(np.int8), [0]])
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    min_frames = int(round(min_seconds / dt))
    return [(int(s), int(e)) for s, e in zip(starts, stops) if e - s >= min_frames]


def count_sprints(speed, dt: float = 0.1, threshold: float = SPRINT_SPEED, min_seconds: float = SPRINT_SECONDS) -> int:
    return len(sprint_runs(speed, dt, threshold, min_seconds))


@dataclass
class PhysicalStats:
    player_id: str
    distance: float
    sprints: int
    minutes_played: float

    @property
    def distance_per90(self) -> float:
        return self.distance * 90.0 / self.minutes_played

    @property
    def sprints_per90(self) -> float:
        return self.sprints * 90.0 / self.minutes_played

    def as_row(self) -> dict:
        return {
            "player_id": self.player_id,
            "distance": self.distance,
            "sprints": self.sprints,
            "minutes_played": self.minutes_played,
            "distance_per90": self.distance_per90,
            "sprints_per90": self.sprints_per90,
        }


def match_stats(
    positions,
    player_ids: Optional[Sequence[str]] = None,
    dt: float = 0.1,
    played=None,
) -> list[PhysicalStats]:
    """Distance and sprint counts per player over a whole match.

    ``positions`` is ``K x T x 2`` (observed frames merged with imputed ones);
    frames where a player is off the pitch are NaN or flagged False in
    ``played``. Each player's on-pitch frames are treated as one track.
    """
    positions = np.asarray(positions, dtype=np.float64)
    K = positions.shape[0]
    player_ids = [str(i) for i in (player_ids if player_ids is not None else range(K))]
    on = np.all(np.isfinite(positions), axis=-1)
    if played is not None:
        on &= np.asarray(played, dtype=bool)
    out = []
    for k in range(K):
        track = positions[k, on[k]]
        if len(track) < 3:
            continue
        speed = clean_speed(track, dt)
        out.append(PhysicalStats(player_ids[k], total_distance(speed, dt), count_sprints(speed, dt), len(track) * dt / 60.0))
    return out


def aggregate_stats(stats: Sequence[PhysicalStats], min_sprints: int = 2) -> dict:
    """Per-90 means over players with at least ``min_sprints`` sprints."""
    kept = [s for s in stats if s.sprints >= min_sprints]
    if not kept:
        return {"players": 0, "distance_per90": float("nan"), "sprints_per90": float("nan")}
    return {
        "players": len(kept),
        "distance_per90": float(np.mean([s.distance_per90 for s in kept])),
        "sprints_per90": float(np.mean([s.sprints_per90 for s in kept])),
    }


def mape(estimate: Sequence[PhysicalStats], truth: Sequence[PhysicalStats], attr: str, min_sprints: int = 2) -> float:
    """Mean absolute percentage error of a per-90 statistic over eligible players."""
    est = {s.player_id: s for s in estimate}
    errs = []
    for s in truth:
        if s.sprints < min_sprints or s.player_id not in est:
            continue
        ref = getattr(s, attr)
        if ref == 0:
            continue
        errs.append(abs(getattr(est[s.player_id], attr) - ref) / abs(ref))
    return float(np.mean(errs) * 100) if errs else float("nan")


# ---------------------------------------------------------------------------
# pitch control


@dataclass(frozen=True)
class GridSpec:
    pitch_bounds: tuple = (105.0, 68.0)
    n_x: int = 50
    n_y: int = 32

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        length, width = self.pitch_bounds
        xs = (np.arange(self.n_x) + 0.5) * length / self.n_x
        ys = (np.arange(self.n_y) + 0.5) * width / self.n_y
        return xs, ys


@dataclass
class ControlMap:
    grid: np.ndarray  # n_y x n_x, probability that the left team controls
    xs: np.ndarray
    ys: np.ndarray
    ball: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ControlParams:
    reaction_time: float = 0.7
    max_speed: float = 5.0
    sigma: float = 0.45


def arrival_times(positions, velocities, targets, params: ControlParams = ControlParams()) -> np.ndarray:
    """``n_players x n_targets`` time to reach each target.

    Players keep their velocity during the reaction delay, then run straight
    at ``max_speed``.
    """
    p = np.asarray(positions, dtype=np.float64)
    v = np.asarray(velocities, dtype=np.float64)
    start = p + v * params.reaction_time
    dist = np.linalg.norm(np.asarray(targets)[None, :, :] - start[:, None, :], axis=-1)
    return params.reaction_time + dist / params.max_speed


def pitch_control(
    frame_positions,
    frame_velocities,
    left_team,
    ball_position=None,
    grid: GridSpec = GridSpec(),
    params: ControlParams = ControlParams(),
) -> ControlMap:
    """Probability per grid cell that the left team wins a ball played there.

    ``left_team`` is a boolean per player. Each team is represented by its
    fastest arrival; control is ``logistic((t_right - t_left) / sigma)``.
    """
    left = np.asarray(left_team, dtype=bool)
    if left.all() or not left.any():
        raise ValueError("both teams need at least one player")
    xs, ys = grid.centers()
    gx, gy = np.meshgrid(xs, ys)
    targets = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    t = arrival_times(frame_positions, frame_velocities, targets, params)
    t_left = t[left].min(axis=0)
    t_right = t[~left].min(axis=0)
    prob = 0.5 * (1.0 + np.tanh((t_right - t_left) / (2.0 * params.sigma)))
    return ControlMap(
        prob.reshape(gy.shape),
        xs,
        ys,
        None if ball_position is None else np.asarray(ball_position, dtype=np.float64),
    )
