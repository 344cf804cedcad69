"""Canonical trajectory windows: derivatives, windowing, resampling, normalization."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np


class InvalidWindowError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    sport: str
    n_agents: int
    native_hz: float
    target_hz: float
    window_frames: int
    pitch_bounds: tuple[float, float]
    # train / validation / test fractions of frames
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)

    @property
    def dt(self) -> float:
        return 1.0 / self.target_hz

    @property
    def window_seconds(self) -> float:
        return self.window_frames * self.dt

    def fingerprint(self) -> str:
        return (
            f"{self.sport}:K={self.n_agents}:hz={self.native_hz}->{self.target_hz}"
            f":T={self.window_frames}:pitch={self.pitch_bounds[0]}x{self.pitch_bounds[1]}"
        )


FEET = 0.3048
YARD = 0.9144

DATASET_SPECS = {
    "soccer": DatasetSpec("soccer", 22, 25.0, 10.0, 200, (105.0, 68.0), (0.61, 0.19, 0.20)),
    "basketball": DatasetSpec(
        "basketball", 10, 25.0, 10.0, 200, (94 * FEET, 50 * FEET), (0.70, 0.10, 0.20)
    ),
    "football": DatasetSpec(
        "football", 6, 10.0, 10.0, 50, (120 * YARD, 160 / 3 * YARD), (0.89, 0.11, 0.0)
    ),
}
DATASET_SPECS["am_football"] = DATASET_SPECS["football"]


def get_spec(sport: str) -> DatasetSpec:
    try:
        return DATASET_SPECS[sport]
    except KeyError:
        raise ValueError(f"unknown sport {sport!r}; expected one of soccer, basketball, football")


@dataclass
class TrajectoryWindow:
    """A fixed-length multi-agent segment.

    Arrays are indexed ``[agent, frame, axis]``. Positions are in meters unless
    ``normalized`` is set, in which case they live in ``[-1, 1]^2`` and the
    derivatives carry the same per-axis scale.
    """

    sequence_id: str
    agent_ids: list[str]
    dt: float
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    pitch_bounds: tuple[float, float]
    ball_positions: Optional[np.ndarray] = None
    normalized: bool = False

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def n_frames(self) -> int:
        return self.positions.shape[1]

    def features(self) -> np.ndarray:
        """``K x T x 6`` stack of positions, velocities and accelerations."""
        return np.concatenate([self.positions, self.velocities, self.accelerations], axis=-1)

    def permute(self, order: Sequence[int]) -> "TrajectoryWindow":
        order = list(order)
        return dataclasses.replace(
            self,
            agent_ids=[self.agent_ids[i] for i in order],
            positions=self.positions[order],
            velocities=self.velocities[order],
            accelerations=self.accelerations[order],
        )


def compute_derivatives(positions: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward-difference velocity and forward-difference acceleration.

    ``v[t] = (p[t] - p[t-1]) / dt`` and ``a[t] = (v[t+1] - v[t]) / dt``. Frames
    where a difference is undefined (``v[0]``, ``a[0]``, ``a[-1]``) copy the
    nearest defined value. The time axis is ``-2``, so any leading batch shape
    works.
    """
    p = np.asarray(positions, dtype=np.float64)
    if p.ndim < 2 or p.shape[-2] < 3:
        raise InvalidWindowError(f"need at least 3 frames, got shape {p.shape}")
    if not dt > 0:
        raise InvalidWindowError(f"dt must be positive, got {dt}")

    v = np.empty_like(p)
    v[..., 1:, :] = np.diff(p, axis=-2) / dt
    v[..., 0, :] = v[..., 1, :]

    a = np.empty_like(p)
    a[..., 1:-1, :] = (v[..., 2:, :] - v[..., 1:-1, :]) / dt
    a[..., 0, :] = a[..., 1, :]
    a[..., -1, :] = a[..., -2, :]
    return v, a


def make_window(
    sequence_id: str,
    agent_ids: Sequence[str],
    positions: np.ndarray,
    spec: DatasetSpec,
    ball_positions: Optional[np.ndarray] = None,
) -> TrajectoryWindow:
    positions = np.asarray(positions, dtype=np.float64)
    v, a = compute_derivatives(positions, spec.dt)
    return TrajectoryWindow(
        sequence_id=str(sequence_id),
        agent_ids=[str(a_) for a_ in agent_ids],
        dt=spec.dt,
        positions=positions,
        velocities=v,
        accelerations=a,
        pitch_bounds=tuple(spec.pitch_bounds),
        ball_positions=None if ball_positions is None else np.asarray(ball_positions, dtype=np.float64),
    )


def check_window(window: TrajectoryWindow, spec: DatasetSpec, margin: float = 5.0) -> None:
    """Raise ``InvalidWindowError`` if a window breaks the canonical invariants."""
    if window.n_frames != spec.window_frames:
        raise InvalidWindowError(f"expected {spec.window_frames} frames, got {window.n_frames}")
    if window.n_agents != spec.n_agents:
        raise SchemaError(f"expected {spec.n_agents} agents, got {window.n_agents}")
    if not window.normalized:
        lo = -margin
        hi = np.asarray(spec.pitch_bounds) + margin
        p = window.positions
        if np.any(p < lo) or np.any(p > hi):
            raise InvalidWindowError(f"window {window.sequence_id} leaves the pitch by more than {margin} m")


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class PitchScaler:
    """Affine map from pitch meters (origin at a corner) to ``[-1, 1]^2``."""

    pitch_bounds: tuple[float, float]

    def __post_init__(self):
        length, width = self.pitch_bounds
        if not (np.isfinite(length) and np.isfinite(width)) or length <= 0 or width <= 0:
            raise ValueError(f"degenerate pitch bounds {self.pitch_bounds}")

    @property
    def scale(self) -> np.ndarray:
        return 2.0 / np.asarray(self.pitch_bounds, dtype=np.float64)

    def positions(self, p):
        return p * self.scale - 1.0

    def inverse_positions(self, p):
        return (p + 1.0) / self.scale

    def derivatives(self, d):
        return d * self.scale

    def inverse_derivatives(self, d):
        return d / self.scale

    def features(self, x):
        """Scale a ``... x 6`` (or ``... x 2k``) feature stack."""
        out = np.array(x, dtype=np.float64, copy=True)
        out[..., 0:2] = self.positions(out[..., 0:2])
        for j in range(2, out.shape[-1], 2):
            out[..., j : j + 2] = self.derivatives(out[..., j : j + 2])
        return out

    def inverse_features(self, x):
        out = np.array(x, dtype=np.float64, copy=True)
        out[..., 0:2] = self.inverse_positions(out[..., 0:2])
        for j in range(2, out.shape[-1], 2):
            out[..., j : j + 2] = self.inverse_derivatives(out[..., j : j + 2])
        return out


def normalize(window: TrajectoryWindow) -> TrajectoryWindow:
    if window.normalized:
        return window
    s = PitchScaler(window.pitch_bounds)
    return dataclasses.replace(
        window,
        positions=s.positions(window.positions),
        velocities=s.derivatives(window.velocities),
        accelerations=s.derivatives(window.accelerations),
        ball_positions=None if window.ball_positions is None else s.positions(window.ball_positions),
        normalized=True,
    )


def denormalize(window: TrajectoryWindow) -> TrajectoryWindow:
    if not window.normalized:
        return window
    s = PitchScaler(window.pitch_bounds)
    return dataclasses.replace(
        window,
        positions=s.inverse_positions(window.positions),
        velocities=s.inverse_derivatives(window.velocities),
        accelerations=s.inverse_derivatives(window.accelerations),
        ball_positions=None if window.ball_positions is None else s.inverse_positions(window.ball_positions),
        normalized=False,
    )


# ---------------------------------------------------------------------------
# tracks -> windows


@dataclass
class Track:
    """A raw multi-agent recording before windowing.

    ``positions`` is ``A x N x 2`` with NaN wherever an agent is absent.
    ``times`` (seconds) is given when the track still needs resampling.
    With ``strict`` set, the number of agents must equal the sport's K.
    """

    sequence_id: str
    agent_ids: list[str]
    positions: np.ndarray
    ball_positions: Optional[np.ndarray] = None
    times: Optional[np.ndarray] = None
    strict: bool = True
    valid: Optional[np.ndarray] = field(default=None, repr=False)


def nearest_frames(times: np.ndarray, target_hz: float, tie_tol: float = 1e-9):
    """Pick, for every tick of a ``target_hz`` grid, the nearest source frame.

    Returns ``(index, ok)``: ``index[j]`` is the source frame chosen for grid
    tick ``j`` and ``ok[j]`` is False when the tick falls inside a source gap.
    Ties go to the earlier frame.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or len(times) < 2:
        raise InvalidWindowError("need at least two timestamps to resample")
    if np.any(np.diff(times) <= 0):
        raise FormatError("timestamps must be strictly increasing")
    interval = float(np.median(np.diff(times)))
    span = times[-1] - times[0]
    n = int(np.floor(span * target_hz + 1e-6)) + 1
    grid = times[0] + np.arange(n) / target_hz

    hi = np.clip(np.searchsorted(times, grid, side="left"), 1, len(times) - 1)
    lo = hi - 1
    d_lo = np.abs(grid - times[lo])
    d_hi = np.abs(times[hi] - grid)
    index = np.where(d_hi < d_lo - tie_tol, hi, lo)
    bracket = times[hi] - times[lo]
    ok = bracket <= 1.5 * interval
    ok &= np.abs(grid - times[index]) <= 0.75 * interval * (1 + 1e-6)
    return index, ok


def resample_track(track: Track, target_hz: float) -> Track:
    if track.times is None:
        return track
    index, ok = nearest_frames(track.times, target_hz)
    pos = track.positions[:, index].copy()
    pos[:, ~ok] = np.nan
    ball = None
    if track.ball_positions is not None:
        ball = track.ball_positions[index].copy()
        ball[~ok] = np.nan
    return dataclasses.replace(track, positions=pos, ball_positions=ball, times=None)


def windows_from_track(track: Track, spec: DatasetSpec) -> Iterator[TrajectoryWindow]:
    """Slice a track into non-overlapping windows of ``spec.window_frames``.

    A window is kept only if exactly K agents are present on every frame and
    no agent enters or leaves inside it; anything else counts as a gap or a
    substitution and the window is dropped.
    """
    n_cols = track.positions.shape[0]
    if track.strict and n_cols != spec.n_agents:
        raise SchemaError(
            f"sequence {track.sequence_id}: {n_cols} agents, {spec.sport} expects {spec.n_agents}"
        )
    if n_cols < spec.n_agents:
        raise SchemaError(
            f"sequence {track.sequence_id}: only {n_cols} agent columns, {spec.sport} expects {spec.n_agents}"
        )
    track = resample_track(track, spec.target_hz)
    T = spec.window_frames
    n_frames = track.positions.shape[1]
    n_windows = n_frames // T
    present = np.all(np.isfinite(track.positions), axis=-1)
    ball = track.ball_positions

    for j in range(n_windows):
        sl = slice(j * T, (j + 1) * T)
        here = present[:, sl]
        full = here.all(axis=1)
        partial = here.any(axis=1) & ~full
        if partial.any() or full.sum() != spec.n_agents:
            continue
        if track.valid is not None and not track.valid[sl].all():
            continue
        win_ball = None
        if ball is not None:
            win_ball = ball[sl]
            if not np.all(np.isfinite(win_ball)):
                win_ball = None
        idx = np.flatnonzero(full)
        seq_id = track.sequence_id if n_windows == 1 else f"{track.sequence_id}/{j:04d}"
        yield make_window(
            seq_id,
            [track.agent_ids[i] for i in idx],
            track.positions[idx, sl],
            spec,
            ball_positions=win_ball,
        )


def ingest(source_path, spec: DatasetSpec, fmt: Optional[str] = None) -> Iterator[TrajectoryWindow]:
    """Read a tracking file in any supported format and yield canonical windows."""
    from .adapters import read_tracks

    for track in read_tracks(source_path, spec, fmt=fmt):
        yield from windows_from_track(track, spec)


def split_windows(windows: Sequence[TrajectoryWindow], spec: DatasetSpec):
    """Contiguous train / validation / test split using the sport's frame fractions."""
    n = len(windows)
    f_train, f_val, _ = spec.split
    n_train = int(round(n * f_train))
    n_val = int(round(n * f_val))
    if n >= 2 and n_val == 0:
        n_val = 1
        n_train = min(n_train, n - 1)
    n_train = max(n_train, 1) if n else 0
    train = list(windows[:n_train])
    val = list(windows[n_train : n_train + n_val])
    test = list(windows[n_train + n_val :])
    return train, val, test


def stack_features(windows: Sequence[TrajectoryWindow]) -> np.ndarray:
    """``N x K x T x 6`` normalized features for a list of windows."""
    return np.stack([normalize(w).features() for w in windows])
