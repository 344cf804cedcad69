"""Missing-data scenarios: uniform, agent-wise and ball-following camera masks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.ndimage import uniform_filter1d

from .data import TrajectoryWindow

GUARD = 5
SCENARIOS = ("uniform", "agentwise", "camera")
TRAIN_RATE_RANGE = (0.1, 0.9)
EVAL_RATE = 0.5


@dataclass
class MaskMatrix:
    """``K x T`` observation indicators (True = observed)."""

    values: np.ndarray
    guard: int = GUARD

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)

    @property
    def shape(self):
        return self.values.shape

    @property
    def missing_rate(self) -> float:
        return float(1.0 - self.values.mean())

    def check_guard(self) -> bool:
        g = self.guard
        return bool(self.values[:, :g].all() and self.values[:, self.values.shape[1] - g :].all())

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


class MissingSegment(NamedTuple):
    agent: int
    t_s: int  # last observed frame before the gap
    t_e: int  # first observed frame after the gap

    @property
    def length(self) -> int:
        return self.t_e - self.t_s - 1


@dataclass(frozen=True)
class CameraSpec:
    width: float = 50.0
    height: float = 35.0
    smooth_seconds: float = 1.0


def _as_bool(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "values", mask), dtype=bool)


def _block_length(T: int, rate: float, guard: int) -> int:
    if not 0 <= rate <= 1:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    length = int(np.floor(rate * T + 0.5))
    if length > T - 2 * guard:
        raise ValueError(
            f"rate {rate} needs {length} missing frames, only {T - 2 * guard} fit between the guards"
        )
    return length


def _place_blocks(T: int, length: int, guard: int, blocks: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean row with ``length`` missing frames split into ``blocks`` runs."""
    row = np.ones(T, dtype=bool)
    if length == 0:
        return row
    blocks = max(1, min(blocks, length))
    free = (T - 2 * guard) - length
    if blocks == 1:
        start = guard + int(rng.integers(0, free + 1))
        row[start : start + length] = False
        return row
    if free < blocks - 1:
        raise ValueError(f"cannot separate {blocks} blocks with {free} observed frames")
    # block sizes: random composition of `length` into `blocks` positive parts
    cuts = np.sort(rng.choice(np.arange(1, length), size=blocks - 1, replace=False))
    sizes = np.diff(np.concatenate([[0], cuts, [length]]))
    # observed gaps: blocks + 1 slots, the interior ones at least one frame
    spare = free - (blocks - 1)
    bars = np.sort(rng.choice(spare + blocks, size=blocks, replace=False))
    gaps = np.diff(np.concatenate([[-1], bars, [spare + blocks]])) - 1
    gaps[1:-1] += 1
    t = guard + gaps[0]
    for size, gap in zip(sizes, gaps[1:]):
        row[t : t + size] = False
        t += size + gap
    return row


def uniform_mask(
    T: int,
    K: int,
    rate: float,
    rng: np.random.Generator,
    guard: int = GUARD,
    blocks: int = 1,
) -> MaskMatrix:
    """Every agent misses the same interval."""
    length = _block_length(T, rate, guard)
    row = _place_blocks(T, length, guard, blocks, rng)
    return MaskMatrix(np.tile(row, (K, 1)), guard)


def agent_wise_mask(
    T: int,
    K: int,
    rate: Union[float, Sequence[float]],
    rng: np.random.Generator,
    guard: int = GUARD,
    blocks: int = 1,
) -> MaskMatrix:
    """Each agent gets its own missing interval; ``rate`` may be per agent."""
    rates = np.broadcast_to(np.asarray(rate, dtype=float), (K,))
    values = np.empty((K, T), dtype=bool)
    for k in range(K):
        values[k] = _place_blocks(T, _block_length(T, float(rates[k]), guard), guard, blocks, rng)
    return MaskMatrix(values, guard)


def camera_view(ball: np.ndarray, pitch_bounds, camera: CameraSpec, dt: float) -> np.ndarray:
    """``T x 4`` camera rectangles ``(x0, x1, y0, y1)`` following a smoothed ball."""
    ball = np.asarray(ball, dtype=np.float64)
    size = max(1, int(round(camera.smooth_seconds / dt)))
    center = uniform_filter1d(ball, size=size, axis=0, mode="nearest")
    rects = np.empty((len(ball), 4))
    for axis, extent in enumerate((camera.width, camera.height)):
        bound = pitch_bounds[axis]
        half = extent / 2.0
        if extent >= bound:
            c = np.full(len(ball), bound / 2.0)
        else:
            c = np.clip(center[:, axis], half, bound - half)
        rects[:, 2 * axis] = c - half
        rects[:, 2 * axis + 1] = c + half
    return rects


def camera_mask(
    window: TrajectoryWindow,
    camera: CameraSpec = CameraSpec(),
    guard: int = GUARD,
) -> MaskMatrix:
    """Agents are observed only while inside the ball-following camera view."""
    if window.ball_positions is None:
        raise ValueError(f"window {window.sequence_id} has no ball track; camera masking needs one")
    if window.normalized:
        raise ValueError("camera masking works on pitch coordinates in meters")
    rects = camera_view(window.ball_positions, window.pitch_bounds, camera, window.dt)
    x = window.positions[..., 0]
    y = window.positions[..., 1]
    values = (
        (x >= rects[:, 0]) & (x <= rects[:, 1]) & (y >= rects[:, 2]) & (y <= rects[:, 3])
    )
    values[:, :guard] = True
    values[:, values.shape[1] - guard :] = True
    return MaskMatrix(values, guard)


def segments(mask) -> list[MissingSegment]:
    """Maximal missing runs with their observed anchors, sorted by (agent, t_s)."""
    values = _as_bool(mask)
    out = []
    for k, row in enumerate(values):
        padded = np.concatenate([[True], row, [True]]).astype(np.int8)
        edges = np.diff(padded)
        starts = np.flatnonzero(edges == -1)
        ends = np.flatnonzero(edges == 1)
        for s, e in zip(starts, ends):
            if s == 0 or e == len(row):
                raise ValueError(f"agent {k}: missing run touches the window edge and has no anchor")
            out.append(MissingSegment(k, int(s - 1), int(e)))
    return out


def missing_rate_schedule(phase: str, rng: Optional[np.random.Generator] = None, size=None):
    """Training draws rates uniformly from [0.1, 0.9]; evaluation always uses 0.5."""
    if phase == "eval":
        return EVAL_RATE if size is None else np.full(size, EVAL_RATE)
    if phase == "train":
        if rng is None:
            raise ValueError("training rates need an rng")
        return rng.uniform(*TRAIN_RATE_RANGE, size=size)
    raise ValueError(f"phase must be 'train' or 'eval', got {phase!r}")


def max_rate(T: int, guard: int = GUARD) -> float:
    return (T - 2 * guard) / T


def make_mask(
    scenario: str,
    window: TrajectoryWindow,
    rate: Union[float, Sequence[float]],
    rng: np.random.Generator,
    camera: CameraSpec = CameraSpec(),
    guard: int = GUARD,
    blocks: int = 1,
) -> MaskMatrix:
    K, T = window.n_agents, window.n_frames
    if scenario == "uniform":
        return uniform_mask(T, K, float(np.mean(rate)), rng, guard, blocks)
    if scenario == "agentwise":
        return agent_wise_mask(T, K, rate, rng, guard, blocks)
    if scenario == "camera":
        return camera_mask(window, camera, guard)
    raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def applicable_scenarios(sport: str, has_ball: bool = True) -> tuple[str, ...]:
    if sport == "soccer" and has_ball:
        return SCENARIOS
    return ("uniform", "agentwise")
