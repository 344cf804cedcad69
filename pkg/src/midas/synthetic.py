"""Synthetic multi-agent tracks with smooth, bounded dynamics.

Agents share a slowly drifting team motion, hold a formation slot and
roam around it with smooth, bounded excursions plus a slow individual
drift. A long gap is therefore predictable from the observed teammates as
well as from the agent's own history. Used for acceptance runs,
benchmarks and smoke tests when no real tracking data is at hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .data import DatasetSpec, TrajectoryWindow, make_window


@dataclass(frozen=True)
class SmoothDynamics:
    team_speed: float = 1.5  # per-axis std of the shared velocity, m/s
    team_smoothing: float = 15.0  # frames
    agent_speed: float = 0.3  # slow individual drift, integrated
    agent_smoothing: float = 8.0
    roam: float = 4.0  # per-axis std of the excursion around the slot, m
    roam_smoothing: float = 20.0  # frames
    formation: tuple = (0.17, 0.2)  # half-extent of starting offsets, fraction of the pitch
    max_accel: float = 6.0  # m/s^2, windows above this are redrawn


def _smooth_noise(rng, n: int, sigma: float, std: float, shape) -> np.ndarray:
    pad = int(4 * sigma)
    raw = rng.standard_normal((*shape, n + 2 * pad, 2))
    sm = gaussian_filter1d(raw, sigma, axis=-2)[..., pad : pad + n, :]
    return sm / sm.std() * std


def smooth_window(
    rng: np.random.Generator,
    spec: DatasetSpec,
    n_agents: int | None = None,
    dynamics: SmoothDynamics = SmoothDynamics(),
    sequence_id: str = "synthetic",
    max_tries: int = 1000,
) -> TrajectoryWindow:
    K = n_agents or spec.n_agents
    T = spec.window_frames
    dt = spec.dt
    length, width = spec.pitch_bounds
    # speeds are tuned for a 105 x 68 m pitch; smaller fields move proportionally slower
    scale = min(1.0, length / 105.0, width / 68.0)
    for _ in range(max_tries):
        team_v = _smooth_noise(rng, T, dynamics.team_smoothing, dynamics.team_speed * scale, ())
        agent_v = _smooth_noise(rng, T, dynamics.agent_smoothing, dynamics.agent_speed * scale, (K,))
        roam = _smooth_noise(rng, T, dynamics.roam_smoothing, dynamics.roam * scale, (K,))
        v = team_v[None] + agent_v
        center = rng.uniform([0.3 * length, 0.3 * width], [0.7 * length, 0.7 * width])
        offsets = rng.uniform(-1, 1, size=(K, 2)) * np.asarray(dynamics.formation) * (length, width)
        p = center + offsets[:, None, :] + roam + np.cumsum(v, axis=1) * dt
        if p[..., 0].min() < 0 or p[..., 0].max() > length or p[..., 1].min() < 0 or p[..., 1].max() > width:
            continue
        acc = np.diff(p, n=2, axis=1) / dt**2
        if np.linalg.norm(acc, axis=-1).max() > dynamics.max_accel:
            continue
        ball = p.mean(axis=0) + _smooth_noise(rng, T, 10.0, 4.0, ()).cumsum(axis=0) * dt
        ball = np.clip(ball, 0, [length, width])
        return make_window(sequence_id, [f"a{k}" for k in range(K)], p, spec, ball_positions=ball)
    raise RuntimeError("could not draw an in-bounds window; loosen the dynamics")


def smooth_dataset(
    n_windows: int,
    spec: DatasetSpec,
    seed: int = 0,
    n_agents: int | None = None,
    dynamics: SmoothDynamics = SmoothDynamics(),
) -> list[TrajectoryWindow]:
    rng = np.random.default_rng(seed)
    return [smooth_window(rng, spec, n_agents, dynamics, f"syn{i:05d}") for i in range(n_windows)]


def constant_velocity_dataset(n_windows: int, spec: DatasetSpec, seed: int = 0, n_agents: int = 2) -> list[TrajectoryWindow]:
    """Agents moving in straight lines at constant speed (0.5 to 4 m/s)."""
    rng = np.random.default_rng(seed)
    T, dt = spec.window_frames, spec.dt
    length, width = spec.pitch_bounds
    out = []
    t = np.arange(T) * dt
    while len(out) < n_windows:
        speed = rng.uniform(0.5, 4.0, size=n_agents)
        angle = rng.uniform(0, 2 * np.pi, size=n_agents)
        v = np.stack([np.cos(angle), np.sin(angle)], axis=-1) * speed[:, None]
        start = rng.uniform([10, 10], [length - 10, width - 10], size=(n_agents, 2))
        p = start[:, None, :] + v[:, None, :] * t[None, :, None]
        if p[..., 0].min() < 0 or p[..., 0].max() > length or p[..., 1].min() < 0 or p[..., 1].max() > width:
            continue
        out.append(make_window(f"cv{len(out):05d}", [f"a{k}" for k in range(n_agents)], p, spec))
    return out
