"""Batched imputation returning de-normalized numpy arrays per window."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .data import PitchScaler, TrajectoryWindow, normalize
from .model import MIDAS


@dataclass
class WindowImputation:
    sequence_id: str
    agent_ids: list
    mask: np.ndarray  # K x T, True = observed
    ip: np.ndarray  # K x T x 6, meters
    forward: np.ndarray  # K x T x 2, NaN on observed frames
    backward: np.ndarray
    weights: np.ndarray  # K x T x 3, NaN on observed frames
    completed: np.ndarray  # K x T x 6, observed frames copied from the input

    @property
    def positions(self) -> np.ndarray:
        return self.completed[..., :2]


@torch.no_grad()
def impute(
    model: MIDAS,
    windows: Sequence[TrajectoryWindow],
    masks,
    batch_size: int = 16,
) -> list[WindowImputation]:
    model.eval()
    masks = np.asarray([np.asarray(getattr(m, "values", m), dtype=bool) for m in masks])
    out = []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        # float32 copies of the inputs; observed frames are restored in float64 below
        x = torch.as_tensor(np.stack([normalize(w).features() for w in chunk]), dtype=torch.float32)
        m = torch.as_tensor(masks[start : start + batch_size])
        res = model(x, m)
        for j, w in enumerate(chunk):
            scaler = PitchScaler(w.pitch_bounds)
            obs = m[j].numpy()
            miss = ~obs[..., None]
            ip = scaler.inverse_features(res.ip[j].double().numpy())
            fwd = np.where(miss, scaler.inverse_positions(res.forward[j].double().numpy()), np.nan)
            bwd = np.where(miss, scaler.inverse_positions(res.backward[j].double().numpy()), np.nan)
            weights = np.where(miss, res.weights[j].double().numpy(), np.nan)
            final = scaler.inverse_positions(res.final[j].double().numpy())
            completed = np.where(
                obs[..., None],
                w.features(),
                np.concatenate([final, ip[..., 2:]], axis=-1),
            )
            out.append(WindowImputation(w.sequence_id, list(w.agent_ids), obs, ip, fwd, bwd, weights, completed))
    return out
