"""End-to-end training under the four-term MAE objective."""

from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data import PitchScaler, TrajectoryWindow, stack_features
from .masking import (
    CameraSpec,
    agent_wise_mask,
    applicable_scenarios,
    camera_mask,
    max_rate,
    missing_rate_schedule,
    uniform_mask,
)
from .model import MIDAS, ImputationResult, ModelConfig, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class LossBreakdown:
    l_i: torch.Tensor
    l_f: torch.Tensor
    l_b: torch.Tensor
    l_h: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.l_i + self.l_f + self.l_b + self.l_h

    def as_dict(self) -> dict:
        return {
            "l_i": float(self.l_i.detach()),
            "l_f": float(self.l_f.detach()),
            "l_b": float(self.l_b.detach()),
            "l_h": float(self.l_h.detach()),
            "total": float(self.total.detach()),
        }


def _masked_mae(pred: torch.Tensor, target: torch.Tensor, missing: torch.Tensor) -> torch.Tensor:
    # mean absolute error over the coordinates of missing agent-frames
    n = missing.sum() * pred.shape[-1]
    if n == 0:
        return pred.new_zeros(())
    err = (pred - target).abs() * missing.unsqueeze(-1)
    return err.sum() / n


def loss(
    x: torch.Tensor,
    mask: torch.Tensor,
    result: ImputationResult,
    dap_mode: str = "vel_accel",
    ensemble: bool = True,
) -> LossBreakdown:
    """IP error on every frame plus DAP and ensemble errors on missing frames.

    All terms are elementwise MAEs in normalized units. Velocity-only DAP
    models are not asked to predict accelerations. The IP-only baseline
    (``ensemble=False``) keeps just the IP term.
    """
    width = 4 if dap_mode == "vel_only" else 6
    l_i = (result.ip[..., :width] - x[..., :width]).abs().mean()
    if not ensemble:
        zero = l_i.new_zeros(())
        return LossBreakdown(l_i, zero, zero, zero)
    missing = (~mask.bool()).to(x.dtype)
    p = x[..., :2]
    return LossBreakdown(
        l_i,
        _masked_mae(result.forward, p, missing),
        _masked_mae(result.backward, p, missing),
        _masked_mae(result.final, p, missing),
    )


# ---------------------------------------------------------------------------
# masks for batches


class MaskSampler:
    """Draws training masks following the missing-rate curriculum."""

    def __init__(
        self,
        windows: Sequence[TrajectoryWindow],
        scenarios: Sequence[str],
        rng: np.random.Generator,
        camera: CameraSpec = CameraSpec(),
    ):
        self.windows = windows
        self.scenarios = tuple(scenarios)
        self.rng = rng
        self.camera_masks = None
        if "camera" in self.scenarios:
            self.camera_masks = [camera_mask(w, camera).values for w in windows]

    def _rate(self, T: int, size=None):
        return np.minimum(missing_rate_schedule("train", self.rng, size=size), max_rate(T))

    def sample(self, index: Sequence[int]) -> np.ndarray:
        out = []
        for i in index:
            w = self.windows[i]
            K, T = w.n_agents, w.n_frames
            scenario = self.scenarios[self.rng.integers(len(self.scenarios))]
            if scenario == "uniform":
                out.append(uniform_mask(T, K, float(self._rate(T)), self.rng).values)
            elif scenario == "agentwise":
                out.append(agent_wise_mask(T, K, self._rate(T, size=K), self.rng).values)
            else:
                out.append(self.camera_masks[i])
        return np.stack(out)


def eval_masks(
    windows: Sequence[TrajectoryWindow],
    scenario: str,
    rate: float,
    seed: int,
    camera: CameraSpec = CameraSpec(),
) -> np.ndarray:
    """Deterministic evaluation masks for a list of windows."""
    rng = np.random.default_rng(seed)
    out = []
    for w in windows:
        K, T = w.n_agents, w.n_frames
        if scenario == "uniform":
            out.append(uniform_mask(T, K, rate, rng).values)
        elif scenario == "agentwise":
            out.append(agent_wise_mask(T, K, rate, rng).values)
        elif scenario == "camera":
            out.append(camera_mask(w, camera).values)
        else:
            raise ValueError(f"unknown scenario {scenario!r}")
    return np.stack(out)


# ---------------------------------------------------------------------------
# optimisation


def make_optimizer(model: MIDAS, cfg: ModelConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)


def train_step(model: MIDAS, optimizer, x: torch.Tensor, mask: torch.Tensor) -> LossBreakdown:
    model.train()
    cfg = model.cfg
    optimizer.zero_grad()
    result = model(x, mask)
    parts = loss(x, mask, result, cfg.dap_mode, cfg.ensemble)
    total = parts.total
    if not torch.isfinite(total):
        raise TrainingDivergedError(f"non-finite loss: {parts.as_dict()}")
    total.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    return parts


@torch.no_grad()
def validation_pe(model: MIDAS, x: torch.Tensor, masks: torch.Tensor, scaler: PitchScaler, batch_size: int) -> float:
    """Mean position error in meters of the final prediction over missing frames."""
    model.eval()
    scale = torch.as_tensor(scaler.scale, dtype=x.dtype)
    total, count = 0.0, 0
    for i in range(0, len(x), batch_size):
        xb, mb = x[i : i + batch_size], masks[i : i + batch_size]
        res = model(xb, mb)
        err = torch.linalg.norm((res.final - xb[..., :2]) / scale, dim=-1)
        missing = ~mb
        total += float(err[missing].double().sum())
        count += int(missing.sum())
    return total / max(count, 1)


@dataclass
class TrainResult:
    model: MIDAS
    history: list = field(default_factory=list)
    best_val_pe: float = float("inf")
    best_epoch: int = -1


def train(
    train_windows: Sequence[TrajectoryWindow],
    val_windows: Sequence[TrajectoryWindow],
    cfg: ModelConfig,
    seed: int = 0,
    scenarios: Optional[Sequence[str]] = None,
    sport: str = "soccer",
    epochs: Optional[int] = None,
    steps_per_epoch: Optional[int] = None,
    time_budget: Optional[float] = None,
    log_path=None,
    checkpoint_path=None,
    dataset_info: Optional[dict] = None,
    val_rate: float = 0.5,
) -> TrainResult:
    """Train a model and keep the weights with the best validation PE.

    Every batch draws a scenario uniformly from ``scenarios`` (by default
    all that apply to the sport) and a missing rate from the training
    curriculum; validation uses fixed masks at ``val_rate``.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    has_ball = all(w.ball_positions is not None for w in train_windows)
    scenarios = tuple(scenarios or applicable_scenarios(sport, has_ball))
    epochs = cfg.epochs if epochs is None else epochs

    model = MIDAS(cfg)
    optimizer = make_optimizer(model, cfg)
    scaler = PitchScaler(train_windows[0].pitch_bounds)
    x_train = torch.as_tensor(stack_features(train_windows), dtype=torch.float32)
    sampler = MaskSampler(train_windows, scenarios, rng)

    x_val = torch.as_tensor(stack_features(val_windows), dtype=torch.float32)
    val_masks = torch.cat(
        [torch.as_tensor(eval_masks(val_windows, s, val_rate, seed + 1 + j)) for j, s in enumerate(scenarios)]
    )
    x_val = x_val.repeat(len(scenarios), 1, 1, 1)

    result = TrainResult(model)
    best_state = copy.deepcopy(model.state_dict())
    shuffle = torch.Generator().manual_seed(seed)
    stale = 0
    started = time.monotonic()
    log_rows = []

    for epoch in range(epochs):
        order = torch.randperm(len(x_train), generator=shuffle)
        batches = [order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
        if steps_per_epoch is not None:
            batches = batches[:steps_per_epoch]
        sums = np.zeros(4)
        for step, idx in enumerate(batches):
            mask = torch.as_tensor(sampler.sample(idx.tolist()))
            try:
                parts = train_step(model, optimizer, x_train[idx], mask)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"epoch {epoch} step {step}: {exc}") from None
            sums += [float(v.detach()) for v in (parts.l_i, parts.l_f, parts.l_b, parts.l_h)]
        means = sums / max(len(batches), 1)
        val_pe = validation_pe(model, x_val, val_masks, scaler, cfg.batch_size)
        row = dict(zip(("epoch", "l_i", "l_f", "l_b", "l_h", "val_PE"), (epoch, *means, val_pe)))
        result.history.append(row)
        log_rows.append(row)
        log.info("epoch %d  loss %.5f  val PE %.4f m", epoch, means.sum(), val_pe)

        if val_pe < result.best_val_pe:
            result.best_val_pe, result.best_epoch = val_pe, epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model, dataset_info, {"epoch": epoch, "val_PE": val_pe, "seed": seed})
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stopping after %d stale epochs", stale)
                break
        if time_budget is not None and time.monotonic() - started > time_budget:
            log.info("time budget exhausted after epoch %d", epoch)
            break

    model.load_state_dict(best_state)
    model.eval()
    if log_path is not None:
        write_training_log(log_rows, log_path)
    return result


def write_training_log(rows, path) -> None:
    from .adapters import atomic_write

    with atomic_write(Path(path), newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "l_i", "l_f", "l_b", "l_h", "val_PE"])
        w.writeheader()
        w.writerows(rows)
