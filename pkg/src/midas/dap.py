"""Derivative-accumulating predictions (DAP).

Inside each missing segment ``(t_s, t_e)`` positions are rebuilt by
integrating the network's predicted velocities and accelerations from an
observed anchor, forward from ``t_s`` and backward from ``t_e``. With the
finite-difference derivatives of :func:`midas.data.compute_derivatives` both
recursions are exact identities, which is what the tests pin down.

Two implementations live here: a per-segment loop in numpy (the readable
reference, also used for analysis) and a vectorized torch version used in
training, which must agree with it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .masking import MissingSegment, segments

DAP_MODES = ("vel_accel", "vel_only")


@dataclass
class DapResult:
    forward: np.ndarray  # K x T x 2, NaN outside missing frames
    backward: np.ndarray
    defined_mask: np.ndarray  # K x T, True on missing frames


def _check(segment: MissingSegment, T: int, dap_mode: str) -> None:
    if dap_mode not in DAP_MODES:
        raise ValueError(f"dap_mode must be one of {DAP_MODES}, got {dap_mode!r}")
    if not (0 <= segment.t_s < segment.t_e < T):
        raise ValueError(f"segment {segment} lies outside [0, {T})")


def accumulate_forward(segment, observed_p, ip, dt, dap_mode="vel_accel") -> np.ndarray:
    """Positions for frames ``t_s+1 .. t_e-1`` integrated from ``p[t_s]``."""
    k, t_s, t_e = segment
    ip = np.asarray(ip, dtype=np.float64)
    _check(MissingSegment(k, t_s, t_e), ip.shape[1], dap_mode)
    v, a = ip[k, :, 2:4], ip[k, :, 4:6]
    p = np.asarray(observed_p, dtype=np.float64)[k, t_s].copy()
    out = np.empty((t_e - t_s - 1, 2))
    for j, t in enumerate(range(t_s + 1, t_e)):
        if dap_mode == "vel_accel":
            p = p + (v[t - 1] + a[t - 1] * dt) * dt
        else:
            p = p + v[t] * dt
        out[j] = p
    return out


def accumulate_backward(segment, observed_p, ip, dt, dap_mode="vel_accel") -> np.ndarray:
    """Positions for frames ``t_s+1 .. t_e-1`` integrated back from ``p[t_e]``."""
    k, t_s, t_e = segment
    ip = np.asarray(ip, dtype=np.float64)
    T = ip.shape[1]
    _check(MissingSegment(k, t_s, t_e), T, dap_mode)
    v, a = ip[k, :, 2:4], ip[k, :, 4:6]
    p = np.asarray(observed_p, dtype=np.float64)[k, t_e].copy()
    out = np.empty((t_e - t_s - 1, 2))
    for t in range(t_e - 1, t_s, -1):
        if dap_mode == "vel_accel":
            p = p - (v[min(t + 2, T - 1)] - a[t + 1] * dt) * dt
        else:
            p = p - v[t + 1] * dt
        out[t - t_s - 1] = p
    return out


def dap_predictions(observed_p, mask, ip, dt, dap_mode="vel_accel") -> DapResult:
    """Run both recursions over every missing segment of a ``K x T`` mask."""
    values = np.asarray(getattr(mask, "values", mask), dtype=bool)
    K, T = values.shape
    fwd = np.full((K, T, 2), np.nan)
    bwd = np.full((K, T, 2), np.nan)
    for seg in segments(values):
        sl = slice(seg.t_s + 1, seg.t_e)
        fwd[seg.agent, sl] = accumulate_forward(seg, observed_p, ip, dt, dap_mode)
        bwd[seg.agent, sl] = accumulate_backward(seg, observed_p, ip, dt, dap_mode)
    return DapResult(fwd, bwd, ~values)


def anchor_indices(mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest observed frame at or before / at or after every frame.

    ``mask`` is ``... x T`` boolean. Frames without an anchor on one side get
    index 0 (before) or ``T-1`` (after); the guard frames rule that out for
    real masks.
    """
    T = mask.shape[-1]
    t = torch.arange(T, device=mask.device).expand_as(mask)
    prev = torch.where(mask, t, torch.full_like(t, -1)).cummax(dim=-1).values.clamp(min=0)
    rev = torch.where(mask, t, torch.full_like(t, T)).flip(-1).cummin(dim=-1).values.flip(-1)
    return prev, rev.clamp(max=T - 1)


def _gather_t(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    # x: ... x T x C, idx: ... x T
    return torch.gather(x, -2, idx.unsqueeze(-1).expand(*idx.shape, x.shape[-1]))


def accumulate(
    positions: torch.Tensor,
    mask: torch.Tensor,
    ip: torch.Tensor,
    dt: float,
    dap_mode: str = "vel_accel",
) -> tuple[torch.Tensor, torch.Tensor]:
    """Vectorized forward and backward DAP over arbitrary leading dims.

    ``positions`` (``... x T x 2``) is read only at observed frames. The
    returned tracks equal the observed positions there and the accumulated
    estimates on missing frames. Accumulation runs in float64.
    """
    if dap_mode not in DAP_MODES:
        raise ValueError(f"dap_mode must be one of {DAP_MODES}, got {dap_mode!r}")
    out_dtype = ip.dtype
    mask = mask.bool()
    p = torch.where(mask.unsqueeze(-1), positions, torch.zeros_like(positions)).double()
    v = ip[..., 2:4].double()
    a = ip[..., 4:6].double()
    missing = (~mask).double().unsqueeze(-1)
    zero = torch.zeros_like(p[..., :1, :])

    # forward: step[t] moves t-1 -> t
    if dap_mode == "vel_accel":
        step = (v[..., :-1, :] + a[..., :-1, :] * dt) * dt
    else:
        step = v[..., 1:, :] * dt
    step = torch.cat([zero, step], dim=-2) * missing
    csum = step.cumsum(dim=-2)
    prev, nxt = anchor_indices(mask)
    fwd = _gather_t(p, prev) + csum - _gather_t(csum, prev)

    # backward: bstep[u] moves u -> u-1, counted when u-1 is missing
    if dap_mode == "vel_accel":
        v_next = torch.cat([v[..., 2:, :], v[..., -1:, :]], dim=-2)
        bstep = (v_next - a[..., 1:, :] * dt) * dt
    else:
        bstep = v[..., 1:, :] * dt
    bstep = torch.cat([zero, bstep * missing[..., :-1, :]], dim=-2)
    # q[t] = sum_{u > t} bstep[u]
    rsum = bstep.flip(-2).cumsum(dim=-2).flip(-2)
    q = torch.cat([rsum[..., 1:, :], zero], dim=-2)
    bwd = _gather_t(p, nxt) - (q - _gather_t(q, nxt))

    obs = mask.unsqueeze(-1)
    return torch.where(obs, p, fwd).to(out_dtype), torch.where(obs, p, bwd).to(out_dtype)


def segment_gaps(mask: torch.Tensor) -> torch.Tensor:
    """``... x T x 2`` frame distances ``(t - t_s, t_e - t)``; zero on observed frames."""
    prev, nxt = anchor_indices(mask.bool())
    T = mask.shape[-1]
    t = torch.arange(T, device=mask.device).expand_as(prev)
    return torch.stack([t - prev, nxt - t], dim=-1).to(torch.get_default_dtype())
