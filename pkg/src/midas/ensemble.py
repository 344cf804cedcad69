"""Soft-voting ensemble of the initial prediction and the two DAP tracks."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def temporal_decay(delta, weight, bias) -> np.ndarray:
    """``exp(-max(0, W @ delta + b))`` for frame gaps ``delta`` (``... x 2``).

    ``weight`` is ``g x 2`` and ``bias`` has length ``g``; every output lies in
    ``(0, 1]``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta < 0):
        raise ValueError("frame gaps must be non-negative")
    z = delta @ np.asarray(weight, dtype=np.float64).T + np.asarray(bias, dtype=np.float64)
    return np.exp(-np.maximum(z, 0.0))


class TemporalDecay(nn.Module):
    def __init__(self, out_dim: int = 16):
        super().__init__()
        self.linear = nn.Linear(2, out_dim)

    def forward(self, delta: torch.Tensor) -> torch.Tensor:
        return torch.exp(-F.relu(self.linear(delta)))


def weights_from_logits(logits):
    """Softmax over the last axis (``lambda_i, lambda_f, lambda_b``)."""
    if isinstance(logits, torch.Tensor):
        return torch.softmax(logits, dim=-1)
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class EnsembleHead(nn.Module):
    """Player-wise Bi-LSTM that scores IP, forward DAP and backward DAP per frame.

    Inputs per agent-frame: the 6-wide initial prediction, both DAP positions,
    the agent and global context embeddings and the decay vector. Weights are
    shared across agents, so permuting agents permutes the output.
    """

    def __init__(self, embed_dim: int, hidden_dim: int, decay_dim: int, dropout: float = 0.0):
        super().__init__()
        in_dim = 6 + 2 + 2 + 2 * embed_dim + decay_dim
        self.rnn = nn.LSTM(in_dim, hidden_dim, batch_first=True, bidirectional=True)
        self.dropout = nn.Dropout(dropout)
        self.fc = nn.Linear(2 * hidden_dim, 3)

    def logits(self, ip, fwd, bwd, z_agent, z_global, gamma) -> torch.Tensor:
        B, K, T, _ = ip.shape
        z_global = z_global.unsqueeze(1).expand(B, K, T, z_global.shape[-1])
        x = torch.cat([ip, fwd, bwd, z_agent, z_global, gamma], dim=-1)
        h, _ = self.rnn(x.reshape(B * K, T, -1))
        return self.fc(self.dropout(h)).reshape(B, K, T, 3)

    def forward(self, ip, fwd, bwd, z_agent, z_global, gamma) -> torch.Tensor:
        return weights_from_logits(self.logits(ip, fwd, bwd, z_agent, z_global, gamma))


def combine(ip_p, dap_fwd, dap_bwd, weights):
    """Convex combination of the three position estimates."""
    return weights[..., 0:1] * ip_p + weights[..., 1:2] * dap_fwd + weights[..., 2:3] * dap_bwd


def splice(x, mask, final_p, ip_va):
    """Keep observed frames, fill missing ones with (final positions, IP derivatives).

    ``x`` is the ``... x T x 6`` ground-truth feature stack (only read where
    observed), ``mask`` the ``... x T`` observation indicators.
    """
    if isinstance(final_p, torch.Tensor):
        filled = torch.cat([final_p, ip_va], dim=-1)
        return torch.where(mask.bool().unsqueeze(-1), x, filled)
    filled = np.concatenate([final_p, ip_va], axis=-1)
    return np.where(np.asarray(mask, dtype=bool)[..., None], x, filled)
