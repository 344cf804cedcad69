"""Initial-prediction network and the full self-ensemble imputer."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn

from .dap import DAP_MODES, accumulate, segment_gaps
from .ensemble import EnsembleHead, TemporalDecay, combine, splice

FEATURE_MODES = {"pos": 2, "pos_vel": 4, "all": 6}
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    embed_dim: int = 128
    num_heads: int = 4
    num_inducing: int = 16
    num_isab: int = 2
    rnn_dim: int = 256
    rnn_layers: int = 2
    ensemble_rnn_dim: int = 192
    decay_dim: int = 16
    dropout: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 32
    grad_clip: float = 1.0
    epochs: int = 100
    patience: int = 10
    feature_mode: str = "all"
    dap_mode: str = "vel_accel"
    ensemble: bool = True
    dt: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        dims = ("embed_dim", "num_heads", "num_inducing", "num_isab", "rnn_dim", "rnn_layers",
                "ensemble_rnn_dim", "decay_dim", "batch_size")
        for name in dims:
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {sorted(FEATURE_MODES)}")
        if self.dap_mode not in DAP_MODES:
            raise ValueError(f"dap_mode must be one of {DAP_MODES}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def in_features(self) -> int:
        return FEATURE_MODES[self.feature_mode]

    # key = value text files
    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(self).items())

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ModelConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(value, types[key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)


def _parse_value(value: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value


# ---------------------------------------------------------------------------
# set attention


class MAB(nn.Module):
    """Multihead attention block: ``LN(H + FF(H))`` with ``H = LN(Q + Attn(Q, K))``."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.ln0 = nn.LayerNorm(dim)
        self.ln1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim))

    def forward(self, q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        h = self.ln0(q + self.attn(q, k, k, need_weights=False)[0])
        return self.ln1(h + self.ff(h))


class ISAB(nn.Module):
    def __init__(self, dim: int, heads: int, num_inducing: int, dropout: float = 0.0):
        super().__init__()
        self.inducing = nn.Parameter(torch.empty(1, num_inducing, dim))
        nn.init.xavier_uniform_(self.inducing)
        self.mab0 = MAB(dim, heads, dropout)
        self.mab1 = MAB(dim, heads, dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.mab0(self.inducing.expand(x.shape[0], -1, -1), x)
        return self.mab1(x, h)


class PMA(nn.Module):
    def __init__(self, dim: int, heads: int, num_seeds: int = 1, dropout: float = 0.0):
        super().__init__()
        self.seeds = nn.Parameter(torch.empty(1, num_seeds, dim))
        nn.init.xavier_uniform_(self.seeds)
        self.ff = nn.Sequential(nn.Linear(dim, dim), nn.ReLU())
        self.mab = MAB(dim, heads, dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mab(self.seeds.expand(x.shape[0], -1, -1), self.ff(x))


class SetEncoder(nn.Module):
    """Per-frame set attention: agent-wise embeddings plus one pooled embedding."""

    def __init__(self, in_dim: int, cfg: ModelConfig):
        super().__init__()
        self.embed = nn.Linear(in_dim, cfg.embed_dim)
        self.blocks = nn.ModuleList(
            ISAB(cfg.embed_dim, cfg.num_heads, cfg.num_inducing, cfg.dropout) for _ in range(cfg.num_isab)
        )
        self.pool = PMA(cfg.embed_dim, cfg.num_heads, 1, cfg.dropout)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # x: sets x K x d
        h = self.embed(x)
        for block in self.blocks:
            h = block(h)
        return h, self.pool(h).squeeze(1)


# ---------------------------------------------------------------------------
# networks


class InitialPredictor(nn.Module):
    """Set attention per frame, then a Bi-LSTM per agent with shared weights."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, m = cfg.in_features, cfg.embed_dim
        self.encoder = SetEncoder(d, cfg)
        self.rnn = nn.LSTM(
            d + 2 * m,
            cfg.rnn_dim,
            num_layers=cfg.rnn_layers,
            batch_first=True,
            bidirectional=True,
            dropout=cfg.dropout if cfg.rnn_layers > 1 else 0.0,
        )
        self.dropout = nn.Dropout(cfg.dropout)
        self.decoder = nn.Linear(2 * cfg.rnn_dim, 6)

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``B x K x T x d`` masked inputs -> (``B x K x T x m``, ``B x T x m``)."""
        B, K, T, d = x.shape
        frames = x.permute(0, 2, 1, 3).reshape(B * T, K, d)
        z, g = self.encoder(frames)
        z_agent = z.reshape(B, T, K, -1).permute(0, 2, 1, 3)
        return z_agent, g.reshape(B, T, -1)

    def hidden_states(self, x, z_agent, z_global) -> torch.Tensor:
        B, K, T, _ = x.shape
        zg = z_global.unsqueeze(1).expand(B, K, T, z_global.shape[-1])
        seq = torch.cat([x, z_agent, zg], dim=-1).reshape(B * K, T, -1)
        h, _ = self.rnn(seq)
        return h.reshape(B, K, T, -1)

    def forward(self, x: torch.Tensor):
        z_agent, z_global = self.encode(x)
        h = self.hidden_states(x, z_agent, z_global)
        return self.decoder(self.dropout(h)), z_agent, z_global


@dataclass
class ImputationResult:
    ip: torch.Tensor  # B x K x T x 6
    forward: torch.Tensor  # B x K x T x 2
    backward: torch.Tensor
    weights: torch.Tensor  # B x K x T x 3
    final: torch.Tensor  # B x K x T x 2, ensemble positions on every frame
    completed: torch.Tensor  # B x K x T x 6, observed frames copied from input
    z_agent: Optional[torch.Tensor] = field(default=None, repr=False)
    z_global: Optional[torch.Tensor] = field(default=None, repr=False)


class MIDAS(nn.Module):
    """Initial prediction + bidirectional DAP + learned convex ensemble.

    Inputs are normalized ``B x K x T x 6`` features and a ``B x K x T``
    observation mask. Only observed entries of the features are read.
    With ``cfg.ensemble`` off the model reduces to the IP-only baseline.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.ip_net = InitialPredictor(cfg)
        if cfg.ensemble:
            self.decay = TemporalDecay(cfg.decay_dim)
            self.head = EnsembleHead(cfg.embed_dim, cfg.ensemble_rnn_dim, cfg.decay_dim, cfg.dropout)

    def masked_inputs(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        feats = x[..., : self.cfg.in_features]
        return torch.where(mask.bool().unsqueeze(-1), feats, torch.zeros_like(feats))

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> ImputationResult:
        if x.dim() != 4 or x.shape[-1] != 6:
            raise ValueError(f"expected B x K x T x 6 features, got {tuple(x.shape)}")
        if mask.shape != x.shape[:-1]:
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match features {tuple(x.shape)}")
        mask = mask.bool()
        x = torch.where(mask.unsqueeze(-1), x, torch.zeros_like(x))
        ip, z_agent, z_global = self.ip_net(self.masked_inputs(x, mask))
        fwd, bwd = accumulate(x[..., :2], mask, ip, self.cfg.dt, self.cfg.dap_mode)
        if self.cfg.ensemble:
            gamma = self.decay(segment_gaps(mask).to(ip.dtype))
            weights = self.head(ip, fwd, bwd, z_agent, z_global, gamma)
        else:
            weights = torch.zeros(*ip.shape[:-1], 3, dtype=ip.dtype, device=ip.device)
            weights[..., 0] = 1.0
        final = combine(ip[..., :2], fwd, bwd, weights)
        completed = splice(x, mask, final, ip[..., 2:])
        return ImputationResult(ip, fwd, bwd, weights, final, completed, z_agent, z_global)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: MIDAS, dataset: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    from .adapters import atomic_write

    state = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.cfg),
        "dataset": dataset or {},
        "fingerprint": hashlib.sha256(json.dumps(dataset or {}, sort_keys=True).encode()).hexdigest()[:16],
        "extra": extra or {},
        "state_dict": model.state_dict(),
    }
    buf = io.BytesIO()
    torch.save(state, buf)
    with atomic_write(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[MIDAS, dict]:
    state = torch.load(path, map_location="cpu", weights_only=True)
    version = state.get("version", 0)
    if version > CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {version} is newer than supported {CHECKPOINT_VERSION}")
    cfg = ModelConfig(**state["config"])
    model = MIDAS(cfg)
    model.load_state_dict(state["state_dict"])
    model.eval()
    return model, state
