"""Imputation metrics, naive baselines and ablation reports."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .masking import segments


def _mask(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "values", mask), dtype=bool)


def position_error(true_p, pred_p, mask) -> float:
    """Mean Euclidean distance over missing agent-frames (NaN if nothing is missing)."""
    missing = ~_mask(mask)
    if not missing.any():
        return float("nan")
    d = np.linalg.norm(np.asarray(true_p, dtype=np.float64) - np.asarray(pred_p, dtype=np.float64), axis=-1)
    return float(d[missing].mean())


def _segment_variances(true_p, pred_p, mask, min_len: int = 3):
    out = []
    for seg in segments(mask):
        if seg.length < min_len:
            continue
        sl = slice(seg.t_s, seg.t_e + 1)
        st = np.linalg.norm(np.diff(true_p[seg.agent, sl], axis=0), axis=-1)
        sp = np.linalg.norm(np.diff(pred_p[seg.agent, sl], axis=0), axis=-1)
        out.append((st.var(), sp.var()))
    return out


def step_change_error(true_p, pred_p, mask, min_len: int = 3) -> float:
    """Mean over segments of ``|var(true step sizes) - var(predicted step sizes)|``.

    Step sizes are per-frame displacement norms over ``t_s .. t_e``, so the
    unit is (m/frame)^2. Segments with fewer than ``min_len`` missing frames
    are skipped. Accepts ``K x T x 2`` arrays or a batch of them.
    """
    true_p = np.asarray(true_p, dtype=np.float64)
    pred_p = np.asarray(pred_p, dtype=np.float64)
    mask = _mask(mask)
    if mask.ndim == 2:
        true_p, pred_p, mask = true_p[None], pred_p[None], mask[None]
    diffs = []
    for tp, pp, m in zip(true_p, pred_p, mask):
        diffs.extend(abs(a - b) for a, b in _segment_variances(tp, pp, m, min_len))
    return float(np.mean(diffs)) if diffs else float("nan")


def _positions(window_or_p) -> np.ndarray:
    return np.asarray(getattr(window_or_p, "positions", window_or_p), dtype=np.float64)


def linear_interp(window, mask) -> np.ndarray:
    """Fill every missing run on the chord between its two anchors."""
    p = _positions(window).copy()
    for k, t_s, t_e in segments(mask):
        w = (np.arange(t_s + 1, t_e) - t_s) / (t_e - t_s)
        p[k, t_s + 1 : t_e] = (1 - w)[:, None] * p[k, t_s] + w[:, None] * p[k, t_e]
    return p


def cubic_spline(window, mask, bc_type="natural") -> np.ndarray:
    """Per agent and axis, a cubic spline through all observed frames."""
    p = _positions(window).copy()
    m = _mask(mask)
    t = np.arange(p.shape[1])
    for k in range(p.shape[0]):
        obs = m[k]
        if obs.all():
            continue
        if obs.sum() < 2:
            raise ValueError(f"agent {k}: need at least two observed frames")
        spline = CubicSpline(t[obs], p[k, obs], axis=0, bc_type=bc_type)
        p[k, ~obs] = spline(t[~obs])
    return p


# ---------------------------------------------------------------------------
# reports


@dataclass
class TercileGroup:
    name: str
    n_segments: int
    length_mean: float
    length_std: float
    pe: dict  # component -> meters
    weights: dict  # lambda_i / lambda_f / lambda_b means


@dataclass
class EvalReport:
    scenario: str
    rate: Optional[float]
    n_windows: int
    methods: dict = field(default_factory=dict)  # name -> {"PE": .., "SCE": ..}
    components: dict = field(default_factory=dict)  # ip / forward / backward / final PE
    terciles: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def tercile_bounds(lengths) -> tuple[float, float]:
    lengths = np.asarray(lengths, dtype=np.float64)
    return float(np.quantile(lengths, 1 / 3)), float(np.quantile(lengths, 2 / 3))


def tercile_labels(lengths) -> np.ndarray:
    """0/1/2 for short/medium/long; lengths equal to a cut go to the lower group."""
    lengths = np.asarray(lengths, dtype=np.float64)
    if len(lengths) == 0:
        return np.zeros(0, dtype=int)
    q1, q2 = tercile_bounds(lengths)
    return np.where(lengths <= q1, 0, np.where(lengths <= q2, 1, 2))


def tercile_report(results, windows) -> list[TercileGroup]:
    """Component errors and mean ensemble weights grouped by missing length.

    ``results`` are :class:`~midas.inference.WindowImputation` objects and
    ``windows`` the matching ground-truth windows.
    """
    rows = []  # (length, err_ip, err_f, err_b, err_final, lambdas) per segment
    for res, w in zip(results, windows):
        truth = w.positions
        for seg in segments(res.mask):
            sl = slice(seg.t_s + 1, seg.t_e)
            k = seg.agent
            gt = truth[k, sl]
            errs = [
                np.linalg.norm(comp - gt, axis=-1)
                for comp in (res.ip[k, sl, :2], res.forward[k, sl], res.backward[k, sl], res.positions[k, sl])
            ]
            rows.append((seg.length, errs, res.weights[k, sl]))
    if not rows:
        return []
    labels = tercile_labels([r[0] for r in rows])
    groups = []
    for g, name in enumerate(("short", "medium", "long")):
        members = [r for r, lab in zip(rows, labels) if lab == g]
        if not members:
            groups.append(TercileGroup(name, 0, float("nan"), float("nan"), {}, {}))
            continue
        lengths = np.array([r[0] for r in members], dtype=float)
        pe = {
            comp: float(np.concatenate([r[1][i] for r in members]).mean())
            for i, comp in enumerate(("ip", "forward", "backward", "final"))
        }
        lam = np.concatenate([r[2] for r in members])
        weights = {
            "lambda_i": float(np.nanmean(lam[:, 0])),
            "lambda_f": float(np.nanmean(lam[:, 1])),
            "lambda_b": float(np.nanmean(lam[:, 2])),
        }
        groups.append(TercileGroup(name, len(members), float(lengths.mean()), float(lengths.std()), pe, weights))
    return groups


def component_errors(results, windows) -> dict:
    out = {}
    for name, get in (
        ("ip", lambda r: r.ip[..., :2]),
        ("forward", lambda r: r.forward),
        ("backward", lambda r: r.backward),
        ("final", lambda r: r.positions),
    ):
        d, n = 0.0, 0
        for r, w in zip(results, windows):
            miss = ~r.mask
            e = np.linalg.norm(get(r) - w.positions, axis=-1)[miss]
            d += e.sum()
            n += e.size
        out[name] = d / n if n else float("nan")
    return out


def method_scores(truth: np.ndarray, pred: np.ndarray, masks: np.ndarray) -> dict:
    """PE and SCE over a batch of windows (``N x K x T x 2`` arrays)."""
    return {"PE": position_error(truth, pred, masks), "SCE": step_change_error(truth, pred, masks)}


def evaluate_predictions(
    windows: Sequence,
    masks,
    predictions: dict,
    scenario: str,
    rate: Optional[float],
    results: Optional[list] = None,
) -> EvalReport:
    """Score named prediction sets, always alongside the LI and CS baselines."""
    masks = np.asarray([_mask(m) for m in masks])
    truth = np.stack([w.positions for w in windows])
    report = EvalReport(scenario, rate, len(windows))
    report.methods["LI"] = method_scores(truth, np.stack([linear_interp(w, m) for w, m in zip(windows, masks)]), masks)
    report.methods["CS"] = method_scores(truth, np.stack([cubic_spline(w, m) for w, m in zip(windows, masks)]), masks)
    for name, pred in predictions.items():
        report.methods[name] = method_scores(truth, np.asarray(pred), masks)
    if results is not None:
        report.components = component_errors(results, windows)
        report.terciles = [asdict(g) for g in tercile_report(results, windows)]
    return report


def evaluate_model(model, windows, masks, scenario: str, rate: Optional[float], name: str = "MIDAS", batch_size: int = 16):
    from .inference import impute

    results = impute(model, windows, masks, batch_size=batch_size)
    report = evaluate_predictions(
        windows, masks, {name: np.stack([r.positions for r in results])}, scenario, rate, results=results
    )
    return report, results
