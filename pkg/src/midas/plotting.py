"""Static figures: trajectory comparisons, ensemble weights, pitch control."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .adapters import atomic_write  # noqa: E402


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format=str(path).rsplit(".", 1)[-1] if "." in str(path) else "png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    with atomic_write(path, "wb") as fh:
        fh.write(buf.getvalue())


def trajectory_figure(window, mask, predictions: dict, path) -> None:
    """Ground truth (grey), observed parts (black) and each method on missing frames."""
    mask = np.asarray(mask, dtype=bool)
    length, width = window.pitch_bounds
    fig, ax = plt.subplots(figsize=(8, 8 * width / length))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k in range(window.n_agents):
        p = window.positions[k]
        ax.plot(p[:, 0], p[:, 1], color="0.75", lw=1, zorder=1)
        obs = np.where(mask[k][:, None], p, np.nan)
        ax.plot(obs[:, 0], obs[:, 1], color="k", lw=1.2, zorder=2)
        for j, (name, pred) in enumerate(predictions.items()):
            miss = np.where(~mask[k][:, None], pred[k], np.nan)
            ax.plot(miss[:, 0], miss[:, 1], color=colors[j % len(colors)], lw=1.2, zorder=3,
                    label=name if k == 0 else None)
    ax.set_xlim(0, length)
    ax.set_ylim(0, width)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(window.sequence_id)
    _save(fig, path)


def weights_figure(result, agent: int, path) -> None:
    w = result.weights[agent]
    t = np.arange(len(w))
    fig, ax = plt.subplots(figsize=(8, 3))
    for j, name in enumerate(("lambda_i", "lambda_f", "lambda_b")):
        ax.plot(t, w[:, j], label=name)
    ax.set_ylim(0, 1)
    ax.set_xlabel("frame")
    ax.set_title(f"{result.sequence_id} agent {result.agent_ids[agent]}")
    ax.legend(fontsize=8)
    _save(fig, path)


def control_figure(cmap, positions, left_team, path) -> None:
    length, width = cmap.xs[-1] + cmap.xs[0], cmap.ys[-1] + cmap.ys[0]
    left_team = np.asarray(left_team, dtype=bool)
    fig, ax = plt.subplots(figsize=(8, 8 * width / length))
    im = ax.imshow(cmap.grid, origin="lower", extent=(0, length, 0, width), cmap="bwr_r", vmin=0, vmax=1)
    ax.scatter(*positions[left_team].T, c="b", edgecolor="k", s=40)
    ax.scatter(*positions[~left_team].T, c="r", edgecolor="k", s=40)
    if cmap.ball is not None:
        ax.scatter(*cmap.ball, c="w", edgecolor="k", s=25)
    fig.colorbar(im, ax=ax, fraction=0.03, label="left team control")
    _save(fig, path)
