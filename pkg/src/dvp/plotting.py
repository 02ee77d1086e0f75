"""Report figures. Uses the non-interactive Agg backend and only writes files."""
from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_variance_curve(levels: np.ndarray, v_est: np.ndarray, path, v_gt: np.ndarray | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(levels, v_est, label="estimated f")
    if v_gt is not None:
        ax.plot(levels, v_gt, "--", label="ground truth")
    ax.set_xlabel("intensity")
    ax.set_ylabel("variance")
    ax.legend()
    return _save(fig, path)


def parse_metrics(lines) -> tuple[dict[str, np.ndarray], list[tuple[int, np.ndarray]]]:
    """Loss columns and the beta trajectory from a metrics log."""
    steps, lhat, lc, total = [], [], [], []
    betas = []
    for line in lines:
        parts = line.rstrip("\n").split("\t")
        if parts[0] == "loss":
            steps.append(int(parts[1]))
            lhat.append(float(parts[3]))
            lc.append(float(parts[4]))
            total.append(float(parts[5]))
        elif parts[0] == "s2":
            betas.append((int(parts[1]), np.array([float(v) for v in parts[4].split(",")])))
    loss = {k: np.array(v) for k, v in
            (("step", steps), ("lhat", lhat), ("lc", lc), ("total", total))}
    return loss, betas


def plot_training_curves(loss: dict[str, np.ndarray], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(loss["step"], loss["lhat"], label="L_hat")
    lc = loss["lc"]
    if np.any(lc > 0):
        keep = lc > 0
        ax.semilogy(loss["step"][keep], lc[keep], label="L_c")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    return _save(fig, path)


def plot_beta_trajectory(betas: list[tuple[int, np.ndarray]], path, truth: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if betas:
        steps = np.array([s for s, _ in betas])
        vals = np.stack([b for _, b in betas])
        for k in range(vals.shape[1]):
            ax.plot(steps, vals[:, k], label=f"beta_{k + 1}")
    if truth is not None:
        ax.axhline(truth, color="k", ls=":", label="true variance")
    ax.set_xlabel("step")
    ax.set_ylabel("coefficient")
    ax.legend()
    return _save(fig, path)
