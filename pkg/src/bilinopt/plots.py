"""Figure rendering for experiments, solutions, and solver traces.

All functions render to files (Agg backend); no interactive windows.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_trajectory(states: np.ndarray, inputs: np.ndarray, path,
                    title: str = "trajectory",
                    reference_states: np.ndarray | None = None) -> Path:
    """States (top) and inputs (bottom) against time; optional overlay of a
    second state sequence (e.g. plant replay vs data-based prediction)."""
    states = np.atleast_2d(states)
    inputs = np.atleast_2d(inputs)
    fig, (ax_x, ax_u) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    tx = np.arange(states.shape[0])
    for i in range(states.shape[1]):
        ax_x.plot(tx, states[:, i], label=f"x_{i + 1}")
    if reference_states is not None:
        ref = np.atleast_2d(reference_states)
        for i in range(ref.shape[1]):
            ax_x.plot(np.arange(ref.shape[0]), ref[:, i], "--",
                      label=f"replay x_{i + 1}")
    ax_x.set_ylabel("state")
    ax_x.legend(loc="best", fontsize=8)
    ax_x.set_title(title)
    tu = np.arange(inputs.shape[0])
    for j in range(inputs.shape[1]):
        ax_u.step(tu, inputs[:, j], where="post", label=f"u_{j + 1}")
    ax_u.set_ylabel("input")
    ax_u.set_xlabel("t")
    ax_u.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_trace(trace, path, title: str = "solver trace") -> Path:
    """Cost and feasibility violation per outer iteration (log scale)."""
    fig, (ax_c, ax_v) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ks = [row["k"] for row in trace]
    ax_c.plot(ks, [row["cost"] for row in trace], marker="o", ms=3)
    ax_c.set_ylabel("cost")
    ax_c.set_title(title)
    viol = [max(row["violation"], 1e-18) for row in trace]
    ax_v.semilogy(ks, viol, marker="o", ms=3)
    ax_v.set_ylabel("violation")
    ax_v.set_xlabel("outer iteration")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_rank_growth(log, path, title: str = "experiment rank growth") -> Path:
    """Numerical rank of the data matrix against experiment length."""
    steps = [entry for entry in log if "rank_after" in entry]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([e["t"] for e in steps], [e["rank_after"] for e in steps],
            marker=".", lw=1)
    ax.set_xlabel("t")
    ax.set_ylabel("rank of data matrix")
    ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
