# plots.py
import logging
import os
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from symplectic_measure import MOMENT_NAMES


def plot_lyapunov_blocks(block_plus: Sequence[float], block_minus: Sequence[float], save_dir: str) -> Optional[str]:
    if not block_plus:
        logging.warning("No Lyapunov block estimates to plot.")
        return None
    os.makedirs(save_dir, exist_ok=True)
    sns.set_theme(style="whitegrid")

    blocks = np.arange(1, len(block_plus) + 1)
    running_plus = np.cumsum(block_plus) / blocks
    running_minus = np.cumsum(block_minus) / blocks

    plt.figure(figsize=(12, 6))
    sns.lineplot(x=blocks, y=block_plus, label="λ+ per block", color="tab:blue", alpha=0.3, linewidth=1.5)
    sns.lineplot(x=blocks, y=running_plus, label="λ+ running mean", color="tab:blue", linewidth=2.5)
    sns.lineplot(x=blocks, y=block_minus, label="λ- per block", color="tab:red", alpha=0.3, linewidth=1.5)
    sns.lineplot(x=blocks, y=running_minus, label="λ- running mean", color="tab:red", linewidth=2.5)
    plt.axhline(0.0, color="black", linewidth=1)
    plt.title("Lyapunov Exponents by Block", fontsize=16, fontweight="bold")
    plt.xlabel("Block", fontsize=14)
    plt.ylabel("Exponent (nats / step)", fontsize=14)
    plt.legend(fontsize=12, loc="upper right")
    plt.tight_layout()
    save_path = os.path.join(save_dir, "lyapunov_blocks.png")
    plt.savefig(save_path, dpi=300)
    plt.close()
    logging.info(f"Saved Lyapunov plot: {save_path}")
    return save_path


def plot_direction_series(series: pd.DataFrame, save_dir: str) -> Optional[str]:
    if series.empty:
        logging.warning("Empty direction series, nothing to plot.")
        return None
    os.makedirs(save_dir, exist_ok=True)
    sns.set_theme(style="whitegrid")

    fig, axes = plt.subplots(2, 1, figsize=(12, 8), sharex=True)
    sns.lineplot(data=series, x="n", y="lognorm", hue="stream" if "stream" in series else None, ax=axes[0], legend=False)
    axes[0].set_ylabel("log ‖product‖", fontsize=14)
    sns.lineplot(data=series, x="n", y="defect", hue="stream" if "stream" in series else None, ax=axes[1], legend=False)
    axes[1].set_yscale("log")
    axes[1].set_ylabel("rank-one defect", fontsize=14)
    axes[1].set_xlabel("Letters", fontsize=14)
    fig.suptitle("Normalized Reflection Products", fontsize=16, fontweight="bold")
    plt.tight_layout()
    save_path = os.path.join(save_dir, "direction_series.png")
    plt.savefig(save_path, dpi=300)
    plt.close()
    logging.info(f"Saved direction plot: {save_path}")
    return save_path


def plot_moment_comparison(
    empirical: Dict[str, float], reference: Dict[str, float], reference_se: Dict[str, float], save_dir: str
) -> str:
    os.makedirs(save_dir, exist_ok=True)
    sns.set_theme(style="whitegrid")

    rows = []
    for name in MOMENT_NAMES:
        rows.append({"moment": name, "source": "walk", "value": empirical[name]})
        rows.append({"moment": name, "source": "symplectic", "value": reference[name]})
    df = pd.DataFrame(rows)

    plt.figure(figsize=(12, 6))
    sns.barplot(data=df, x="moment", y="value", hue="source")
    ref = [reference[n] for n in MOMENT_NAMES]
    err = [4 * reference_se[n] for n in MOMENT_NAMES]
    plt.errorbar(np.arange(len(MOMENT_NAMES)) + 0.2, ref, yerr=err, fmt="none", ecolor="black", capsize=4)
    plt.title("Empirical vs Symplectic Moments (±4σ)", fontsize=16, fontweight="bold")
    plt.xlabel("Moment", fontsize=14)
    plt.ylabel("Value", fontsize=14)
    plt.tight_layout()
    save_path = os.path.join(save_dir, "moment_comparison.png")
    plt.savefig(save_path, dpi=300)
    plt.close()
    logging.info(f"Saved moment comparison: {save_path}")
    return save_path


def plot_visit_histogram(frequencies: Sequence[float], expected: Sequence[float], save_dir: str) -> str:
    os.makedirs(save_dir, exist_ok=True)
    sns.set_theme(style="whitegrid")

    idx = np.arange(len(frequencies))
    plt.figure(figsize=(10, 6))
    sns.barplot(x=idx, y=list(frequencies), color="tab:blue", alpha=0.7, label="visits")
    plt.scatter(idx, expected, color="tab:red", zorder=3, label="stationary")
    plt.title("Visit Frequencies on the Finite Orbit", fontsize=16, fontweight="bold")
    plt.xlabel("Orbit point", fontsize=14)
    plt.ylabel("Frequency", fontsize=14)
    plt.legend(fontsize=12)
    plt.tight_layout()
    save_path = os.path.join(save_dir, "visit_histogram.png")
    plt.savefig(save_path, dpi=300)
    plt.close()
    logging.info(f"Saved visit histogram: {save_path}")
    return save_path


def plot_growth_slacks(table: pd.DataFrame, save_dir: str) -> str:
    os.makedirs(save_dir, exist_ok=True)
    sns.set_theme(style="whitegrid")

    plt.figure(figsize=(10, 6))
    sns.barplot(data=table, x="check", y="worst_slack", color="tab:green")
    plt.axhline(0.0, color="black", linewidth=1)
    plt.title("Worst Slack per Growth Check", fontsize=16, fontweight="bold")
    plt.xlabel("Check", fontsize=14)
    plt.ylabel("Slack", fontsize=14)
    plt.tight_layout()
    save_path = os.path.join(save_dir, "growth_slacks.png")
    plt.savefig(save_path, dpi=300)
    plt.close()
    logging.info(f"Saved slack plot: {save_path}")
    return save_path
