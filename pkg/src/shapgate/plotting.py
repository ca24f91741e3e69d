"""
Figure rendering for reports.

All figures are written as SVG with fixed hash salt and no date metadata, so
repeated runs produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import StorageError  # noqa: E402

RC = {
    "svg.hashsalt": "shapgate",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

POLICY_STYLE = {"ProbOnly": "--", "ShapOnly": "-", "Combined": ":"}
KIND_COLOR = {"harmonic": "tab:blue", "random": "tab:red"}
CHANNEL_COLOR = {"E": "tab:green", "N": "tab:orange", "Z": "tab:purple"}


def new_figure(width=6.4, height=4.0, nrows=1, ncols=1, **kw):
    with plt.rc_context(RC):
        return plt.subplots(nrows, ncols, figsize=(width, height), **kw)


def save_figure(fig, path) -> Path:
    path = Path(path)
    try:
        with plt.rc_context(RC):
            fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise StorageError(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def curve_id(kind: str, policy: str) -> str:
    return f"curve-{kind}-{policy}"


def plot_f1_vs_amplitude(summary, path, size=(6.4, 4.0), amp_range=None, f1_range=(0.0, 1.02)):
    """One line per (noise kind, policy) with a shaded mean +/- sd band.

    Each line is emitted as an SVG group whose id is ``curve_id(kind, policy)``.
    """
    fig, ax = new_figure(*size)
    pairs = []
    for row in summary:
        if (row["kind"], row["policy"]) not in pairs:
            pairs.append((row["kind"], row["policy"]))
    for kind, policy in pairs:
        rows = sorted((r for r in summary if r["kind"] == kind and r["policy"] == policy),
                      key=lambda r: r["amplitude"])
        amp = np.array([r["amplitude"] for r in rows])
        mean = np.array([r["f1_mean"] for r in rows])
        sd = np.array([r["f1_sd"] for r in rows])
        color = KIND_COLOR.get(kind, "k")
        band = ax.fill_between(amp, mean - sd, mean + sd, color=color, alpha=0.15, linewidth=0)
        band.set_gid(f"band-{kind}-{policy}")
        (line,) = ax.plot(amp, mean, POLICY_STYLE.get(policy, "-"), color=color, marker="o",
                          markersize=3, label=f"{kind} / {policy}")
        line.set_gid(curve_id(kind, policy))
    ax.set_xlabel("relative noise amplitude")
    ax.set_ylabel("F1 (test)")
    if amp_range:
        ax.set_xlim(*amp_range)
    if f1_range:
        ax.set_ylim(*f1_range)
    ax.legend(loc="lower left", frameon=False)
    fig.tight_layout()
    return save_figure(fig, path)


def plot_gradcam_overlay(samples, heatmap, path, sample_rate=100.0, picks=None,
                         channel_names=("E", "N", "Z"), title=None):
    """Waveforms with the (display-normalized) heatmap shaded behind them."""
    samples = np.asarray(samples)
    h = np.asarray(heatmap, dtype=np.float64)
    h = h / h.max() if h.max() > 0 else h
    t = np.arange(samples.shape[1]) / sample_rate
    fig, axes = new_figure(7.0, 4.5, nrows=3, sharex=True)
    for ax, trace, name in zip(axes, samples, channel_names):
        lim = max(np.abs(trace).max(), 1e-12) * 1.1
        ax.fill_between(t, -lim, -lim + 2 * lim * h, color="tab:red", alpha=0.3, linewidth=0)
        ax.plot(t, trace, color="k", linewidth=0.5)
        ax.set_ylim(-lim, lim)
        ax.set_ylabel(name)
        if picks is not None and picks.has_event:
            ax.axvline(picks.p_time / sample_rate, color="tab:blue", linewidth=0.8)
            ax.axvline(picks.s_time / sample_rate, color="tab:green", linewidth=0.8)
    axes[-1].set_xlabel("time (s)")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    return save_figure(fig, path)


def plot_abs_phi_violins(stats_list, path):
    """Violin panels of |phi| per channel, one panel per (class, population)."""
    n = len(stats_list)
    fig, axes = new_figure(3.0 * max(n, 1), 3.0, ncols=max(n, 1), squeeze=False)
    for ax, st in zip(axes[0], stats_list):
        data = [st.abs_phi[:, j] for j in range(3)]
        parts = ax.violinplot(data, showmeans=True)
        for body, ch in zip(parts["bodies"], ("E", "N", "Z")):
            body.set_facecolor(CHANNEL_COLOR[ch])
        ax.set_xticks([1, 2, 3], ["E", "N", "Z"])
        ax.set_title(f"{st.cls}-class, {st.population}")
        ax.set_ylabel("|phi|")
    fig.tight_layout()
    return save_figure(fig, path)
