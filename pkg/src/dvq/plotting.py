"""Report figures written next to the CSV outputs.

Everything goes through the object-oriented matplotlib API on an Agg
canvas, so no global pyplot state is touched and PNG bytes depend only on
the data.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.backends.backend_agg import FigureCanvasAgg  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 110,
}

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def new_figure(width=6.4, height=None, nrows=1, ncols=1):
    height = height or width * GOLDEN
    with plt.rc_context(STYLE):
        fig = Figure(figsize=(width, height))
        FigureCanvasAgg(fig)
        axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def save(fig, path):
    with plt.rc_context(STYLE):
        fig.tight_layout()
        # no Software/date metadata: reruns give identical bytes
        fig.savefig(path, format="png", metadata={"Software": None})


def correlation_figure(curves, estimates, path, title=""):
    """ln C(r) against ln r, one line per embedding size, fitted windows marked."""
    fig, axes = new_figure(7.0, 3.2, ncols=2)
    ax, ax2 = axes[0]
    cmap = matplotlib.colormaps["viridis"]
    n = max(len(curves), 2)
    for k, (curve, est) in enumerate(zip(curves, estimates)):
        colour = cmap(k / (n - 1))
        ok = curve.counts > 0
        lr, lc = curve.log_r[ok], curve.log_c[ok]
        ax.plot(lr, lc, color=colour, label=f"p={curve.embedding_dim}")
        lo, hi = est.fit_window
        sel = (lr >= lo) & (lr <= hi)
        ax.plot(lr[sel], lc[sel], "o", ms=2, color=colour)
        if lr.size > 1:
            ax2.plot(0.5 * (lr[1:] + lr[:-1]), np.diff(lc) / np.diff(lr), color=colour)
    ax.set_xlabel("ln r")
    ax.set_ylabel("ln C(r)")
    ax.legend(loc="lower right", ncol=2)
    ax2.set_xlabel("ln r")
    ax2.set_ylabel("local slope")
    p = [e.embedding_dim for e in estimates]
    s = [e.slope for e in estimates]
    inset = ax2.inset_axes([0.62, 0.62, 0.35, 0.33])
    inset.plot(p, s, "o-", ms=3, color="k")
    inset.set_xlabel("p", fontsize=7)
    inset.set_ylabel("slope", fontsize=7)
    inset.tick_params(labelsize=6)
    if title:
        fig.suptitle(title)
    save(fig, path)


def forecast_figure(series, ensemble, path, history=200, title=""):
    """Tail of the series with ensemble mean and quantile band."""
    fig, axes = new_figure()
    ax = axes[0][0]
    n = len(series)
    lo = max(0, n - history)
    t = np.arange(lo, n) + 1
    ax.plot(t, series.values[lo:], color="k", label="observed")
    th = np.arange(n, n + ensemble.horizon) + 1
    qs = ensemble.quantiles
    levels = sorted(qs)
    if len(levels) >= 2:
        ax.fill_between(th, qs[levels[0]], qs[levels[-1]], color="tab:blue", alpha=0.25,
                        label=f"{levels[0]:g}-{levels[-1]:g} quantiles")
    ax.plot(th, ensemble.mean, color="tab:blue", label="ensemble mean")
    ax.set_xlabel("t")
    ax.legend(loc="best")
    if title:
        ax.set_title(title)
    save(fig, path)


def gap_figure(series, prediction, path, margin=20, truth=None):
    """The forward/backward means, their corrected versions and the final fill."""
    start, h = prediction.gap
    fig, axes = new_figure()
    ax = axes[0][0]
    lo, hi = max(0, start - margin), min(len(series), start + h + margin)
    t = np.arange(lo, hi) + 1
    ax.plot(t, series.values[lo:hi], color="k", label="known")
    tg = np.arange(start, start + h) + 1
    if truth is not None:
        ax.plot(tg, truth, color="0.5", ls=":", label="true")
    ax.plot(tg, prediction.forward_mean, color="tab:blue", ls="--", label="forward mean")
    if prediction.forward_corrected is not None:
        ax.plot(tg, prediction.forward_corrected, color="tab:blue", label="forward corrected")
    if prediction.backward_mean is not None:
        ax.plot(tg, prediction.backward_mean, color="tab:orange", ls="--", label="backward mean")
        ax.plot(tg, prediction.backward_corrected, color="tab:orange", label="backward corrected")
    ax.plot(tg, prediction.final, color="tab:red", lw=1.6, label="final")
    ax.set_xlabel("t")
    ax.set_title(f"gap {start + 1}-{start + h}")
    ax.legend(loc="best")
    save(fig, path)


def validation_figure(report, path):
    """Best mean MSE per block size, one line per series variant."""
    fig, axes = new_figure()
    ax = axes[0][0]
    groups = {}
    for r in report.best_per_group():
        groups.setdefault(r.config.preprocessing, []).append((r.config.d, r.mean_mse))
    for prep, pts in groups.items():
        d, v = zip(*sorted(pts))
        ax.plot(d, v, "o-", label=prep)
    ax.set_yscale("log")
    ax.set_xlabel("block size d")
    ax.set_ylabel("mean validation MSE")
    ax.legend(loc="best")
    save(fig, path)
