"""SVG figures for the report command (matplotlib, Agg backend)."""

from __future__ import annotations

import io
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .formats import atomic_write  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0

STYLE = {
    "font.size": 9,
    "font.family": "sans-serif",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "lines.linewidth": 1.4,
    "svg.hashsalt": "funcgan",
    "svg.fonttype": "none",
}


def _figure(width=5.0):
    return plt.figure(figsize=(width, width * GOLDEN))


def _save(fig, path):
    buf = io.BytesIO()
    # no date metadata, so identical data gives identical bytes
    fig.savefig(buf, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return atomic_write(path, buf.getvalue())


def decay_plot(path, curves, title="Convergence of |u|_mu"):
    """``curves``: iterable of ``(label, times, norms)``, drawn on a log axis."""
    with plt.rc_context(STYLE):
        fig = _figure()
        ax = fig.add_subplot(1, 1, 1)
        for label, t, y in curves:
            y = np.asarray(y, dtype=float)
            ax.semilogy(t, np.where(y > 0, y, np.nan), label=label)
        ax.set_xlabel("t")
        ax.set_ylabel("|u(t)|")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def xi_chart(path, series, xlabel="parameter", title="Estimated xi_min"):
    """Line chart of ``xi_hat`` against a numeric parameter, one line per series.

    ``series`` maps a label to ``(params, values)``. A series with a single
    point is drawn as a bar group instead.
    """
    with plt.rc_context(STYLE):
        fig = _figure()
        ax = fig.add_subplot(1, 1, 1)
        singles = {k: v for k, v in series.items() if len(v[0]) == 1}
        for label, (x, y) in series.items():
            if label in singles:
                continue
            order = np.argsort(x)
            ax.plot(np.asarray(x)[order], np.asarray(y)[order], marker="o", label=label)
        if singles:
            xs = np.arange(len(singles))
            ax.bar(xs, [v[1][0] for v in singles.values()], width=0.6, alpha=0.6)
            if len(singles) == len(series):
                ax.set_xticks(xs, list(singles), rotation=30, ha="right")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("xi_hat")
        ax.set_title(title)
        if len(series) > len(singles):
            ax.legend()
        return _save(fig, path)


def spectrum_plot(path, xis, title="Spectrum of -Delta_mu"):
    with plt.rc_context(STYLE):
        fig = _figure()
        ax = fig.add_subplot(1, 1, 1)
        ax.plot(np.arange(len(xis)), xis, "o")
        ax.set_xlabel("index")
        ax.set_ylabel("xi")
        ax.set_title(title)
        return _save(fig, path)
