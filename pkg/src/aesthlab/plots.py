"""Static SVG figures for the report command.

Output is reproducible: the SVG hash salt is fixed and the date stamp is dropped.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "aesthlab", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def bar_chart(path, labels, values, xlabel):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 0.3 * len(labels) + 1))
        y = np.arange(len(labels))[::-1]
        ax.barh(y, values, color="#4477aa")
        ax.set_yticks(y, labels)
        ax.set_xlabel(xlabel)
        _save(fig, path)


def scatter(path, x, y, xlabel, ylabel):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 3.5))
        ax.scatter(x, y, s=6, alpha=0.6, color="#4477aa")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        _save(fig, path)


def distribution(path, dist):
    with plt.rc_context(_RC):
        names = list(dist.feature_names)
        fig, ax = plt.subplots(figsize=(6, 0.3 * len(names) + 1))
        y = np.arange(len(names))[::-1]
        left = np.zeros(len(names))
        for counts, label, colour in ((dist.negative, "negative", "#cc6677"), (dist.null, "null", "#bbbbbb"),
                                      (dist.positive, "positive", "#117733")):
            ax.barh(y, counts, left=left, label=label, color=colour)
            left += np.asarray(counts, dtype=float)
        ax.set_yticks(y, names)
        ax.legend(loc="lower right")
        _save(fig, path)


def beeswarm(path, names, phis, X=None, seed=0):
    """SHAP summary: one row per feature ordered by mean |phi|, points jittered
    vertically and coloured by the (min-max scaled) feature value when known."""
    phis = np.asarray(phis, dtype=float)
    order = np.argsort(-np.abs(phis).mean(0), kind="stable")
    rng = np.random.default_rng(seed)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 0.35 * len(names) + 1))
        for row, j in enumerate(order):
            y = len(order) - 1 - row + rng.uniform(-0.3, 0.3, size=phis.shape[0])
            colour = "#4477aa"
            if X is not None:
                col = X[:, j]
                span = col.max() - col.min()
                colour = (col - col.min()) / span if span > 0 else np.full(col.size, 0.5)
            ax.scatter(phis[:, j], y, s=5, c=colour, cmap="coolwarm", vmin=0, vmax=1)
        ax.axvline(0.0, color="#999999", lw=0.5)
        ax.set_yticks(np.arange(len(order))[::-1], [names[j] for j in order])
        ax.set_xlabel("SHAP value")
        _save(fig, path)


def dependence(path, series, xname, cname):
    pts = np.asarray(series.points, dtype=float).reshape(-1, 3)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        sc = ax.scatter(pts[:, 0], pts[:, 1], c=pts[:, 2], s=6, cmap="coolwarm")
        fig.colorbar(sc, ax=ax, label=cname)
        ax.set_xlabel(xname)
        ax.set_ylabel(f"SHAP value for {xname}")
        _save(fig, path)


def heatmap(path, names, matrix):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(0.4 * len(names) + 2, 0.4 * len(names) + 1.5))
        im = ax.imshow(matrix, cmap="viridis")
        ax.set_xticks(range(len(names)), names, rotation=90)
        ax.set_yticks(range(len(names)), names)
        fig.colorbar(im, ax=ax, label="mean |interaction|")
        _save(fig, path)
