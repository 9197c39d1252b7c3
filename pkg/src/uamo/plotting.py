"""Static SVG renderings of band structures and butterflies.

Figures are drawn with the Agg backend and saved with a fixed hash salt and no date
stamp, so that the same input always produces the same bytes.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

SVG_SALT = "uamo"
SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig, path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def butterfly_figure(records, title: str = ""):
    """Vertical segment at ``x = p/q`` for every band ``[zeta_lo, zeta_hi]``.

    ``records`` yields ``(p, q, arcs)``.  Arcs that wrap past ``2 pi`` are split.
    """
    segs = []
    for p, q, arcs in records:
        x = p / q
        for a in arcs:
            lo, hi = a.lo, a.hi
            if hi <= math.tau:
                segs.append([(x, lo), (x, hi)])
            else:
                segs.append([(x, lo), (x, math.tau)])
                segs.append([(x, 0.0), (x, hi - math.tau)])
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    ax.add_collection(LineCollection(segs, linewidths=0.6, colors="k"))
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(0.0, math.tau)
    ax.set_xlabel("frequency p/q")
    ax.set_ylabel("spectral angle (rad)")
    if title:
        ax.set_title(title)
    return fig


def bands_figure(arcs, title: str = ""):
    """Band arcs drawn on the unit circle."""
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    t = [2.0 * math.pi * k / 720 for k in range(721)]
    ax.plot([math.cos(s) for s in t], [math.sin(s) for s in t], color="0.8", lw=0.8)
    for a in arcs:
        m = max(2, int(a.length / (2.0 * math.pi) * 720) + 2)
        ts = [a.lo + (a.hi - a.lo) * k / (m - 1) for k in range(m)]
        ax.plot([math.cos(s) for s in ts], [math.sin(s) for s in ts], color="k", lw=2.5)
    ax.set_aspect("equal")
    ax.set_xlim(-1.15, 1.15)
    ax.set_ylim(-1.15, 1.15)
    if title:
        ax.set_title(title)
    return fig


def save_butterfly_svg(records, path, title: str = "") -> None:
    _save(butterfly_figure(records, title), path)


def save_bands_svg(arcs, path, title: str = "") -> None:
    _save(bands_figure(arcs, title), path)
