"""Optional PNG rendering of figure series (``--plot``).

A series is a mapping with keys panel, name, x, y, xlabel, ylabel and style
("line" or "scatter").  Series sharing a panel are drawn on one axes.
"""

from __future__ import annotations

import io
import math


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render(title, series, columns=2, panel_size=(4.2, 3.2)) -> bytes:
    """PNG bytes for ``series``; raises ValueError when there is nothing to draw."""
    if not series:
        raise ValueError("no series to plot")
    plt = _pyplot()
    panels = list(dict.fromkeys(s["panel"] for s in series))
    cols = min(columns, len(panels))
    rows = math.ceil(len(panels) / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(panel_size[0] * cols, panel_size[1] * rows),
                             squeeze=False)
    for ax, panel in zip(axes.flat, panels):
        members = [s for s in series if s["panel"] == panel]
        for s in members:
            if s.get("style") == "scatter":
                ax.plot(s["x"], s["y"], "o", ms=3, label=s["name"])
            else:
                ax.plot(s["x"], s["y"], lw=1.2, label=s["name"])
        ax.set_title(panel, fontsize=9)
        ax.set_xlabel(members[0]["xlabel"])
        ax.set_ylabel(members[0]["ylabel"])
        if len(members) > 1:
            ax.legend(fontsize=6, frameon=False)
    for ax in list(axes.flat)[len(panels):]:
        ax.set_visible(False)
    fig.suptitle(title)
    fig.tight_layout()
    buf = io.BytesIO()
    # fixed metadata keeps the bytes reproducible
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()
