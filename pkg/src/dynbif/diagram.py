"""Static bifurcation diagram as SVG (lam horizontal, signed V-norm vertical)."""
from __future__ import annotations

import io
from typing import Any

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from dynbif.branch import BranchGraph

DEFAULT_STYLE: dict[str, Any] = {
    "figsize": (7.0, 4.5),
    "branch_color": "#1f4e79",
    "trivial_color": "#444444",
    "tick_color": "#b22222",
    "linewidth": 1.4,
    "title": None,
}


def _runs(mask):
    """Split indices into maximal runs of equal mask value (runs share their end points)."""
    if len(mask) == 0:
        return
    start = 0
    for i in range(1, len(mask)):
        if mask[i] != mask[start]:
            yield start, i, mask[start]
            start = i
    yield start, len(mask) - 1, mask[start]


def render_diagram(graph: BranchGraph, profile=None, style: dict | None = None, path=None) -> bytes:
    """Draw the graph's branches; solid where stable (index 0), dashed otherwise.

    The same graph always gives the same bytes; the SVG id salt and date are pinned.
    """
    st = {**DEFAULT_STYLE, **(style or {})}
    fig = Figure(figsize=st["figsize"])
    FigureCanvasSVG(fig)
    ax = fig.add_subplot(1, 1, 1)
    lo, hi = graph.window
    lw = st["linewidth"]

    # trivial line, styled gap by gap from the profile when one is given
    if profile is not None:
        for (a, b), v in zip(profile.gaps, profile.values):
            stable = v.is_sphere and v.dimension == 0
            ax.plot([a, b], [0.0, 0.0], color=st["trivial_color"], lw=lw, ls="-" if stable else "--")
    else:
        ax.plot([lo, hi], [0.0, 0.0], color=st["trivial_color"], lw=lw)

    for br in graph.branches:
        stable = br.morse == 0
        for i, j, s in _runs(stable):
            ax.plot(br.lams[i:j + 1], br.signed_norms[i:j + 1], color=st["branch_color"], lw=lw,
                    ls="-" if s else "--")
        if br.trivial_hit is not None:
            ax.plot([br.trivial_hit], [0.0], "o", ms=4, color=st["branch_color"])

    for g in graph.upsilon:
        ax.axvline(g, ymin=0.0, ymax=0.03, color=st["tick_color"], lw=1.0)
    ax.plot([graph.gamma], [0.0], "o", ms=5, mfc="white", color=st["tick_color"])
    ax.set_xlim(lo, hi)
    ax.set_xlabel("lambda")
    ax.set_ylabel("signed V-norm")
    if st["title"]:
        ax.set_title(st["title"])
    fig.tight_layout()

    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "dynbif", "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    data = buf.getvalue()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(data)
    return data
