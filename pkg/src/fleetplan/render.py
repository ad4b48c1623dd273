"""Figure and graph-file rendering for plan reports.

All output is deterministic: node positions come from the scenario (circle
layout as fallback), matplotlib's SVG hash salt is pinned, and no timestamps
are embedded, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import cm, colors

matplotlib.rcParams["svg.hashsalt"] = "fleetplan"

PHASES = ("baseline", "p1", "p2")
_SAVEFIG_META = {"Date": None}


class RenderError(ValueError):
    pass


def _positions(report_doc: dict) -> dict[int, tuple[float, float]]:
    nodes = report_doc["scenario"]["nodes"]
    if all("x" in n for n in nodes):
        return {n["id"]: (float(n["x"]), float(n["y"])) for n in nodes}
    ordered = sorted(n["id"] for n in nodes)
    return {
        nid: (math.cos(2 * math.pi * i / len(ordered)), math.sin(2 * math.pi * i / len(ordered)))
        for i, nid in enumerate(ordered)
    }


def _phase_edges(report_doc: dict, phase: str) -> list[dict]:
    phases = report_doc.get("phases", {})
    if phase not in phases:
        raise RenderError(f"report has no phase {phase!r}; available: {sorted(phases)}")
    return phases[phase]["edges"]


def _ratio_colormap(max_ratio: float):
    norm = colors.Normalize(vmin=0.0, vmax=max(2.0, max_ratio))
    return matplotlib.colormaps["turbo"], norm


def render_network(report_doc: dict, phase: str, out_path: str | Path) -> None:
    """Draw the road graph: square nodes, stations filled, edge width by
    capacity, edge color by congestion ratio."""
    edges = _phase_edges(report_doc, phase)
    pos = _positions(report_doc)
    stations = {
        n["id"] for n in report_doc["scenario"]["nodes"] if n.get("charging", False)
    }
    capacities = np.array([e["gamma"] for e in edges], dtype=float)
    ratios = np.array([e["ratio"] for e in edges], dtype=float)
    cmap, norm = _ratio_colormap(float(ratios.max(initial=0.0)))

    fig, ax = plt.subplots(figsize=(7.5, 5.5))
    for e in edges:
        x1, y1 = pos[e["from"]]
        x2, y2 = pos[e["to"]]
        # Offset opposite directions sideways so both stay visible.
        dx, dy = x2 - x1, y2 - y1
        length = math.hypot(dx, dy) or 1.0
        ox, oy = -dy / length * 0.035, dx / length * 0.035
        width = 0.8 + 3.2 * e["gamma"] / capacities.max()
        ax.annotate(
            "",
            xy=(x2 + ox, y2 + oy),
            xytext=(x1 + ox, y1 + oy),
            arrowprops=dict(
                arrowstyle="-|>",
                lw=width,
                color=cmap(norm(e["ratio"])),
                shrinkA=12,
                shrinkB=12,
            ),
        )
    for nid, (x, y) in sorted(pos.items()):
        face = "#4d88ff" if nid in stations else "white"
        ax.scatter([x], [y], marker="s", s=420, c=face, edgecolors="black", zorder=3)
        ax.annotate(str(nid), (x, y), ha="center", va="center", zorder=4, fontsize=9)
    sm = cm.ScalarMappable(norm=norm, cmap=cmap)
    fig.colorbar(sm, ax=ax, label="flow / capacity")
    title = report_doc["scenario"].get("name", "")
    ax.set_title(f"{title} ({phase})" if title else phase)
    ax.set_axis_off()
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata=_SAVEFIG_META)
    plt.close(fig)


def render_congestion_chart(report_doc: dict, out_path: str | Path) -> None:
    """Per-road congestion bars for every computed phase, side by side."""
    phases = [p for p in PHASES if p in report_doc.get("phases", {})]
    if not phases:
        raise RenderError("report contains no phases to chart")
    first = report_doc["phases"][phases[0]]["edges"]
    labels = [f'{e["from"]}-{e["to"]}' for e in first]
    x = np.arange(len(labels))
    width = 0.8 / len(phases)
    fig, ax = plt.subplots(figsize=(max(8.0, 0.45 * len(labels)), 4.0))
    for i, phase in enumerate(phases):
        ratios = [e["ratio"] for e in report_doc["phases"][phase]["edges"]]
        ax.bar(x + (i - (len(phases) - 1) / 2) * width, ratios, width, label=phase)
    ax.axhline(1.0, color="black", lw=0.8, ls="--")
    ax.set_xticks(x, labels, rotation=90, fontsize=7)
    ax.set_ylabel("flow / capacity")
    ax.set_xlabel("road")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata=_SAVEFIG_META)
    plt.close(fig)


def write_dot(report_doc: dict, phase: str, out_path: str | Path) -> None:
    """Graphviz rendering of the same network view."""
    edges = _phase_edges(report_doc, phase)
    stations = {
        n["id"] for n in report_doc["scenario"]["nodes"] if n.get("charging", False)
    }
    ratios = [e["ratio"] for e in edges]
    capacities = [e["gamma"] for e in edges]
    cmap, norm = _ratio_colormap(max(ratios, default=0.0))
    lines = [f'digraph "{phase}" {{', "  node [shape=box];"]
    for n in sorted({n["id"] for n in report_doc["scenario"]["nodes"]}):
        style = ' style=filled fillcolor="#4d88ff"' if n in stations else ""
        lines.append(f'  {n} [label="{n}"{style}];')
    for e in edges:
        rgba = cmap(norm(e["ratio"]))
        hexcol = colors.to_hex(rgba)
        penwidth = 1.0 + 3.0 * e["gamma"] / max(capacities)
        lines.append(
            f'  {e["from"]} -> {e["to"]} [color="{hexcol}" penwidth={penwidth:.2f} '
            f'label="{e["ratio"]:.2f}" fontsize=8];'
        )
    lines.append("}")
    Path(out_path).write_text("\n".join(lines) + "\n")
