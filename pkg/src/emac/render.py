"""SVG flight-path figures from episode logs."""
from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

from .episode_log import EpisodeLog

PALETTE = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#9a6324"]
# lighter tints for the partition underlay, same order as PALETTE
UNDERLAY = ["#f8c6d0", "#c9ecd0", "#c9d3f5", "#fcdcc0", "#dcc2e8", "#c6f1fc", "#fac4f8", "#e2d1bd"]
CELL = 24


def _center(cell) -> tuple[float, float]:
    r, c = cell
    return c * CELL + CELL / 2, r * CELL + CELL / 2


def render_svg(log: EpisodeLog, show_partition: bool = True) -> ET.Element:
    m = log.size
    side = m * CELL
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(side), height=str(side),
                     viewBox=f"0 0 {side} {side}", version="1.1")
    ET.SubElement(svg, "rect", {"class": "background", "x": "0", "y": "0", "width": str(side),
                                "height": str(side), "fill": "white"})

    partition = log.header.get("partition")
    if show_partition and partition is not None:
        layer = ET.SubElement(svg, "g", {"class": "partition"})
        for r, row in enumerate(partition):
            for c, owner in enumerate(row):
                ET.SubElement(layer, "rect", {"x": str(c * CELL), "y": str(r * CELL), "width": str(CELL),
                                              "height": str(CELL), "fill": UNDERLAY[owner % len(UNDERLAY)]})

    grid = ET.SubElement(svg, "g", {"class": "grid", "stroke": "#cccccc", "stroke-width": "1"})
    for i in range(m + 1):
        ET.SubElement(grid, "line", x1="0", y1=str(i * CELL), x2=str(side), y2=str(i * CELL))
        ET.SubElement(grid, "line", x1=str(i * CELL), y1="0", x2=str(i * CELL), y2=str(side))

    obstacles = ET.SubElement(svg, "g", {"class": "obstacles"})
    for r, c in log.header["obstacles"]:
        ET.SubElement(obstacles, "rect", {"class": "obstacle", "x": str(c * CELL), "y": str(r * CELL),
                                          "width": str(CELL), "height": str(CELL), "fill": "#333333"})

    for i, path in enumerate(log.paths()):
        colour = PALETTE[i % len(PALETTE)]
        agent = ET.SubElement(svg, "g", {"class": "agent", "id": f"agent{i}"})
        points = " ".join(f"{x:g},{y:g}" for x, y in map(_center, path))
        ET.SubElement(agent, "polyline", {"points": points, "fill": "none", "stroke": colour,
                                          "stroke-width": "3", "stroke-linejoin": "round"})
        sx, sy = _center(path[0])
        ET.SubElement(agent, "circle", {"class": "start", "cx": f"{sx:g}", "cy": f"{sy:g}",
                                        "r": str(CELL // 4), "fill": colour})
        ex, ey = _center(path[-1])
        half = CELL // 4
        ET.SubElement(agent, "rect", {"class": "end", "x": f"{ex - half:g}", "y": f"{ey - half:g}",
                                      "width": str(2 * half), "height": str(2 * half),
                                      "fill": "white", "stroke": colour, "stroke-width": "2"})
    return svg


def render_paths(log: EpisodeLog | str | Path, out_path: str | Path, show_partition: bool = True) -> Path:
    """Write the SVG for ``log`` (an :class:`EpisodeLog` or a log file path) to ``out_path``."""
    if not isinstance(log, EpisodeLog):
        log = EpisodeLog.load(log)
    tree = ET.ElementTree(render_svg(log, show_partition))
    out_path = Path(out_path)
    tree.write(out_path, encoding="utf-8", xml_declaration=True)
    return out_path
