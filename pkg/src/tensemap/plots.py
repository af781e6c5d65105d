"""Per-rotation fitness grids (CSV) and the top-down arrow map (SVG + CSV).

Stored yaw is counter-clockwise positive. The SVG draws arrows at their true
orientation; only its text labels switch to clockwise-positive when
``clockwise_labels`` is set.
"""
from __future__ import annotations

import csv
import xml.etree.ElementTree as ET
from pathlib import Path

from .repertoire import Archive, BinIndex

ARROW_HEADER = ["dx_mm", "dy_mm", "dpsi_deg", "fitness"]
GREEN = "#2e8b3a"


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


def _f3(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def grid_filename(lo: float, hi: float) -> str:
    return f"grid_psi_{_num(lo)}_{_num(hi)}.csv"


def rotation_grids(archive: Archive) -> dict[str, list[list[float | None]]]:
    """One ``ny x nx`` fitness matrix per yaw bin (row = y bin, column = x bin)."""
    g = archive.geometry
    grids = {}
    for ipsi in range(g.npsi):
        lo, hi = g.interval(BinIndex(0, 0, ipsi))[2]
        cells: list[list[float | None]] = [[None] * g.nx for _ in range(g.ny)]
        for idx, elite in archive.items():
            if idx.ipsi == ipsi:
                cells[idx.iy][idx.ix] = elite.fitness
        grids[grid_filename(lo, hi)] = cells
    return grids


def emit_rotation_grids(archive: Archive, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, cells in rotation_grids(archive).items():
        path = out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in cells:
                w.writerow(["" if c is None else _f3(c) for c in row])
        paths.append(path)
    return paths


def read_grid(path) -> list[list[float | None]]:
    with Path(path).open(newline="") as fh:
        return [[float(c) if c else None for c in row] for row in csv.reader(fh)]


def _arrow_svg(archive: Archive, clockwise_labels: bool) -> ET.Element:
    g = archive.geometry
    (x0, x1), (y0, y1) = g.x_bounds, g.y_bounds
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     viewBox=f"{_num(x0)} {_num(y0)} {_num(x1 - x0)} {_num(y1 - y0)}",
                     width="720", height="720")
    ET.SubElement(svg, "rect", x=_num(x0), y=_num(y0), width=_num(x1 - x0),
                  height=_num(y1 - y0), fill="white", stroke="black")
    # data frame: +x right, +y up
    world = ET.SubElement(svg, "g", id="world", transform="scale(1,-1)")
    grid = ET.SubElement(world, "g", id="grid", stroke="#dddddd")
    wx, wy, _ = g.widths
    for i in range(1, g.nx):
        x = x0 + i * wx
        ET.SubElement(grid, "line", x1=_num(x), y1=_num(y0), x2=_num(x), y2=_num(y1))
    for i in range(1, g.ny):
        y = y0 + i * wy
        ET.SubElement(grid, "line", x1=_num(x0), y1=_num(y), x2=_num(x1), y2=_num(y))
    axes = ET.SubElement(world, "g", id="axes", stroke="black")
    ET.SubElement(axes, "line", x1=_num(x0), y1="0", x2=_num(x1), y2="0")
    ET.SubElement(axes, "line", x1="0", y1=_num(y0), x2="0", y2=_num(y1))

    arrows = ET.SubElement(world, "g", id="arrows", fill=GREEN)
    sign = -1.0 if clockwise_labels else 1.0
    for elite in archive.elites():
        b = elite.behavior
        a = ET.SubElement(arrows, "g", {"class": "arrow",
                                        "transform": f"translate({_f3(b.dx)},{_f3(b.dy)}) "
                                                     f"rotate({_f3(b.dpsi)})",
                                        "fill-opacity": f"{0.35 + 0.65 * min(elite.fitness / 3, 1):.3f}"})
        ET.SubElement(a, "title").text = (f"dx={_f3(b.dx)} mm, dy={_f3(b.dy)} mm, "
                                          f"yaw={_f3(sign * b.dpsi)} deg, fitness={_f3(elite.fitness)}")
        ET.SubElement(a, "polygon", points="-16,-3 6,-3 6,-9 18,0 6,9 6,3 -16,3")

    labels = ET.SubElement(svg, "g", id="labels", fill="black")
    labels.set("font-size", "14")
    ET.SubElement(labels, "text", x=_num(x1 - 90), y="-6").text = "x (mm)"
    ET.SubElement(labels, "text", x="6", y=_num(y0 + 18)).text = "y (mm)"
    ET.SubElement(labels, "text", x=_num(x0 + 6), y=_num(y1 - 8)).text = (
        "yaw: clockwise positive" if clockwise_labels else "yaw: counter-clockwise positive")
    return svg


def emit_topdown_arrows(archive: Archive, svg_path, csv_path=None,
                        clockwise_labels: bool = True) -> tuple[Path, Path]:
    svg_path = Path(svg_path)
    csv_path = svg_path.with_suffix(".csv") if csv_path is None else Path(csv_path)
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    tree = ET.ElementTree(_arrow_svg(archive, clockwise_labels))
    ET.indent(tree)
    tree.write(svg_path, encoding="utf-8", xml_declaration=True)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ARROW_HEADER)
        for e in archive.elites():
            w.writerow([_f3(e.behavior.dx), _f3(e.behavior.dy), _f3(e.behavior.dpsi),
                        _f3(e.fitness)])
    return svg_path, csv_path


def emit_branch_plots(archive: Archive, out_dir) -> list[Path]:
    out = Path(out_dir)
    grids = emit_rotation_grids(archive, out)
    return grids + list(emit_topdown_arrows(archive, out / "arrows.svg", out / "arrows.csv"))
