import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tensemap.plots import (emit_branch_plots, emit_rotation_grids, emit_topdown_arrows,
                            read_grid, rotation_grids)
from tensemap.repertoire import Archive, Behavior, ParameterSet

SVG = "{http://www.w3.org/2000/svg}"
GRID_NAMES = ["grid_psi_-180_-120.csv", "grid_psi_-120_-60.csv", "grid_psi_-60_0.csv",
              "grid_psi_0_60.csv", "grid_psi_60_120.csv", "grid_psi_120_180.csv"]


def filled_archive(n=300, seed=0) -> Archive:
    rng = np.random.default_rng(seed)
    archive = Archive()
    for i in range(n):
        b = Behavior(*rng.uniform(-400, 400, 2), rng.uniform(-180, 180))
        archive.offer(ParameterSet(*rng.integers(0, 256, 3)), b.quantized(3), i, "mutation")
    return archive


def arrows(svg_path):
    root = ET.parse(svg_path).getroot()
    return root, root.findall(f".//{SVG}g[@class='arrow']")


def test_empty_archive(tmp_path):
    paths = emit_rotation_grids(Archive(), tmp_path)
    assert sorted(p.name for p in paths) == sorted(GRID_NAMES)
    for p in paths:
        lines = p.read_text().splitlines()
        assert lines == [","* 11] * 12
    svg, csv_path = emit_topdown_arrows(Archive(), tmp_path / "a.svg")
    root, found = arrows(svg)
    assert found == []
    assert root.find(f".//{SVG}g[@id='axes']") is not None
    assert csv_path.read_text() == "dx_mm,dy_mm,dpsi_deg,fitness\n"


def test_single_elite_lands_in_its_cell(tmp_path):
    archive = Archive()
    archive.offer(ParameterSet(100, 100, 100), Behavior(50, 25, 0), 0, "shared_random")
    emit_rotation_grids(archive, tmp_path)
    grid = read_grid(tmp_path / "grid_psi_0_60.csv")
    assert grid[6][6] == pytest.approx(0.208)
    assert sum(c is not None for row in grid for c in row) == 1
    row = (tmp_path / "grid_psi_0_60.csv").read_text().splitlines()[6]
    assert row.split(",")[6] == "0.208"
    for name in GRID_NAMES:
        if name != "grid_psi_0_60.csv":
            assert all(c is None for r in read_grid(tmp_path / name) for c in r)


def test_grids_match_archive():
    archive = filled_archive()
    grids = rotation_grids(archive)
    filled = sum(c is not None for cells in grids.values() for row in cells for c in row)
    assert filled == len(archive)
    for idx, elite in archive.items():
        lo = -180 + 60 * idx.ipsi
        assert grids[f"grid_psi_{lo}_{lo + 60}.csv"][idx.iy][idx.ix] == elite.fitness


def test_arrow_count_and_csv(tmp_path):
    archive = filled_archive()
    svg, csv_path = emit_topdown_arrows(archive, tmp_path / "arrows.svg")
    _, found = arrows(svg)
    assert len(found) == len(archive)
    with csv_path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(archive)
    got = sorted((float(r["dx_mm"]), float(r["dy_mm"]), float(r["dpsi_deg"])) for r in rows)
    assert got == sorted(e.behavior.as_tuple() for e in archive.elites())


def test_arrow_transform(tmp_path):
    archive = Archive()
    archive.offer(ParameterSet(100, 100, 100), Behavior(240, 0, 40), 0, "mutation")
    root, found = arrows(emit_topdown_arrows(archive, tmp_path / "a.svg")[0])
    assert found[0].get("transform") == "translate(240.000,0.000) rotate(40.000)"
    # world group flips y so +y is up and positive yaw turns counter-clockwise on screen
    assert root.find(f"{SVG}g[@id='world']").get("transform") == "scale(1,-1)"
    title = found[0].find(f"{SVG}title").text
    assert "yaw=-40.000" in title
    _, found = arrows(emit_topdown_arrows(archive, tmp_path / "b.svg",
                                          clockwise_labels=False)[0])
    assert "yaw=40.000" in found[0].find(f"{SVG}title").text


def test_branch_plots_are_well_formed(tmp_path):
    paths = emit_branch_plots(filled_archive(50), tmp_path / "mutation")
    assert len(paths) == 8
    for p in paths:
        if p.suffix == ".svg":
            assert ET.parse(p).getroot().tag == f"{SVG}svg"
        else:
            with p.open() as fh:
                assert list(csv.reader(fh))
