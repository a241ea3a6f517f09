"""Mesh and sample export for surface grids."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = ["write_obj", "write_surface_csv", "read_obj_vertices", "grid_faces"]


def grid_faces(nt: int, ns: int) -> np.ndarray:
    """1-based triangle indices, two per grid quad, for row-major vertices."""
    faces = []
    for i in range(nt - 1):
        for j in range(ns - 1):
            a = i * ns + j + 1
            b = a + ns
            faces.append((a, b, b + 1))
            faces.append((a, b + 1, a + 1))
    return np.array(faces, dtype=int).reshape(-1, 3)


def write_obj(points: np.ndarray, path) -> int:
    """Write an ``(nt, ns, m)`` grid with ``m <= 3`` as a Wavefront OBJ; returns the vertex count.

    Coordinates are printed with 9 significant digits; ``m < 3`` is padded
    with zeros.
    """
    pts = np.asarray(points, float)
    nt, ns, m = pts.shape
    if m > 3:
        raise ValueError("OBJ export needs m <= 3; use CSV")
    if m < 3:
        pts = np.concatenate([pts, np.zeros((nt, ns, 3 - m))], axis=2)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# tangent surface grid {nt} x {ns}\n")
        for p in pts.reshape(-1, 3):
            fh.write("v %.9g %.9g %.9g\n" % tuple(p))
        for f in grid_faces(nt, ns):
            fh.write("f %d %d %d\n" % tuple(f))
    return nt * ns


def write_surface_csv(t: np.ndarray, s: np.ndarray, points: np.ndarray, path) -> int:
    """Write rows ``t, s, x1..xm`` in row-major grid order; returns the row count."""
    pts = np.asarray(points, float)
    nt, ns, m = pts.shape
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "s"] + [f"x{k + 1}" for k in range(m)])
        for i in range(nt):
            for j in range(ns):
                w.writerow([f"{t[i]:.17g}", f"{s[j]:.17g}"] + [f"{v:.17g}" for v in pts[i, j]])
    return nt * ns


def read_obj_vertices(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        if line.startswith("v "):
            rows.append([float(v) for v in line.split()[1:4]])
    return np.array(rows)
