"""Point cloud file I/O.

Canonical interchange is text XYZ: one point per line, three decimal
numbers, whitespace-separated. Values are written with shortest
round-trip float formatting, so write -> read is bit exact. ASCII PLY
(vertex-only) is supported read-only.
"""

from __future__ import annotations

import numpy as np


class ParseError(ValueError):
    pass


class UnsupportedFeatureError(ValueError):
    pass


def write_xyz(points: np.ndarray, path):
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w") as f:
        for x, y, z in pts.tolist():  # shortest round-trip repr of plain floats
            f.write(f"{x!r} {y!r} {z!r}\n")


def read_xyz(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if len(fields) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 numbers, got {len(fields)}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no points found")
    return np.array(rows, dtype=np.float64)


def read_ply(path) -> np.ndarray:
    """ASCII PLY subset: a single vertex element with float x, y, z properties."""
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: missing 'ply' magic line")
    n_vertices = None
    in_vertex_element = False
    vertex_props: list[str] = []
    body_start = None
    for i, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if line.startswith("comment") or not line:
            continue
        if line.startswith("format"):
            if line != "format ascii 1.0":
                raise UnsupportedFeatureError(f"{path}: only 'format ascii 1.0' is supported")
        elif line.startswith("element"):
            parts = line.split()
            if parts[1] == "vertex":
                n_vertices = int(parts[2])
                in_vertex_element = True
            else:
                raise UnsupportedFeatureError(f"{path}: unsupported element {parts[1]!r}")
        elif line.startswith("property"):
            if in_vertex_element:
                vertex_props.append(line.split()[-1])
        elif line == "end_header":
            body_start = i
            break
        else:
            raise ParseError(f"{path}:{i}: unexpected header line {line!r}")
    if body_start is None or n_vertices is None:
        raise ParseError(f"{path}: incomplete PLY header")
    if vertex_props[:3] != ["x", "y", "z"]:
        raise UnsupportedFeatureError(
            f"{path}: vertex properties must start with x, y, z (got {vertex_props})")
    rows = []
    body = [ln for ln in lines[body_start:] if ln.strip()]
    if len(body) < n_vertices:
        raise ParseError(f"{path}: expected {n_vertices} vertex rows, found {len(body)}")
    for offset in range(n_vertices):
        fields = body[offset].split()
        if len(fields) < 3:
            raise ParseError(f"{path}: vertex row {offset + 1} has fewer than 3 values")
        rows.append([float(v) for v in fields[:3]])
    return np.array(rows, dtype=np.float64)


def read_cloud(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".ply"):
        return read_ply(path)
    return read_xyz(path)
