"""Plain-file formats: depth CSV/PGM, occupancy-grid PGM, waypoint and
offset-table CSV. All writers are atomic (tmp file + rename)."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .geometry import DepthImage, OccupancyGrid

_SCALE_COMMENT = "# depth-scale-mm:"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_depth_csv(depth: DepthImage, path: str | Path) -> None:
    """Row-major CSV of depth in meters, one image row per line."""
    lines = [",".join(repr(float(v)) for v in row) for row in depth.values]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_depth_csv(path: str | Path) -> DepthImage:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            rows.append([float(tok) for tok in line.split(",")])
    return DepthImage(np.array(rows, dtype=float))


def save_depth_pgm(depth: DepthImage, path: str | Path,
                   scale_mm: float = 1.0) -> None:
    """16-bit binary PGM; stored value * scale_mm = depth in millimeters.
    Invalid (non-positive) depth is stored as 0."""
    if scale_mm <= 0:
        raise ValueError("scale_mm must be positive")
    mm = np.where(depth.values > 0.0, depth.values * 1000.0 / scale_mm, 0.0)
    vals = np.clip(np.rint(mm), 0, 65535).astype(">u2")
    header = (f"P5\n{_SCALE_COMMENT} {scale_mm!r}\n"
              f"{depth.width} {depth.height}\n65535\n")
    atomic_write_bytes(path, header.encode("ascii") + vals.tobytes())


def _parse_pgm_header(data: bytes) -> tuple[str, list[int], float, int]:
    """Return (magic, [width, height, maxval], scale_mm, data offset)."""
    scale_mm = 1.0
    tokens: list[int] = []
    i = 0
    magic = data[:2].decode("ascii")
    if magic not in ("P2", "P5"):
        raise ValueError(f"not a PGM file (magic {magic!r})")
    i = 2
    while len(tokens) < 3:
        if i >= len(data):
            raise ValueError("truncated PGM header")
        c = data[i:i + 1]
        if c == b"#":
            eol = data.find(b"\n", i)
            eol = len(data) if eol < 0 else eol
            comment = data[i:eol].decode("ascii", "replace")
            if comment.startswith(_SCALE_COMMENT):
                scale_mm = float(comment[len(_SCALE_COMMENT):].strip())
            i = eol + 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(int(data[i:j]))
            i = j
    return magic, tokens, scale_mm, i + 1  # single whitespace after maxval


def load_depth_pgm(path: str | Path) -> DepthImage:
    data = Path(path).read_bytes()
    magic, (width, height, maxval), scale_mm, offset = _parse_pgm_header(data)
    if magic == "P5":
        dtype = ">u2" if maxval > 255 else np.uint8
        vals = np.frombuffer(data, dtype=dtype, count=width * height,
                             offset=offset).astype(float)
    else:
        vals = np.array(data[offset - 1:].split()[:width * height], dtype=float)
    depth_m = vals.reshape(height, width) * scale_mm / 1000.0
    return DepthImage(depth_m)


def save_grid_pgm(grid: OccupancyGrid, path: str | Path) -> None:
    """8-bit binary PGM for inspection: 0 = free, 255 = occupied. Image rows
    run along grid j (increasing y), columns along grid i (increasing x)."""
    img = (grid.cells.T.astype(np.uint8)) * 255
    header = f"P5\n{grid.cols} {grid.rows}\n255\n"
    atomic_write_bytes(path, header.encode("ascii") + img.tobytes())


def save_waypoints_csv(waypoints, path: str | Path) -> None:
    """One `x,y` row per waypoint, with header."""
    lines = ["x,y"] + [f"{repr(float(x))},{repr(float(y))}" for x, y in waypoints]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_waypoints_csv(path: str | Path) -> list[tuple[float, float]]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.lower().startswith("x"):
            continue
        x, y = line.split(",")[:2]
        out.append((float(x), float(y)))
    return out


def save_offset_csv(samples, path: str | Path) -> None:
    """Offset-model table rows (z, dx, dz) with the mandated `z,dx,dz` header."""
    lines = ["z,dx,dz"]
    for z, dx, dz in samples:
        lines.append(f"{repr(float(z))},{repr(float(dx))},{repr(float(dz))}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_offset_csv(path: str | Path) -> list[tuple[float, float, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.lower().startswith("z"):
            continue
        z, dx, dz = line.split(",")[:3]
        rows.append((float(z), float(dx), float(dz)))
    return rows
