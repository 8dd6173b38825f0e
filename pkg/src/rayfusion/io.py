"""File formats: PFM/PGM images, camera text files, label volumes, traces, PLY."""

from __future__ import annotations

import csv
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .grid import BinaryLabeling, LabelField, VoxelGrid

PathLike = Union[str, Path]

VOLUME_MAGIC = b"RAYFVOL\0"
VOLUME_VERSION = 1
FLAG_RELAXED = 1


class FormatError(ValueError):
    pass


# -- images ----------------------------------------------------------------

def read_pfm(path: PathLike) -> np.ndarray:
    """Read a PFM image; returns ``(H, W)`` or ``(H, W, 3)`` with row 0 at the top."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise FormatError(f"{path}: not a PFM file")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if header == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size < width * height * channels:
        raise FormatError(f"{path}: truncated PFM data")
    img = data[: width * height * channels].reshape(height, width, channels)
    img = np.flipud(img).astype(np.float64)
    return img[..., 0] if channels == 1 else img


def write_pfm(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image, dtype="<f4")
    color = image.ndim == 3
    height, width = image.shape[:2]
    with open(path, "wb") as f:
        f.write(b"PF\n" if color else b"Pf\n")
        f.write(f"{width} {height}\n-1.0\n".encode())
        f.write(np.ascontiguousarray(np.flipud(image)).tobytes())


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("PGM output expects a 2-D uint8 image")
    with open(path, "wb") as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        f.write(np.ascontiguousarray(image).tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise FormatError(f"{path}: only 8-bit binary PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1: pos + 1 + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise FormatError(f"{path}: truncated PGM data")
    return pixels.reshape(h, w).copy()


# -- cameras ---------------------------------------------------------------

def read_camera(path: PathLike):
    """Camera text file: 3 rows of K, 3 rows of R, one row t, one row ``width height``."""
    from .ingest import Camera

    rows = [line.split() for line in Path(path).read_text().splitlines()
            if line.strip() and not line.lstrip().startswith("#")]
    if len(rows) != 8:
        raise FormatError(f"{path}: expected 8 non-empty lines, got {len(rows)}")
    try:
        K = np.array(rows[0:3], dtype=float)
        R = np.array(rows[3:6], dtype=float)
        t = np.array(rows[6], dtype=float)
        size = tuple(int(v) for v in rows[7])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if K.shape != (3, 3) or R.shape != (3, 3) or t.shape != (3,) or len(size) != 2:
        raise FormatError(f"{path}: malformed camera")
    return Camera(K, R, t, size)


def write_camera(path: PathLike, camera) -> None:
    lines = [" ".join(f"{v:.17g}" for v in row) for row in camera.intrinsics]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in camera.rotation]
    lines.append(" ".join(f"{v:.17g}" for v in camera.translation))
    lines.append(f"{camera.width} {camera.height}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- label volumes ---------------------------------------------------------

def write_volume(path: PathLike, volume: Union[BinaryLabeling, LabelField]) -> None:
    """Header (magic, version, flags), dims, label count, then the payload.

    Binary labelings store one u8 per voxel, relaxed fields ``V x labels``
    little-endian f32, both in linear voxel order.
    """
    relaxed = isinstance(volume, LabelField)
    dims = volume.grid.dims
    count = volume.num_labels
    with open(path, "wb") as f:
        f.write(VOLUME_MAGIC)
        f.write(struct.pack("<II", VOLUME_VERSION, FLAG_RELAXED if relaxed else 0))
        f.write(struct.pack("<3II", *dims, count))
        if relaxed:
            f.write(np.asarray(volume.values, dtype="<f4").tobytes())
        else:
            if count > 256:
                raise ValueError("u8 volumes hold at most 256 labels")
            f.write(np.asarray(volume.labels, dtype=np.uint8).tobytes())


def read_volume(path: PathLike, grid: VoxelGrid = None):
    """Inverse of :func:`write_volume`; ``grid`` supplies origin and voxel size."""
    data = Path(path).read_bytes()
    if len(data) < 32 or data[:8] != VOLUME_MAGIC:
        raise FormatError(f"{path}: bad volume header")
    version, flags = struct.unpack_from("<II", data, 8)
    if version != VOLUME_VERSION:
        raise FormatError(f"{path}: unsupported volume version {version}")
    dx, dy, dz, count = struct.unpack_from("<3II", data, 16)
    dims = (dx, dy, dz)
    if grid is None:
        grid = VoxelGrid(dims)
    elif tuple(grid.dims) != dims:
        raise FormatError(f"{path}: volume dims {dims} do not match grid {grid.dims}")
    V = dx * dy * dz
    payload = data[32:]
    if flags & FLAG_RELAXED:
        if len(payload) != 4 * V * count:
            raise FormatError(f"{path}: payload size mismatch")
        values = np.frombuffer(payload, dtype="<f4").reshape(V, count).astype(np.float64)
        return LabelField(grid, values)
    if len(payload) != V:
        raise FormatError(f"{path}: payload size mismatch")
    labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= count:
        raise FormatError(f"{path}: label value out of range")
    return BinaryLabeling(grid, labels, count)


# -- traces and meshes -----------------------------------------------------

TRACE_COLUMNS = ("outer_step", "accepted", "feasible_energy", "surrogate_energy", "gap", "wall_ms")


def write_trace(path: PathLike, rows: Iterable) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_COLUMNS)
        for row in rows:
            d = asdict(row) if not isinstance(row, dict) else row
            w.writerow([d["outer_step"], int(bool(d["accepted"])), repr(float(d["feasible_energy"])),
                        repr(float(d["surrogate_energy"])),
                        "" if d["gap"] is None else repr(float(d["gap"])),
                        f"{float(d['wall_ms']):.3f}"])


def read_trace(path: PathLike) -> list:
    out = []
    with open(path, newline="") as f:
        for d in csv.DictReader(f):
            out.append({
                "outer_step": int(d["outer_step"]),
                "accepted": d["accepted"] == "1",
                "feasible_energy": float(d["feasible_energy"]),
                "surrogate_energy": float(d["surrogate_energy"]),
                "gap": None if d["gap"] == "" else float(d["gap"]),
                "wall_ms": float(d["wall_ms"]),
            })
    return out


def write_ply(path: PathLike, vertices: np.ndarray, faces: np.ndarray, colors: np.ndarray) -> None:
    """Binary little-endian PLY with per-vertex RGB and triangle faces."""
    vertices = np.asarray(vertices, dtype="<f4").reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    faces = np.asarray(faces, dtype="<i4").reshape(-1, 3)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        f"element face {len(faces)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    vdt = np.dtype([("p", "<f4", 3), ("c", "u1", 3)])
    v = np.empty(len(vertices), dtype=vdt)
    v["p"], v["c"] = vertices, colors
    fdt = np.dtype([("n", "u1"), ("i", "<i4", 3)])
    fa = np.empty(len(faces), dtype=fdt)
    fa["n"], fa["i"] = 3, faces
    with open(path, "wb") as f:
        f.write(header.encode())
        f.write(v.tobytes())
        f.write(fa.tobytes())


def read_ply(path: PathLike):
    """Read back a mesh written by :func:`write_ply`."""
    data = Path(path).read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode().splitlines()
    if header[:2] != ["ply", "format binary_little_endian 1.0"]:
        raise FormatError(f"{path}: unsupported PLY")
    nv = nf = 0
    for line in header:
        if line.startswith("element vertex"):
            nv = int(line.split()[2])
        elif line.startswith("element face"):
            nf = int(line.split()[2])
    vdt = np.dtype([("p", "<f4", 3), ("c", "u1", 3)])
    fdt = np.dtype([("n", "u1"), ("i", "<i4", 3)])
    v = np.frombuffer(data, dtype=vdt, count=nv, offset=end)
    f = np.frombuffer(data, dtype=fdt, count=nf, offset=end + nv * vdt.itemsize)
    return v["p"].astype(float), f["i"].astype(np.int64), v["c"].copy()
