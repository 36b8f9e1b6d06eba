"""Binary snapshot files.

Layout (all little endian)::

    magic     4s   b"PFTG"
    version   u16
    dim       u16
    n_x, n_y  u32 u32
    h_x, h_y  f64 f64
    t, eps    f64 f64
    phi, sigma, mu   n_x*n_y f64 each, row-major (x fastest)

The header is 48 bytes.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .solver import State

MAGIC = b"PFTG"
VERSION = 1
HEADER = struct.Struct("<4sHHII4d")
_F64 = np.dtype("<f8")


class SnapshotError(ValueError):
    pass


@dataclass
class Snapshot:
    grid: Grid
    epsilon: float
    state: State


def write_snapshot(path, state: State, grid: Grid, epsilon: float) -> None:
    head = HEADER.pack(MAGIC, VERSION, grid.dim, grid.n_x, grid.n_y,
                       grid.h_x, grid.h_y, float(state.t), float(epsilon))
    tmp = f"{path}.part"
    with open(tmp, "wb") as fh:
        fh.write(head)
        for f in (state.phi, state.sigma, state.mu):
            fh.write(np.ascontiguousarray(f, dtype=_F64).tobytes())
    os.replace(tmp, path)


def read_snapshot(path) -> Snapshot:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, version, dim, nx, ny, hx, hy, t, eps = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported version {version}")
    try:
        grid = Grid(nx, ny, hx, hy, dim=dim)
    except ValueError as exc:
        raise SnapshotError(f"{path}: {exc}") from None
    n = nx * ny
    if len(raw) != HEADER.size + 3 * 8 * n:
        raise SnapshotError(f"{path}: expected {HEADER.size + 24 * n} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype=_F64, offset=HEADER.size).astype(float)
    phi, sigma, mu = (data[k * n:(k + 1) * n].reshape(grid.shape) for k in range(3))
    return Snapshot(grid, eps, State(t, phi, sigma, mu))
