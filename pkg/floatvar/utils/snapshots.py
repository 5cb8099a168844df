"""
Binary field snapshots and the CSV writers shared by the pipelines.

Snapshot layout, little-endian: b"PEDA", u32 version, u32 nx, ny, nz,
f64 a, then nx*ny*nz f64 values with x varying fastest, then y, then z.
A state is three files ``<prefix>_u.peda``, ``<prefix>_v.peda`` and
``<prefix>_theta.peda``.
"""
import csv
import struct
from pathlib import Path

import numpy as np

from floatvar.utils.grid import Grid, GridException, StateField

MAGIC = b"PEDA"
VERSION = 1
HEADER = struct.Struct("<4sIIIId")
COMPONENTS = ("u", "v", "theta")


class SnapshotException(Exception):
    pass


def component_path(prefix, name):
    prefix = Path(prefix)
    return prefix.with_name(f"{prefix.name}_{name}.peda")


def write_field(path, grid, values):
    values = np.asarray(values, dtype="<f8")
    if values.shape != grid.shape:
        raise SnapshotException(f"field shape {values.shape} does not match grid {grid.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, grid.nx, grid.ny, grid.nz, grid.a))
        fh.write(values.ravel(order="F").tobytes())


def read_field(path):
    path = Path(path)
    if not path.exists():
        raise SnapshotException(f"missing input file {path}")
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise SnapshotException(f"{path}: truncated header")
    magic, version, nx, ny, nz, a = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotException(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotException(f"{path}: unsupported version {version}")
    try:
        grid = Grid(nx, ny, nz, a)
    except GridException as exc:
        raise SnapshotException(f"{path}: {exc}")
    count = nx * ny * nz
    payload = data[HEADER.size:]
    if len(payload) != 8 * count:
        raise SnapshotException(f"{path}: expected {count} values, found {len(payload) // 8}")
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape, order="F").astype(float)
    if not np.all(np.isfinite(values)):
        raise SnapshotException(f"{path}: non-finite values")
    return grid, values


def write_state(prefix, X):
    for name, values in zip(COMPONENTS, X.components):
        write_field(component_path(prefix, name), X.grid, values)


def read_state(prefix):
    fields = [read_field(component_path(prefix, name)) for name in COMPONENTS]
    grid = fields[0][0]
    for name, (other, _) in zip(COMPONENTS, fields):
        if other != grid:
            raise SnapshotException(
                f"shape mismatch in {prefix}: {name} is {other.shape} on a={other.a}, u is {grid.shape} on a={grid.a}"
            )
    X = StateField(grid, *(values for _, values in fields))
    try:
        return X.check()
    except GridException as exc:
        raise SnapshotException(f"{prefix}: {exc}")


def format_value(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path, header):
    path = Path(path)
    if not path.exists():
        raise SnapshotException(f"missing input file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        found = next(reader, None)
        if found is None or tuple(found) != tuple(header):
            raise SnapshotException(f"{path}: expected header {','.join(header)}, found {found}")
        return [row for row in reader if row]
