"""Persistence: canonical binary field files, history CSV, mask JSON, VTK.

The field format is self-describing and bit-exact (golden tests round-trip
it): magic, version, refinement level, cell counts, extents, then row-major
(x-fastest) nodal values as little-endian float64. The legacy-VTK export is
for viewers only and is not read back.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .grid import ScalarField, StructuredGrid
from .levelset import LevelSet

FIELD_MAGIC = b"PLUMEFLD"
FIELD_VERSION = 1
_HEADER = struct.Struct("<8sIIIIdd")  # magic, version, level, nx, ny, lx, ly


class FieldFormatError(ValueError):
    """Unreadable or inconsistent field file."""


def write_field(path, field) -> None:
    """Write a ScalarField (or a LevelSet's field) to the binary format."""
    if isinstance(field, LevelSet):
        field = field.field
    g = field.grid
    payload = np.ascontiguousarray(field.coeffs, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, g.level, g.nx, g.ny, g.lx, g.ly))
        fh.write(payload.tobytes())


def read_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FieldFormatError(f"{path}: truncated header")
        magic, version, level, nx, ny, lx, ly = _HEADER.unpack(header)
        if magic != FIELD_MAGIC:
            raise FieldFormatError(f"{path}: bad magic {magic!r}")
        if version != FIELD_VERSION:
            raise FieldFormatError(f"{path}: unsupported version {version}")
        grid = StructuredGrid(lx, ly, nx, ny, level)
        data = fh.read()
    values = np.frombuffer(data, dtype="<f8")
    if values.size != grid.n_nodes:
        raise FieldFormatError(
            f"{path}: expected {grid.n_nodes} values, found {values.size}"
        )
    return ScalarField(grid, values.astype(float))


def read_levelset(path) -> LevelSet:
    return LevelSet(read_field(path))


def write_mask(path, layout) -> None:
    """Sensor layout as JSON; `layout` None means full observation."""
    if layout is None:
        doc = {"type": "full"}
    else:
        doc = {
            "type": "patches",
            "rects": [[r.x0, r.x1, r.y0, r.y1] for r in layout.rects],
            "coverage": layout.coverage,
        }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_mask(path):
    from .synth import Rectangle, SensorLayout

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("type") == "full":
        return None
    return SensorLayout(
        tuple(Rectangle(*r) for r in doc["rects"]), float(doc.get("coverage", 0.0))
    )


HISTORY_COLUMNS = (
    "stage",
    "iter",
    "objective",
    "residual_or_psi_norm",
    "inner_iters",
    "components",
    "pde_solves",
)


def write_history(path, relax_history=(), shape_history=()) -> None:
    """Stage histories as CSV with fixed column order; floats use repr
    (shortest round-trip) so identical runs produce identical bytes."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in relax_history:
            writer.writerow(
                [
                    "relax",
                    rec.iteration,
                    repr(rec.objective),
                    repr(rec.step_norm),
                    rec.minres_iterations,
                    "",
                    rec.pde_solves,
                ]
            )
        for rec in shape_history:
            writer.writerow(
                [
                    "shape",
                    rec.iteration,
                    repr(rec.objective),
                    repr(rec.psi_norm),
                    0,
                    rec.components,
                    rec.pde_solves,
                ]
            )


def write_vtk(path, field, name: str = "field") -> None:
    """Legacy-VTK structured-points export of a nodal field (viewer food)."""
    if isinstance(field, LevelSet):
        field = field.field
    g = field.grid
    lines = [
        "# vtk DataFile Version 3.0",
        name,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {g.nx + 1} {g.ny + 1} 1",
        "ORIGIN 0 0 0",
        f"SPACING {g.dx!r} {g.dy!r} 1",
        f"POINT_DATA {g.n_nodes}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    lines.extend(repr(v) for v in field.coeffs)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
