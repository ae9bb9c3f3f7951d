"""ASCII PLY, feature CSV and ground-truth JSON readers/writers."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import PointCloud, RigidTransform
from .errors import DimensionMismatch, ParseError

__all__ = [
    "read_ply",
    "write_ply",
    "read_features",
    "write_features",
    "read_transform",
    "write_transform",
    "atomic_write_text",
]

_PLY_SCALARS = {
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double",
    "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64",
}


def atomic_write_text(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_ply(path) -> PointCloud:
    """Read the vertex element of an ASCII PLY file.

    Requires float-valued x, y, z properties. An ``overlap`` vertex property,
    when present, becomes the cloud's overlap scores.
    """
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)

    elements = []  # (name, count, [props])
    fmt_seen = False
    end = None
    for no, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 3 or tok[1] != "ascii":
                raise ParseError(f"only ASCII PLY is supported, got {' '.join(tok[1:])!r}", no)
            fmt_seen = True
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError("malformed element line", no)
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"bad element count {tok[2]!r}", no) from None
            elements.append((tok[1], count, []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", no)
            if len(tok) >= 2 and tok[1] == "list":
                elements[-1][2].append(("list", tok[-1]))
            elif len(tok) == 3 and tok[1] in _PLY_SCALARS:
                elements[-1][2].append((tok[1], tok[2]))
            else:
                raise ParseError(f"malformed property line {raw.strip()!r}", no)
        elif tok[0] == "end_header":
            end = no
            break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", no)
    if end is None:
        raise ParseError("missing end_header", len(lines))
    if not fmt_seen:
        raise ParseError("missing format line", end)

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise ParseError("no vertex element", end)
    names = [p[1] for p in vertex[2]]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(f"vertex element lacks property '{axis}'", end)
    if any(kind == "list" for kind, _ in vertex[2]):
        raise ParseError("list properties on vertices are not supported", end)
    if vertex[1] < 1:
        raise ParseError("vertex list is empty", end)

    line_no = end  # lines[line_no] is the first body line (0-based == 1-based + ...)
    body_start = end
    # skip elements that precede the vertex block
    for name, count, _ in elements:
        if name == "vertex":
            break
        body_start += count
    rows = []
    for k in range(vertex[1]):
        line_no = body_start + k
        if line_no >= len(lines):
            raise ParseError(f"expected {vertex[1]} vertices, file ended after {k}", line_no)
        tok = lines[line_no].split()
        if len(tok) < len(names):
            raise ParseError(f"expected {len(names)} values, got {len(tok)}", line_no + 1)
        try:
            rows.append([float(v) for v in tok[: len(names)]])
        except ValueError:
            raise ParseError(f"non-numeric vertex value in {lines[line_no]!r}", line_no + 1) from None
    data = np.asarray(rows, dtype=np.float64)
    pts = data[:, [names.index("x"), names.index("y"), names.index("z")]]
    if not np.all(np.isfinite(pts)):
        raise ParseError("non-finite coordinate", body_start + 1)
    overlap = data[:, names.index("overlap")] if "overlap" in names else None
    try:
        return PointCloud(pts, None, overlap)
    except ValueError as exc:
        raise ParseError(str(exc), body_start + 1) from None


def write_ply(cloud: PointCloud, path):
    """ASCII PLY with 9 significant digits per coordinate."""
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {cloud.n_points}",
        "property double x",
        "property double y",
        "property double z",
    ]
    cols = [cloud.points]
    if cloud.overlap_scores is not None:
        header.append("property double overlap")
        cols.append(cloud.overlap_scores[:, None])
    header.append("end_header")
    data = np.hstack(cols)
    body = "\n".join(" ".join(f"{v:.9g}" for v in row) for row in data)
    atomic_write_text(path, "\n".join(header) + "\n" + body + "\n")


def read_features(path, n_points=None):
    """Headered CSV: first line ``n,d``, then n rows of d values."""
    with open(path, "r") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    if not lines:
        raise ParseError("empty features file", 1)
    try:
        n, d = (int(v) for v in lines[0].split(","))
    except ValueError:
        raise ParseError(f"header must be 'n,d', got {lines[0]!r}", 1) from None
    if n < 1 or d < 1:
        raise ParseError("n and d must be positive", 1)
    body = [ln for ln in lines[1:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != n:
        raise DimensionMismatch(f"header declares {n} rows, file has {len(body)}")
    out = np.empty((n, d))
    for i, ln in enumerate(body):
        parts = ln.split(",")
        if len(parts) != d:
            raise ParseError(f"expected {d} values, got {len(parts)}", i + 2)
        try:
            out[i] = [float(v) for v in parts]
        except ValueError:
            raise ParseError(f"non-numeric value in {ln!r}", i + 2) from None
    if not np.all(np.isfinite(out)):
        raise ParseError("non-finite feature value")
    if n_points is not None and n != n_points:
        raise DimensionMismatch(f"{n} feature rows for {n_points} points")
    return out


def write_features(features, path):
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    lines = [f"{F.shape[0]},{F.shape[1]}"]
    lines += [",".join(f"{v:.17g}" for v in row) for row in F]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_transform(path) -> RigidTransform:
    """Ground truth JSON: {"rotation": 9 row-major floats, "translation": 3 floats}."""
    try:
        with open(path, "r") as fh:
            d = json.load(fh)
        return RigidTransform.from_dict(d)
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"bad transform file {path}: {exc}") from None


def write_transform(xf: RigidTransform, path):
    atomic_write_text(path, json.dumps(xf.to_dict(), indent=2) + "\n")
