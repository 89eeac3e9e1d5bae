"""Minimal PLY reader/writer for vertex clouds (ASCII and binary little-endian)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    pass


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise PlyError("malformed PLY header at byte 0: missing 'ply' magic")
    offset = 0
    fmt = None
    elements: list[dict] = []
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise PlyError(f"malformed PLY header at byte {offset}: no end_header")
        line = data[offset:end].decode("ascii", errors="replace").strip()
        words = line.split()
        at = offset
        offset = end + 1
        if not words or words[0] in ("ply", "comment", "obj_info"):
            continue
        if words[0] == "end_header":
            break
        if words[0] == "format":
            if len(words) != 3 or words[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"malformed PLY header at byte {at}: unsupported format {line!r}")
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyError(f"malformed PLY header at byte {at}: bad element line {line!r}")
            elements.append({"name": words[1], "count": int(words[2]), "props": []})
        elif words[0] == "property":
            if not elements:
                raise PlyError(f"malformed PLY header at byte {at}: property before element")
            if words[1] == "list":
                if len(words) != 5:
                    raise PlyError(f"malformed PLY header at byte {at}: bad list property {line!r}")
                elements[-1]["props"].append((words[4], None))
            else:
                if len(words) != 3 or words[1] not in _TYPES:
                    raise PlyError(f"malformed PLY header at byte {at}: bad property {line!r}")
                elements[-1]["props"].append((words[2], _TYPES[words[1]]))
        else:
            raise PlyError(f"malformed PLY header at byte {at}: unexpected keyword {words[0]!r}")
    if fmt is None:
        raise PlyError(f"malformed PLY header at byte {offset}: missing format line")
    return fmt, elements, offset


def load_ply(path):
    """Read a vertex cloud; returns ``wsplat.pointfield.PointCloud``."""
    from .pointfield import PointCloud

    path = Path(path)
    data = path.read_bytes()
    fmt, elements, body = _parse_header(data)
    vertex = next((e for e in elements if e["name"] == "vertex"), None)
    if vertex is None:
        raise PlyError(f"{path}: no vertex element")
    names = [p for p, _ in vertex["props"]]
    missing = [axis for axis in "xyz" if axis not in names]
    if missing:
        raise PlyError(
            f"{path}: vertex element lacks property {', '.join(repr(m) for m in missing)} "
            f"(has: {', '.join(names)})"
        )
    if any(t is None for _, t in vertex["props"]):
        raise PlyError(f"{path}: list properties on vertices are not supported")
    n = vertex["count"]

    if fmt == "ascii":
        lines = data[body:].decode("ascii").split("\n")
        skip = 0
        for e in elements:
            if e is vertex:
                break
            skip += e["count"]
        rows = [ln.split() for ln in lines[skip : skip + n]]
        if len(rows) < n or any(len(r) < len(names) for r in rows):
            raise PlyError(f"{path}: truncated ASCII vertex data")
        table = np.array([[float(v) for v in r[: len(names)]] for r in rows], dtype=np.float64)
        columns = {name: table[:, i] for i, name in enumerate(names)}
    else:
        start = body
        for e in elements:
            if e is vertex:
                break
            if any(t is None for _, t in e["props"]):
                raise PlyError(f"{path}: cannot skip list-typed element {e['name']!r}")
            start += e["count"] * sum(np.dtype("<" + t).itemsize for _, t in e["props"])
        dtype = np.dtype([(name, "<" + t) for name, t in vertex["props"]])
        if len(data) < start + n * dtype.itemsize:
            raise PlyError(f"{path}: truncated binary vertex data")
        rec = np.frombuffer(data, dtype=dtype, count=n, offset=start)
        columns = {name: rec[name].astype(np.float64) for name in names}

    positions = np.stack([columns["x"], columns["y"], columns["z"]], axis=1)
    colors = None
    if all(c in columns for c in ("red", "green", "blue")):
        colors = np.stack([columns["red"], columns["green"], columns["blue"]], axis=1)
        kinds = {t for name, t in vertex["props"] if name in ("red", "green", "blue")}
        if kinds <= {"u1"}:
            colors = colors / 255.0
    return PointCloud(positions, colors)


def save_ply(pc, path, binary: bool = True) -> None:
    """Write a PointCloud, or a bare ``(N, 3)`` array (N may be zero)."""
    if isinstance(pc, np.ndarray):
        positions, colors = pc.reshape(-1, 3).astype(np.float64), None
    else:
        positions = np.asarray(pc.positions, dtype=np.float64)
        colors = None if pc.colors is None else np.asarray(pc.colors, dtype=np.float64)
    n = len(positions)
    header = [
        "ply",
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
        f"element vertex {n}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    rgb = None if colors is None else np.round(np.clip(colors, 0, 1) * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if binary:
        fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
        if rgb is not None:
            fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        rec = np.zeros(n, dtype=fields)
        rec["x"], rec["y"], rec["z"] = positions.T
        if rgb is not None:
            rec["red"], rec["green"], rec["blue"] = rgb.T
        path.write_bytes(head + rec.tobytes())
    else:
        lines = []
        for i in range(n):
            row = " ".join(repr(float(v)) for v in positions[i])
            if rgb is not None:
                row += " " + " ".join(str(int(v)) for v in rgb[i])
            lines.append(row)
        path.write_bytes(head + ("\n".join(lines) + "\n").encode("ascii"))
