"""Binary little-endian PLY export/import of Gaussian maps."""
from __future__ import annotations

import numpy as np

from ..core import GaussianMap
from .files import write_bytes_atomic
from .trajectory import FormatError

PLY_PROPERTIES = [
    ("x", "double", "<f8"),
    ("y", "double", "<f8"),
    ("z", "double", "<f8"),
    ("red", "float", "<f4"),
    ("green", "float", "<f4"),
    ("blue", "float", "<f4"),
    ("radius", "double", "<f8"),
    ("opacity", "float", "<f4"),
]
VERTEX_DTYPE = np.dtype([(name, code) for name, _, code in PLY_PROPERTIES])


def map_to_ply_bytes(gmap: GaussianMap) -> bytes:
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(gmap)}"]
    header += [f"property {ptype} {name}" for name, ptype, _ in PLY_PROPERTIES]
    header.append("end_header")
    data = np.empty(len(gmap), dtype=VERTEX_DTYPE)
    data["x"], data["y"], data["z"] = gmap.centers.T
    data["red"], data["green"], data["blue"] = gmap.colors.T
    data["radius"] = gmap.radii
    data["opacity"] = gmap.opacities
    return ("\n".join(header) + "\n").encode("ascii") + data.tobytes()


def export_map_ply(gmap: GaussianMap, path) -> None:
    write_bytes_atomic(path, map_to_ply_bytes(gmap))


def map_from_ply_bytes(raw: bytes, source: str = "<bytes>") -> GaussianMap:
    marker = b"end_header\n"
    end = raw.find(marker)
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{source}: not a PLY file (bad magic or missing end_header)")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()[1:]
    lines = [ln for ln in lines if ln and not ln.startswith(("comment", "obj_info"))]
    if not lines or lines[0] != "format binary_little_endian 1.0":
        raise FormatError(f"{source}: expected 'format binary_little_endian 1.0'")
    count = None
    props = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "element":
            if parts[1] != "vertex" or count is not None:
                raise FormatError(f"{source}: unexpected element {ln!r}")
            count = int(parts[2])
        elif parts[0] == "property":
            if len(parts) != 3:
                raise FormatError(f"{source}: unsupported property line {ln!r}")
            props.append((parts[2], parts[1]))
        else:
            raise FormatError(f"{source}: unexpected header line {ln!r}")
    if count is None:
        raise FormatError(f"{source}: no vertex element")
    expected = [(name, ptype) for name, ptype, _ in PLY_PROPERTIES]
    if props != expected:
        raise FormatError(f"{source}: property mismatch, got {props}, expected {expected}")
    payload = raw[end + len(marker):]
    need = count * VERTEX_DTYPE.itemsize
    if len(payload) < need:
        raise FormatError(f"{source}: truncated payload ({len(payload)} of {need} bytes)")
    data = np.frombuffer(payload[:need], dtype=VERTEX_DTYPE)
    centers = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.float64)
    return GaussianMap(centers, np.clip(colors, 0.0, 1.0), data["radius"].astype(np.float64),
                       np.clip(data["opacity"].astype(np.float64), 0.0, 1.0))


def import_map_ply(path) -> GaussianMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    return map_from_ply_bytes(raw, str(path))
