"""File formats: ASCII OBJ/PLY meshes, binary PGM/PPM images, raw float
rasters for depth maps and test dumps, and camera JSON.

Mesh writers emit coordinates with 9 significant digits. Raster containers
share a 16-byte header (8-byte magic, uint32 width, uint32 height, little
endian) followed by row-major samples.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .evolve import CameraIntrinsics, CameraPair, DepthMap
from .mesh import TriangleMesh
from .similarity import ScalarImage

DEPTH_MAGIC = b"DMAPF32\x00"
DUMP_MAGIC = b"DUMPF64\x00"

# Rec.601 luminance weights for PPM conversion
_LUMA = np.array([0.299, 0.587, 0.114])


class FileFormatError(Exception):
    """Unreadable or structurally invalid file."""


# ---------------------------------------------------------------- meshes

def write_obj(path, mesh: TriangleMesh) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    verts = []
    faces = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0] not in ("v", "f"):
            continue
        try:
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FileFormatError(
                        f"{path}:{lineno}: vertex record needs 3 coordinates"
                    )
                verts.append([float(x) for x in parts[1:4]])
            else:
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise FileFormatError(
                        f"{path}:{lineno}: only triangular faces are supported"
                    )
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
        except (ValueError, IndexError) as exc:
            raise FileFormatError(f"{path}:{lineno}: malformed record") from exc
    if not verts:
        raise FileFormatError(f"{path}: no vertex records")
    return TriangleMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))


def write_ply(path, mesh: TriangleMesh) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for v in mesh.vertices:
        lines.append(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> TriangleMesh:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip() != "ply":
        raise FileFormatError(f"{path}: missing ply magic")
    n_verts = n_faces = 0
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise FileFormatError(f"{path}: only ascii PLY is supported")
        if parts[0] == "element":
            if parts[1] == "vertex":
                n_verts = int(parts[2])
            elif parts[1] == "face":
                n_faces = int(parts[2])
        if parts[0] == "end_header":
            body_at = i + 1
            break
    if body_at is None:
        raise FileFormatError(f"{path}: unterminated header")
    body = [ln.split() for ln in lines[body_at:] if ln.strip()]
    if len(body) < n_verts + n_faces:
        raise FileFormatError(f"{path}: truncated body")
    try:
        verts = np.asarray([[float(x) for x in row[:3]] for row in body[:n_verts]])
        faces = np.asarray(
            [[int(x) for x in row[1:4]] for row in body[n_verts:n_verts + n_faces]],
            dtype=np.int64,
        )
    except ValueError as exc:
        raise FileFormatError(f"{path}: malformed body") from exc
    return TriangleMesh(verts, faces)


# ---------------------------------------------------------------- images

def _read_netpbm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace/comment-delimited header tokens and body offset."""
    tokens = []
    i = 0
    while len(tokens) < count and i < len(raw):
        c = raw[i:i + 1]
        if c == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace() and raw[j:j + 1] != b"#":
                j += 1
            tokens.append(raw[i:j])
            i = j
    if len(tokens) < count:
        raise FileFormatError("truncated netpbm header")
    return tokens, i + 1  # single whitespace after maxval precedes the body


def read_pgm(path) -> ScalarImage:
    """Binary PGM (P5), 8- or 16-bit, normalized to [0, 1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    tokens, off = _read_netpbm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise FileFormatError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in tokens[1:4])
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * dtype.itemsize
    body = raw[off:off + need]
    if len(body) != need:
        raise FileFormatError(f"{path}: truncated pixel data")
    data = np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.float64)
    return ScalarImage(data / maxval)


def write_pgm(path, image: ScalarImage, maxval: int = 65535) -> None:
    data = np.clip(image.data, 0.0, 1.0)
    q = np.rint(data * maxval).astype(np.uint32)
    header = f"P5\n{image.width} {image.height}\n{maxval}\n".encode()
    if maxval > 255:
        body = q.astype(">u2").tobytes()
    else:
        body = q.astype(np.uint8).tobytes()
    Path(path).write_bytes(header + body)


def read_ppm(path) -> ScalarImage:
    """Binary PPM (P6) converted to luminance."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    tokens, off = _read_netpbm_tokens(raw, 4)
    if tokens[0] != b"P6":
        raise FileFormatError(f"{path}: not a binary PPM (P6)")
    w, h, maxval = (int(t) for t in tokens[1:4])
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * 3 * dtype.itemsize
    body = raw[off:off + need]
    if len(body) != need:
        raise FileFormatError(f"{path}: truncated pixel data")
    rgb = np.frombuffer(body, dtype=dtype).reshape(h, w, 3).astype(np.float64)
    return ScalarImage((rgb @ _LUMA) / maxval)


# ---------------------------------------------------------------- rasters

def _write_raster(path, magic: bytes, arr: np.ndarray, dtype) -> None:
    h, w = arr.shape
    header = magic + np.uint32(w).tobytes() + np.uint32(h).tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_raster(path, magic: bytes, dtype) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:8] != magic:
        raise FileFormatError(f"{path}: bad raster magic")
    w = int(np.frombuffer(raw[8:12], dtype=np.uint32)[0])
    h = int(np.frombuffer(raw[12:16], dtype=np.uint32)[0])
    need = w * h * np.dtype(dtype).itemsize
    if len(raw) != 16 + need:
        raise FileFormatError(f"{path}: raster size mismatch")
    return np.frombuffer(raw[16:], dtype=dtype).reshape(h, w)


def write_depth(path, depth: DepthMap) -> None:
    _write_raster(path, DEPTH_MAGIC, depth.depth, "<f4")


def read_depth(path, reference_view: str = "ref") -> DepthMap:
    return DepthMap(
        _read_raster(path, DEPTH_MAGIC, "<f4").astype(np.float64), reference_view
    )


def write_float_dump(path, arr: np.ndarray) -> None:
    """Raw 64-bit dump for test oracles (exact round trip)."""
    _write_raster(path, DUMP_MAGIC, np.asarray(arr, dtype=np.float64), "<f8")


def read_float_dump(path) -> np.ndarray:
    return _read_raster(path, DUMP_MAGIC, "<f8").astype(np.float64)


# ---------------------------------------------------------------- cameras

def _intrinsics_dict(K: CameraIntrinsics, R: np.ndarray, t: np.ndarray) -> dict:
    return {
        "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
        "R": [float(x) for x in np.asarray(R).ravel()],
        "t": [float(x) for x in np.asarray(t).ravel()],
    }


def write_cameras(path, cams: CameraPair) -> None:
    doc = {
        "reference": _intrinsics_dict(cams.reference, np.eye(3), np.zeros(3)),
        "auxiliary": _intrinsics_dict(cams.auxiliary, cams.rotation, cams.translation),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_cameras(path) -> CameraPair:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"cannot read cameras from {path}: {exc}") from exc
    try:
        ref = doc["reference"]
        aux = doc["auxiliary"]
        return CameraPair(
            reference=CameraIntrinsics(ref["fx"], ref["fy"], ref["cx"], ref["cy"]),
            auxiliary=CameraIntrinsics(aux["fx"], aux["fy"], aux["cx"], aux["cy"]),
            rotation=np.asarray(aux["R"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(aux["t"], dtype=np.float64),
        )
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: malformed camera JSON") from exc
