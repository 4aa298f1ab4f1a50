"""On-disk formats.

* Float maps: grayscale Portable Float Map (``Pf``, little-endian, 32-bit,
  rows stored bottom to top) plus a sibling ``<stem>.valid.pgm`` mask.
* Masks and validity: binary 8-bit PGM (``P5``), 255 = valid.
* Error images: binary PPM (``P6``).
* Point clouds: CSV with header ``x,y,z[,attr...]``, 9 significant digits.
  Values are read back through float32, so 32-bit payloads round-trip exactly.
* Poses: 16 whitespace-separated reals, row-major, one line.
* Intrinsics: ``fx fy cx cy width height`` on one line.
* Confidence stacks: a directory holding ``windows.csv`` (``index,u0,v0,w,h``)
  and one ``patch_<index>.pfm`` per radar point.
* Refiner checkpoints: one header line naming the layer shapes, then the
  parameters as little-endian float64 in declared layer order.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .core import CameraIntrinsics, FloatMap, MapKind, PointCloud, Pose
from .quasidense import ConfidencePatch, ConfidenceStack, Window
from .refine import LAYER_SHAPES, RefinerParams


class FormatError(ValueError):
    pass


def valid_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".valid.pgm")


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 2:
        raise FormatError("only single-channel maps are supported")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


def _read_header_tokens(f, count):
    tokens = []
    while len(tokens) < count:
        line = f.readline()
        if not line:
            raise FormatError("truncated header")
        line = line.split(b"#", 1)[0]
        tokens += line.split()
    return tokens


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag, w, h, scale = _read_header_tokens(f, 4)
        if tag != b"Pf":
            raise FormatError(f"{path}: expected grayscale 'Pf' map, got {tag!r}")
        w, h, scale = int(w), int(h), float(scale)
        dtype = "<f4" if scale < 0 else ">f4"
        buf = f.read(w * h * 4)
    if len(buf) != w * h * 4:
        raise FormatError(f"{path}: payload too short")
    return np.flipud(np.frombuffer(buf, dtype=dtype).reshape(h, w)).astype(np.float32)


def write_pgm(path, mask: np.ndarray) -> None:
    data = np.asarray(mask)
    if data.dtype == bool:
        data = np.where(data, 255, 0)
    data = data.astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(data).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"P5", b"P2"):
            raise FormatError(f"{path}: not a PGM file")
        w, h, maxval = (int(t) for t in _read_header_tokens(f, 3))
        if magic == b"P2":
            data = np.array(f.read().split(), dtype=np.int64)[: w * h]
        elif maxval < 256:
            data = np.frombuffer(f.read(w * h), dtype=np.uint8)
        else:
            data = np.frombuffer(f.read(2 * w * h), dtype=">u2")
    if data.size != w * h:
        raise FormatError(f"{path}: payload too short")
    return data.reshape(h, w)


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 0


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P6":
            raise FormatError(f"{path}: not a binary PPM")
        w, h, _ = (int(t) for t in _read_header_tokens(f, 3))
        return np.frombuffer(f.read(w * h * 3), dtype=np.uint8).reshape(h, w, 3)


def save_map(path, m: FloatMap) -> None:
    write_pfm(path, m.values)
    write_pgm(valid_path(path), m.valid)


def load_map(path, kind: MapKind) -> FloatMap:
    values = read_pfm(path).astype(np.float64)
    vp = valid_path(path)
    if vp.exists():
        valid = read_mask(vp)
        if valid.shape != values.shape:
            raise FormatError(f"{vp}: mask shape {valid.shape} != map shape {values.shape}")
    else:
        valid = np.isfinite(values) & (values != 0)
    return FloatMap(np.where(valid, values, 0.0), valid, kind)


def _fmt9(x: float) -> str:
    return f"{x:.9g}"


def write_cloud(path, cloud: PointCloud) -> None:
    names = list(cloud.attributes)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x", "y", "z"] + names)
        cols = [cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]] + [cloud.attributes[n] for n in names]
        for row in zip(*cols):
            w.writerow([_fmt9(float(v)) for v in row])


def read_cloud(path) -> PointCloud:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:3] != ["x", "y", "z"]:
        raise FormatError(f"{path}: header must start with x,y,z")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    data = data.reshape(-1, len(header)).astype(np.float32).astype(np.float64)
    return PointCloud(data[:, :3], {n: data[:, 3 + i] for i, n in enumerate(header[3:])})


def write_pose(path, pose: Pose) -> None:
    Path(path).write_text(" ".join(repr(float(v)) for v in pose.matrix.ravel()) + "\n")


def read_pose(path) -> Pose:
    vals = Path(path).read_text().split()
    if len(vals) != 16:
        raise FormatError(f"{path}: expected 16 reals, got {len(vals)}")
    return Pose(np.array([float(v) for v in vals]).reshape(4, 4))


def write_intrinsics(path, K: CameraIntrinsics) -> None:
    Path(path).write_text(f"{K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r} {K.width} {K.height}\n")


def read_intrinsics(path) -> CameraIntrinsics:
    vals = Path(path).read_text().split()
    if len(vals) != 6:
        raise FormatError(f"{path}: expected 'fx fy cx cy width height'")
    fx, fy, cx, cy = (float(v) for v in vals[:4])
    return CameraIntrinsics(fx, fy, cx, cy, int(vals[4]), int(vals[5]))


def write_confidence(directory, stack: ConfidenceStack) -> None:
    directory = ensure_dir(directory)
    with open(directory / "windows.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "u0", "v0", "w", "h"])
        for p in stack.patches:
            w.writerow([p.point_index, *p.window])
            write_pfm(directory / f"patch_{p.point_index}.pfm", p.conf)


def read_confidence(directory, cloud: PointCloud, K: CameraIntrinsics) -> ConfidenceStack:
    directory = Path(directory)
    with open(directory / "windows.csv", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["index", "u0", "v0", "w", "h"]:
        raise FormatError(f"{directory / 'windows.csv'}: header must be index,u0,v0,w,h")
    patches = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            idx, u0, v0, w, h = (int(v) for v in row)
        except ValueError as exc:
            raise FormatError(f"{directory / 'windows.csv'}:{lineno}: {exc}") from exc
        conf = read_pfm(directory / f"patch_{idx}.pfm").astype(np.float64)
        patches.append(ConfidencePatch(idx, Window(u0, v0, w, h), conf))
    return ConfidenceStack(K.width, K.height, patches, cloud)


def _checkpoint_header() -> str:
    parts = []
    for k, shape in enumerate(LAYER_SHAPES):
        parts.append(f"w{k}:" + "x".join(map(str, shape)))
        parts.append(f"b{k}:{shape[0]}")
    return "refiner-f64le " + " ".join(parts)


def save_checkpoint(path, params: RefinerParams) -> None:
    with open(path, "wb") as f:
        f.write((_checkpoint_header() + "\n").encode("ascii"))
        f.write(params.flat().astype("<f8").tobytes())


def load_checkpoint(path) -> RefinerParams:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", "replace").strip()
        payload = f.read()
    if header != _checkpoint_header():
        raise FormatError(f"{path}: unexpected checkpoint header {header!r}")
    if len(payload) != 8 * RefinerParams.size():
        raise FormatError(f"{path}: expected {RefinerParams.size()} parameters")
    return RefinerParams.from_flat(np.frombuffer(payload, dtype="<f8"))


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"directory not writable: {path}")
    return path
